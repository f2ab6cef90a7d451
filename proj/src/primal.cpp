#include "skemb/primal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "skemb/error.hpp"

namespace skemb {

namespace {

constexpr double kFlowMassTol = 1e-9;

std::vector<double> initial_dense(const Lattice& lat, const DiscreteMeasure* initial) {
    std::vector<double> init(static_cast<std::size_t>(lat.levels()), 0.0);
    if (initial == nullptr) {
        init[static_cast<std::size_t>(lat.level_index(0))] = 1.0;
    } else {
        init = initial->dense(lat);
    }
    return init;
}

}  // namespace

StoppingRule make_rule(const Lattice& lat, const std::function<double(int k, int j)>& f) {
    StoppingRule rule;
    rule.a.assign(lat.node_count(), 1.0);
    for (int k = 0; k <= lat.horizon(); ++k) {
        for (int j = lat.j_min(); j <= lat.j_max(); ++j) {
            if (k == lat.horizon() || lat.is_boundary(j)) continue;
            const double a = f(k, j);
            if (!(a >= 0.0 && a <= 1.0)) {
                std::ostringstream os;
                os << "stopping probability " << a << " at (k=" << k << ", j=" << j
                   << ") is outside [0, 1]";
                throw InvalidInput(os.str());
            }
            rule.a[lat.node(k, j)] = a;
        }
    }
    return rule;
}

FlowSolution evaluate_rule(const StoppingRule& rule, const MarkovReward& G, const Lattice& lat,
                           const DiscreteMeasure* initial) {
    if (rule.a.size() != lat.node_count()) {
        throw InvalidInput("stopping rule does not match the lattice");
    }
    FlowSolution fs;
    fs.m.assign(lat.node_count(), 0.0);
    fs.q.assign(lat.node_count(), 0.0);
    const std::vector<double> init = initial_dense(lat, initial);
    for (int j = lat.j_min(); j <= lat.j_max(); ++j) {
        fs.m[lat.node(0, j)] = init[static_cast<std::size_t>(lat.level_index(j))];
    }
    std::vector<double> embedded(static_cast<std::size_t>(lat.levels()), 0.0);
    const int K = lat.horizon();
    for (int k = 0; k <= K; ++k) {
        for (int j = lat.j_min(); j <= lat.j_max(); ++j) {
            const std::size_t n = lat.node(k, j);
            const double m = fs.m[n];
            if (m == 0.0) continue;
            const bool forced = k == K || lat.is_boundary(j);
            const double a = forced ? 1.0 : rule.a[n];
            const double q = a * m;
            fs.q[n] = q;
            embedded[static_cast<std::size_t>(lat.level_index(j))] += q;
            fs.value += q * G(k, j);
            fs.mean_time += q * lat.t(k);
            const double go = m - q;
            if (go > 0.0) {
                fs.m[lat.node(k + 1, j - 1)] += 0.5 * go;
                fs.m[lat.node(k + 1, j + 1)] += 0.5 * go;
            }
        }
    }
    fs.embedded = DiscreteMeasure::from_dense(lat, embedded, false, kFlowMassTol);
    return fs;
}

StoppingRule rule_from_flow(const FlowSolution& fs, const Lattice& lat) {
    StoppingRule rule;
    rule.a.assign(lat.node_count(), 1.0);
    for (std::size_t n = 0; n < rule.a.size(); ++n) {
        if (fs.m[n] > 0.0) rule.a[n] = std::clamp(fs.q[n] / fs.m[n], 0.0, 1.0);
    }
    return rule;
}

std::vector<char> flow_support(const Lattice& lat, const DiscreteMeasure* initial) {
    std::vector<char> s(lat.node_count(), 0);
    const std::vector<double> init = initial_dense(lat, initial);
    for (int j = lat.j_min(); j <= lat.j_max(); ++j) {
        if (init[static_cast<std::size_t>(lat.level_index(j))] > 0.0) s[lat.node(0, j)] = 1;
    }
    for (int k = 0; k < lat.horizon(); ++k) {
        for (int j = lat.j_min() + 1; j < lat.j_max(); ++j) {
            if (!s[lat.node(k, j)]) continue;
            s[lat.node(k + 1, j - 1)] = 1;
            s[lat.node(k + 1, j + 1)] = 1;
        }
    }
    return s;
}

PrimalLpResult solve_primal_lp(const MarkovReward& G, const DiscreteMeasure& nu_hat,
                               const Lattice& lat, const PrimalOptions& opt,
                               const DiscreteMeasure* initial) {
    if (G.horizon() != lat.horizon() || G.j_min() != lat.j_min() || G.j_max() != lat.j_max()) {
        throw InvalidInput("reward table and lattice differ");
    }
    const std::vector<double> init = initial_dense(lat, initial);
    const std::vector<double> nu = nu_hat.dense(lat);
    const int K = lat.horizon();
    const std::size_t N = lat.node_count();
    const int L = lat.levels();

    // An uncharged level next to another uncharged level (or an uncharged
    // boundary) can hold mass only if some of it survives to the horizon
    // there, so every feasible flow leaves it empty.
    std::vector<char> banned(static_cast<std::size_t>(L), 0);
    for (bool grew = true; grew;) {
        grew = false;
        for (int li = 0; li < L; ++li) {
            const auto u = static_cast<std::size_t>(li);
            if (banned[u] || nu[u] > 0.0) continue;
            const bool edge = li == 0 || li == L - 1;
            const bool next_free = (li > 0 && nu[u - 1] == 0.0) || (li + 1 < L && nu[u + 1] == 0.0);
            const bool next_banned = (li > 0 && banned[u - 1]) || (li + 1 < L && banned[u + 1]);
            if (edge || next_free || next_banned) {
                banned[u] = 1;
                grew = true;
            }
        }
    }
    auto is_banned = [&](int j) { return banned[static_cast<std::size_t>(lat.level_index(j))] != 0; };
    {
        std::vector<int> bad;
        for (int j = lat.j_min(); j <= lat.j_max(); ++j) {
            if (init[static_cast<std::size_t>(lat.level_index(j))] > 0.0 && is_banned(j)) bad.push_back(j);
        }
        if (!bad.empty()) {
            std::ostringstream os;
            os << "target leaves adjacent levels uncharged around the start; walks stay there past any horizon:";
            for (int j : bad) os << ' ' << j;
            throw Infeasible(os.str());
        }
    }
    // Support and continuation sites avoiding banned levels. reach is the
    // mass a node receives when nothing stops; it bounds q and c there.
    std::vector<char> support(N, 0);
    std::vector<char> may_continue(N, 0);
    std::vector<double> reach(N, 0.0);
    for (int j = lat.j_min(); j <= lat.j_max(); ++j) {
        const double p0 = init[static_cast<std::size_t>(lat.level_index(j))];
        if (p0 > 0.0) {
            support[lat.node(0, j)] = 1;
            reach[lat.node(0, j)] = p0;
        }
    }
    for (int k = 0; k < K; ++k) {
        for (int j = lat.j_min() + 1; j < lat.j_max(); ++j) {
            const std::size_t n = lat.node(k, j);
            if (!support[n] || is_banned(j - 1) || is_banned(j + 1)) continue;
            may_continue[n] = 1;
            for (int jj : {j - 1, j + 1}) {
                support[lat.node(k + 1, jj)] = 1;
                reach[lat.node(k + 1, jj)] += 0.5 * reach[n];
            }
        }
    }

    std::vector<char> level_has_node(static_cast<std::size_t>(lat.levels()), 0);
    for (int k = 0; k <= K; ++k) {
        for (int j = lat.j_min(); j <= lat.j_max(); ++j) {
            if (support[lat.node(k, j)]) level_has_node[static_cast<std::size_t>(lat.level_index(j))] = 1;
        }
    }
    {
        std::vector<int> bad;
        for (int j = lat.j_min(); j <= lat.j_max(); ++j) {
            const auto li = static_cast<std::size_t>(lat.level_index(j));
            if (nu[li] > 0.0 && !level_has_node[li]) bad.push_back(j);
        }
        if (!bad.empty()) {
            std::ostringstream os;
            os << "target charges levels the walk cannot reach:";
            for (int j : bad) os << ' ' << j;
            throw Infeasible(os.str());
        }
    }

    LinearProgram lp;
    std::vector<int> node_row(N, -1);
    std::vector<int> row_node;   // node of each node row
    for (int k = 0; k <= K; ++k) {
        for (int j = lat.j_min(); j <= lat.j_max(); ++j) {
            const std::size_t n = lat.node(k, j);
            if (!support[n]) continue;
            node_row[n] = static_cast<int>(row_node.size());
            row_node.push_back(static_cast<int>(n));
        }
    }
    const int n_node_rows = static_cast<int>(row_node.size());
    std::vector<int> level_row(static_cast<std::size_t>(lat.levels()), -1);
    std::vector<int> row_level;
    for (int j = lat.j_min(); j <= lat.j_max(); ++j) {
        const auto li = static_cast<std::size_t>(lat.level_index(j));
        if (!level_has_node[li]) continue;
        level_row[li] = n_node_rows + static_cast<int>(row_level.size());
        row_level.push_back(j);
    }
    lp.rows = n_node_rows + static_cast<int>(row_level.size());
    lp.rhs.assign(static_cast<std::size_t>(lp.rows), 0.0);
    // Variables are q/reach and c/reach, node rows are divided by reach, so
    // every scaled variable lies in [0, 1] however deep the node is.
    for (int j = lat.j_min(); j <= lat.j_max(); ++j) {
        const auto li = static_cast<std::size_t>(lat.level_index(j));
        const std::size_t n0 = lat.node(0, j);
        if (support[n0]) lp.rhs[static_cast<std::size_t>(node_row[n0])] = 1.0;
        if (level_row[li] >= 0) lp.rhs[static_cast<std::size_t>(level_row[li])] = nu[li];
    }

    std::vector<int> q_col(N, -1);
    std::vector<int> c_col(N, -1);
    for (int k = 0; k <= K; ++k) {
        for (int j = lat.j_min(); j <= lat.j_max(); ++j) {
            const std::size_t n = lat.node(k, j);
            if (!support[n]) continue;
            const int r = node_row[n];
            const double p = reach[n];
            q_col[n] = lp.add_column(-G(k, j) * p, {{r, 1.0}, {level_row[static_cast<std::size_t>(lat.level_index(j))], p}});
            if (may_continue[n]) {
                const std::size_t dn = lat.node(k + 1, j - 1);
                const std::size_t up = lat.node(k + 1, j + 1);
                c_col[n] = lp.add_column(0.0, {{r, 1.0},
                                               {node_row[dn], -0.5 * p / reach[dn]},
                                               {node_row[up], -0.5 * p / reach[up]}});
            }
        }
    }

    const LpResult res = solve_lp(lp, opt.simplex);
    if (res.status == LpStatus::Infeasible) {
        std::set<int> levels;
        for (int r : res.infeasible_rows) {
            if (r < n_node_rows) {
                levels.insert(lat.j_min() + static_cast<int>(static_cast<std::size_t>(row_node[r]) %
                                                             static_cast<std::size_t>(lat.levels())));
            } else {
                levels.insert(row_level[static_cast<std::size_t>(r - n_node_rows)]);
            }
        }
        std::ostringstream os;
        os << "target is not embeddable on this lattice (phase-one residual " << res.phase1_residual
           << "); violated levels:";
        for (int j : levels) os << ' ' << j;
        os << "; enlarge the horizon K (smaller eps_residual) or check the target";
        throw Infeasible(os.str());
    }
    if (res.status != LpStatus::Optimal) {
        throw Diverged("simplex stopped with status " + to_string(res.status));
    }

    PrimalLpResult out;
    out.status = res.status;
    out.iterations = res.iterations;
    out.support = support;
    FlowSolution& fs = out.flow;
    fs.m.assign(N, 0.0);
    fs.q.assign(N, 0.0);
    std::vector<double> embedded(static_cast<std::size_t>(lat.levels()), 0.0);
    for (int k = 0; k <= K; ++k) {
        for (int j = lat.j_min(); j <= lat.j_max(); ++j) {
            const std::size_t n = lat.node(k, j);
            if (!support[n]) continue;
            const double q = reach[n] * std::max(0.0, res.x[static_cast<std::size_t>(q_col[n])]);
            const double c = c_col[n] >= 0 ? reach[n] * std::max(0.0, res.x[static_cast<std::size_t>(c_col[n])]) : 0.0;
            fs.q[n] = q;
            fs.m[n] = q + c;
            embedded[static_cast<std::size_t>(lat.level_index(j))] += q;
            fs.value += q * G(k, j);
            fs.mean_time += q * lat.t(k);
        }
    }
    fs.embedded = DiscreteMeasure::from_dense(lat, embedded, false, kFlowMassTol);

    out.flow_dual.assign(N, std::numeric_limits<double>::quiet_NaN());
    out.psi_hat.assign(static_cast<std::size_t>(lat.levels()), std::numeric_limits<double>::infinity());
    for (std::size_t n = 0; n < N; ++n) {
        if (node_row[n] >= 0) out.flow_dual[n] = -res.y[static_cast<std::size_t>(node_row[n])] / reach[n];
    }
    for (std::size_t li = 0; li < level_row.size(); ++li) {
        if (level_row[li] >= 0) out.psi_hat[li] = -res.y[static_cast<std::size_t>(level_row[li])];
    }
    double dual = 0.0;
    for (int j = lat.j_min(); j <= lat.j_max(); ++j) {
        const auto li = static_cast<std::size_t>(lat.level_index(j));
        if (init[li] > 0.0) dual += init[li] * out.flow_dual[lat.node(0, j)];
        if (nu[li] > 0.0) dual += nu[li] * out.psi_hat[li];
    }
    out.dual_value = dual;
    return out;
}

}  // namespace skemb
