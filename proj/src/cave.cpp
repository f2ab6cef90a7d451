#include "skemb/cave.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "skemb/error.hpp"

namespace skemb {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kMassTol = 1e-12;
constexpr double kTieTol = 1e-9;

double time_slack(double t_p) { return 1e-12 * std::max(1.0, t_p); }

std::string node_list(const Lattice& lat, const std::vector<std::size_t>& nodes) {
    std::ostringstream os;
    const auto L = static_cast<std::size_t>(lat.levels());
    const std::size_t shown = std::min<std::size_t>(nodes.size(), 10);
    for (std::size_t i = 0; i < shown; ++i) {
        os << (i ? ", " : "") << "(k=" << nodes[i] / L << ", j=" << lat.j_min() + static_cast<int>(nodes[i] % L)
           << ")";
    }
    if (nodes.size() > shown) os << " and " << nodes.size() - shown << " more";
    return os.str();
}

int grid_index(double t, const Lattice& lat) {
    return std::clamp(static_cast<int>(std::lround(t / lat.dt())), 0, lat.horizon());
}

// Trapezoid sums of h along one level: C[k] = integral from 0 to t_k.
std::vector<double> cumulative(const std::vector<double>& h, int j, const Lattice& lat) {
    std::vector<double> C(static_cast<std::size_t>(lat.horizon()) + 1, 0.0);
    for (int k = 0; k < lat.horizon(); ++k) {
        C[static_cast<std::size_t>(k) + 1] =
            C[static_cast<std::size_t>(k)] + 0.5 * (h[lat.node(k, j)] + h[lat.node(k + 1, j)]) * lat.dt();
    }
    return C;
}

}  // namespace

CaveBarrier regularize(CaveBarrier bar, const Lattice& lat) {
    const int i0 = lat.level_index(0);
    const int L = lat.levels();
    for (int i = i0 + 2; i < L; ++i) {
        bar.l[static_cast<std::size_t>(i)] = std::max(bar.l[static_cast<std::size_t>(i)], bar.l[static_cast<std::size_t>(i - 1)]);
    }
    for (int i = i0 - 2; i >= 0; --i) {
        bar.l[static_cast<std::size_t>(i)] = std::max(bar.l[static_cast<std::size_t>(i)], bar.l[static_cast<std::size_t>(i + 1)]);
    }

    const double eps = time_slack(bar.t_p);
    const int K = lat.horizon();
    auto open = [&](int k, int j) {
        if (k >= K || !lat.is_interior(j)) return false;
        const auto i = static_cast<std::size_t>(lat.level_index(j));
        const double t = lat.t(k);
        return t > bar.l[i] + eps && t < bar.r[i] - eps;
    };
    bar.D.assign(lat.node_count(), 0);
    if (!open(0, 0)) return bar;
    std::vector<std::pair<int, int>> stack{{0, 0}};
    bar.D[lat.node(0, 0)] = 1;
    while (!stack.empty()) {
        const auto [k, j] = stack.back();
        stack.pop_back();
        for (int dk = -1; dk <= 1; ++dk) {
            for (int dj = -1; dj <= 1; ++dj) {
                const int kk = k + dk;
                const int jj = j + dj;
                if (kk < 0 || !lat.on_grid(kk, jj) || !open(kk, jj)) continue;
                char& d = bar.D[lat.node(kk, jj)];
                if (d) continue;
                d = 1;
                stack.emplace_back(kk, jj);
            }
        }
    }
    return bar;
}

ExtractedCave extract_barrier(const FlowSolution& fs, const CaveReward& g, const Lattice& lat) {
    if (fs.q.size() != lat.node_count() || fs.m.size() != lat.node_count()) {
        throw InvalidInput("flow does not match the lattice");
    }
    if (fs.embedded.mass(0) > kMassTol) {
        throw InvalidInput("cave extraction needs a target without mass at 0");
    }
    const int L = lat.levels();
    const int K = lat.horizon();
    const double t_p = g.t_p();
    const double eps = time_slack(t_p);

    ExtractedCave out;
    CaveBarrier& bar = out.barrier;
    bar.t_p = t_p;
    bar.l.assign(static_cast<std::size_t>(L), CaveBarrier::kGap);
    bar.r.assign(static_cast<std::size_t>(L), kInf);
    std::vector<double> nl(static_cast<std::size_t>(L), 0.0), nr(static_cast<std::size_t>(L), 0.0);
    int lo = lat.j_max() + 1;
    int hi = lat.j_min() - 1;
    for (int k = 0; k <= K; ++k) {
        for (int j = lat.j_min(); j <= lat.j_max(); ++j) {
            const std::size_t n = lat.node(k, j);
            const double q = fs.q[n];
            if (q <= kMassTol) continue;
            const auto i = static_cast<std::size_t>(lat.level_index(j));
            lo = std::min(lo, j);
            hi = std::max(hi, j);
            if (lat.t(k) <= t_p + eps) {
                bar.l[i] = std::max(bar.l[i], lat.t(k));
                nl[i] += q;
            } else {
                bar.r[i] = std::min(bar.r[i], lat.t(k));
                nr[i] += q;
            }
            const double a = q / fs.m[n];
            if (a > kTieTol && a < 1.0 - kTieTol) out.randomized.push_back(n);
        }
    }
    if (lo > hi) throw InvalidInput("flow stops no mass");

    std::vector<std::size_t> bad;
    for (int j = lat.j_min(); j <= lat.j_max(); ++j) {
        const auto i = static_cast<std::size_t>(lat.level_index(j));
        const bool outer = j <= lo || j >= hi;
        if (outer) {
            bar.l[i] = t_p;
            bar.r[i] = t_p;
        }
        for (int k = 0; k <= K; ++k) {
            const std::size_t n = lat.node(k, j);
            if (fs.m[n] <= kMassTol) continue;
            const double t = lat.t(k);
            const bool in_stop = outer || t <= bar.l[i] + eps || t >= bar.r[i] - eps;
            if (in_stop && fs.q[n] / fs.m[n] <= kTieTol) bad.push_back(n);
        }
    }
    if (!bad.empty()) {
        throw ShapeViolation("stopping set is not a cave; the walk continues inside the barrier at " +
                             node_list(lat, bad));
    }

    out.split.nu_l = DiscreteMeasure::from_dense(lat, nl, true, kMassTol);
    out.split.nu_r = DiscreteMeasure::from_dense(lat, nr, true, kMassTol);
    bar = regularize(std::move(bar), lat);
    return out;
}

StoppingRule barrier_rule(const CaveBarrier& bar, const Lattice& lat) {
    StoppingRule rule;
    rule.a.assign(lat.node_count(), 1.0);
    for (std::size_t n = 0; n < rule.a.size(); ++n) {
        if (bar.D[n]) rule.a[n] = 0.0;
    }
    return rule;
}

std::vector<double> compute_h(const CaveBarrier& bar, const CaveReward& g, const Lattice& lat) {
    if (bar.D.size() != lat.node_count()) throw InvalidInput("barrier does not match the lattice");
    const int K = lat.horizon();
    std::vector<double> h(lat.node_count(), 0.0);
    for (int k = K; k >= 0; --k) {
        const double d = g.dplus(lat.t(k));
        for (int j = lat.j_min(); j <= lat.j_max(); ++j) {
            const std::size_t n = lat.node(k, j);
            if (k < K && bar.D[n]) {
                h[n] = 0.5 * (h[lat.node(k + 1, j - 1)] + h[lat.node(k + 1, j + 1)]);
            } else {
                h[n] = d;
            }
        }
    }
    return h;
}

VariationalReport check_variational(const CaveBarrier& bar, const SplitMeasure& split,
                                    const CaveReward& g, const Lattice& lat, double tol) {
    const std::vector<double> h = compute_h(bar, g, lat);
    const double T = lat.t(lat.horizon());
    VariationalReport rep;
    rep.tol = tol;
    rep.pass = true;
    bool any_truncated = false;
    for (int j = lat.j_min(); j <= lat.j_max(); ++j) {
        const auto i = static_cast<std::size_t>(lat.level_index(j));
        LevelVerdict lv;
        lv.level = j;
        lv.nu_l = split.nu_l.mass(j);
        lv.nu_r = split.nu_r.mass(j);
        lv.lo = bar.l[i] == CaveBarrier::kGap ? 0.0 : bar.l[i];
        lv.truncated = !std::isfinite(bar.r[i]) || bar.r[i] > T;
        lv.hi = lv.truncated ? T : bar.r[i];
        const std::vector<double> C = cumulative(h, j, lat);
        lv.I = C[static_cast<std::size_t>(grid_index(lv.hi, lat))] - C[static_cast<std::size_t>(grid_index(lv.lo, lat))];
        lv.delta = g(lv.hi) - g(lv.lo);
        lv.equality = lv.nu_l > 0.0 && lv.nu_r > 0.0;
        lv.slack = kInf;
        if (lv.nu_l > 0.0) lv.slack = std::min(lv.slack, lv.I - lv.delta + tol);
        if (lv.nu_r > 0.0) lv.slack = std::min(lv.slack, lv.delta - lv.I + tol);
        if (lv.nu_l <= 0.0 && lv.nu_r <= 0.0) {
            lv.verdict = "uncharged";
            lv.slack = 0.0;
        } else if (lv.truncated) {
            lv.verdict = "truncated";
            any_truncated = true;
        } else if (lv.slack >= 0.0) {
            lv.verdict = "pass";
        } else {
            lv.verdict = "fail";
            rep.pass = false;
        }
        rep.levels.push_back(lv);
    }
    if (any_truncated) rep.tail_bound = g.t_max() > T ? std::abs(g(g.t_max()) - g(T)) : kInf;
    return rep;
}

SufficiencyReport sufficiency_surface(const CaveBarrier& bar, const SplitMeasure& split,
                                      const CaveReward& g, const Lattice& lat, double tol,
                                      bool throw_on_fail) {
    const std::vector<double> h = compute_h(bar, g, lat);
    const int K = lat.horizon();
    const double T = lat.t(K);
    SufficiencyReport rep;
    rep.H.assign(lat.node_count(), std::numeric_limits<double>::quiet_NaN());
    rep.Gamma.assign(static_cast<std::size_t>(lat.levels()), std::numeric_limits<double>::quiet_NaN());
    rep.dominates = rep.left_contact = rep.right_contact = true;

    int a = lat.j_max() + 1;
    int b = lat.j_min() - 1;
    for (int j = lat.j_min(); j <= lat.j_max(); ++j) {
        if (split.nu_l.mass(j) + split.nu_r.mass(j) > 0.0) {
            a = std::min(a, j);
            b = std::max(b, j);
        }
    }
    std::vector<double> gk(static_cast<std::size_t>(K) + 1);
    for (int k = 0; k <= K; ++k) gk[static_cast<std::size_t>(k)] = g(lat.t(k));

    for (int j = a; j <= b; ++j) {
        const auto i = static_cast<std::size_t>(lat.level_index(j));
        const double lo = bar.l[i] == CaveBarrier::kGap ? 0.0 : bar.l[i];
        const double hi = std::isfinite(bar.r[i]) ? std::min(bar.r[i], T) : T;
        const int klo = grid_index(lo, lat);
        const int khi = grid_index(hi, lat);
        const std::vector<double> C = cumulative(h, j, lat);
        const double I = C[static_cast<std::size_t>(khi)] - C[static_cast<std::size_t>(klo)];
        const double gamma = g(lo) - g(hi) + I;
        rep.Gamma[i] = gamma;
        for (int k = 0; k <= K; ++k) {
            const std::size_t n = lat.node(k, j);
            rep.H[n] = g(hi) - (C[static_cast<std::size_t>(khi)] - C[static_cast<std::size_t>(k)]) + std::max(gamma, 0.0);
            if (gk[static_cast<std::size_t>(k)] > rep.H[n] + tol) {
                rep.dominates = false;
                rep.failing.push_back(n);
            }
        }
        if (split.nu_l.mass(j) > 0.0) {
            const std::size_t n = lat.node(klo, j);
            if (std::abs(g(lo) - rep.H[n]) > tol) {
                rep.left_contact = false;
                rep.failing.push_back(n);
            }
        }
        if (split.nu_r.mass(j) > 0.0) {
            const std::size_t n = lat.node(khi, j);
            if (std::abs(g(hi) - rep.H[n]) > tol) {
                rep.right_contact = false;
                rep.failing.push_back(n);
            }
        }
    }
    rep.pass = rep.dominates && rep.left_contact && rep.right_contact;
    if (!rep.pass && throw_on_fail) {
        throw ShapeViolation("verification surface fails at " + node_list(lat, rep.failing));
    }
    return rep;
}

}  // namespace skemb
