#include "skemb/tree.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "skemb/error.hpp"

namespace skemb {

WalkTree::WalkTree(int depth, std::optional<int> absorb_lo, std::optional<int> absorb_hi)
    : depth_(depth), lo_(absorb_lo), hi_(absorb_hi) {
    if (depth < 0 || depth > 20) throw InvalidInput("tree depth must lie in [0, 20]");
    if ((lo_ && *lo_ >= 0) || (hi_ && *hi_ <= 0)) {
        throw InvalidInput("absorbing levels must satisfy lo < 0 < hi");
    }
    const std::size_t n = (std::size_t{1} << (depth + 1)) - 1;
    time_.assign(n, 0);
    level_.assign(n, 0);
    alive_.assign(n, 0);
    alive_[0] = 1;
    for (std::size_t i = 1; i < n; ++i) {
        const std::size_t p = parent(i);
        time_[i] = time_[p] + 1;
        level_[i] = level_[p] + (i % 2 == 0 ? 1 : -1);
        alive_[i] = alive_[p] && !absorbed(p);
    }
}

double WalkTree::weight(std::size_t node) const { return std::ldexp(1.0, -time_[node]); }

bool WalkTree::absorbed(std::size_t node) const {
    return (lo_ && level_[node] <= *lo_) || (hi_ && level_[node] >= *hi_);
}

bool WalkTree::terminal(std::size_t node) const {
    return time_[node] == depth_ || absorbed(node);
}

std::size_t WalkTree::node_on_path(std::uint32_t path_id, int k) const {
    return ((std::size_t{1} << k) - 1) + (path_id >> (depth_ - k));
}

std::vector<int8_t> WalkTree::prefix(std::size_t node) const {
    std::vector<int8_t> steps(static_cast<std::size_t>(time_[node]));
    for (std::size_t i = steps.size(); i > 0; --i) {
        steps[i - 1] = node % 2 == 0 ? 1 : -1;
        node = parent(node);
    }
    return steps;
}

// ---------------------------------------------------------------------------

TreeKernel::TreeKernel(const WalkTree& tree, std::vector<double> stop)
    : tree_(tree), stop_(std::move(stop)) {
    if (stop_.size() != tree_.size()) throw InvalidInput("kernel size does not match the tree");
    for (std::size_t i = 0; i < stop_.size(); ++i) {
        if (tree_.terminal(i)) {
            stop_[i] = 1.0;
        } else if (!(stop_[i] >= 0.0 && stop_[i] <= 1.0)) {
            std::ostringstream os;
            os << "kernel stop probability " << stop_[i] << " at node " << i << " is outside [0, 1]";
            throw InvalidInput(os.str());
        }
    }
}

TreeKernel TreeKernel::run_to_end(const WalkTree& tree) {
    return TreeKernel(tree, std::vector<double>(tree.size(), 0.0));
}

std::vector<double> TreeKernel::arrival() const {
    std::vector<double> m(tree_.size(), 0.0);
    m[0] = 1.0;
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (m[i] == 0.0 || tree_.terminal(i)) continue;
        const double go = 0.5 * m[i] * (1.0 - stop_[i]);
        m[WalkTree::child(i, false)] = go;
        m[WalkTree::child(i, true)] = go;
    }
    return m;
}

std::vector<double> TreeKernel::stopped() const {
    std::vector<double> q = arrival();
    for (std::size_t i = 0; i < q.size(); ++i) q[i] *= stop_[i];
    return q;
}

double TreeKernel::cdf(std::uint32_t path_id, int k) const {
    double survive = 1.0;
    for (int t = 0; t <= std::min(k, tree_.depth()); ++t) {
        const std::size_t node = tree_.node_on_path(path_id, t);
        survive *= 1.0 - stop_[node];
        if (tree_.terminal(node)) return 1.0;
    }
    return 1.0 - survive;
}

std::vector<double> TreeKernel::level_law() const {
    const std::vector<double> q = stopped();
    std::vector<double> law(static_cast<std::size_t>(2 * tree_.depth() + 1), 0.0);
    for (std::size_t i = 0; i < q.size(); ++i) {
        if (q[i] != 0.0) law[static_cast<std::size_t>(tree_.level(i) + tree_.depth())] += q[i];
    }
    return law;
}

DiscreteMeasure TreeKernel::embedded() const {
    const std::vector<double> law = level_law();
    std::vector<Atom> atoms;
    for (std::size_t i = 0; i < law.size(); ++i) {
        if (law[i] != 0.0) atoms.push_back({static_cast<int>(i) - tree_.depth(), law[i]});
    }
    return DiscreteMeasure(std::move(atoms), false, 1e-9);
}

double TreeKernel::value(const PathReward& G) const {
    const std::vector<double> q = stopped();
    double v = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        if (q[i] != 0.0) v += q[i] * G(tree_.prefix(i));
    }
    return v;
}

bool TreeKernel::deterministic(double tol) const {
    const std::vector<double> m = arrival();
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (m[i] <= 0.0) continue;
        if (stop_[i] > tol && stop_[i] < 1.0 - tol) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------

namespace {

using Law = std::vector<std::uint16_t>;

struct Option {
    double vmax;
    double vmin;
    bool stop;
    std::size_t down;  // option index in the child tables when not stopping
    std::size_t up;
};

struct OptionTable {
    std::vector<Law> laws;
    std::vector<Option> opts;
};

class DeterministicSearch {
public:
    DeterministicSearch(const PathReward& G, const DiscreteMeasure& nu, const WalkTree& tree,
                        const TreeBruteOptions& opt)
        : G_(G), tree_(tree), opt_(opt) {
        const int n = tree.depth();
        for (const Atom& a : nu.atoms()) {
            const double units = std::ldexp(a.mass, n);
            const double r = std::round(units);
            if (std::abs(units - r) > 1e-9 || r > 65535.0) {
                std::ostringstream os;
                os << "no deterministic kernel embeds the target: mass " << a.mass << " at level "
                   << a.level << " is not a multiple of 2^-" << n;
                throw Infeasible(os.str());
            }
            slot_[a.level] = target_.size();
            target_.push_back(static_cast<std::uint16_t>(r));
        }
    }

    TreeBruteResult run() {
        const OptionTable& root = table(0);
        auto it = std::lower_bound(root.laws.begin(), root.laws.end(), target_);
        if (it == root.laws.end() || *it != target_) {
            std::ostringstream os;
            os << "no deterministic kernel embeds the target at depth " << tree_.depth();
            throw Infeasible(os.str());
        }
        const auto idx = static_cast<std::size_t>(it - root.laws.begin());
        TreeBruteResult res;
        res.value = root.opts[idx].vmax;
        res.min_value = root.opts[idx].vmin;
        res.states = states_;
        res.stop.assign(tree_.size(), 1.0);
        reconstruct(0, idx, res.stop);
        return res;
    }

private:
    std::size_t key(std::size_t node) const {
        if (!opt_.markovian) return node;
        const int n = tree_.depth();
        return static_cast<std::size_t>(tree_.time(node)) * static_cast<std::size_t>(2 * n + 1) +
               static_cast<std::size_t>(tree_.level(node) + n);
    }

    const OptionTable& table(std::size_t node) {
        const std::size_t k = key(node);
        auto found = memo_.find(k);
        if (found != memo_.end()) return found->second;

        std::map<Law, Option> acc;
        const double w = tree_.weight(node);
        // Stop here.
        auto slot = slot_.find(tree_.level(node));
        const auto units = static_cast<std::uint32_t>(1u << (tree_.depth() - tree_.time(node)));
        if (slot != slot_.end() && units <= target_[slot->second]) {
            Law law(target_.size(), 0);
            law[slot->second] = static_cast<std::uint16_t>(units);
            const double v = w * G_(tree_.prefix(node));
            acc.emplace(std::move(law), Option{v, v, true, 0, 0});
        }
        if (!tree_.terminal(node)) {
            const OptionTable& dn = table(WalkTree::child(node, false));
            const OptionTable& up = table(WalkTree::child(node, true));
            Law law(target_.size());
            for (std::size_t a = 0; a < dn.laws.size(); ++a) {
                for (std::size_t b = 0; b < up.laws.size(); ++b) {
                    bool ok = true;
                    for (std::size_t s = 0; s < law.size(); ++s) {
                        const int c = dn.laws[a][s] + up.laws[b][s];
                        if (c > target_[s]) {
                            ok = false;
                            break;
                        }
                        law[s] = static_cast<std::uint16_t>(c);
                    }
                    if (!ok) continue;
                    const double vmax = dn.opts[a].vmax + up.opts[b].vmax;
                    const double vmin = dn.opts[a].vmin + up.opts[b].vmin;
                    auto [pos, inserted] = acc.try_emplace(law, Option{vmax, vmin, false, a, b});
                    if (!inserted) {
                        if (vmax > pos->second.vmax) {
                            pos->second.vmax = vmax;
                            pos->second.stop = false;
                            pos->second.down = a;
                            pos->second.up = b;
                        }
                        pos->second.vmin = std::min(pos->second.vmin, vmin);
                    }
                }
            }
        }
        states_ += acc.size();
        if (states_ > opt_.max_states) {
            throw Infeasible("deterministic search exceeded its state budget; reduce the depth");
        }
        OptionTable t;
        t.laws.reserve(acc.size());
        t.opts.reserve(acc.size());
        for (auto& [law, o] : acc) {
            t.laws.push_back(law);
            t.opts.push_back(o);
        }
        return memo_.emplace(k, std::move(t)).first->second;
    }

    void reconstruct(std::size_t node, std::size_t idx, std::vector<double>& stop) {
        const Option o = table(node).opts[idx];
        if (o.stop) {
            stop[node] = 1.0;
            return;
        }
        stop[node] = 0.0;
        reconstruct(WalkTree::child(node, false), o.down, stop);
        reconstruct(WalkTree::child(node, true), o.up, stop);
    }

    const PathReward& G_;
    const WalkTree& tree_;
    TreeBruteOptions opt_;
    Law target_;
    std::map<int, std::size_t> slot_;
    std::map<std::size_t, OptionTable> memo_;
    std::size_t states_ = 0;
};

TreeBruteResult randomized_lp(const PathReward& G, const DiscreteMeasure& nu, const WalkTree& tree,
                              const TreeBruteOptions& opt) {
    std::size_t alive = 0;
    for (std::size_t i = 0; i < tree.size(); ++i) alive += tree.alive(i) ? 1 : 0;
    if (alive > opt.max_lp_nodes) {
        std::ostringstream os;
        os << "tree LP has " << alive << " live nodes, above the cap of " << opt.max_lp_nodes;
        throw InvalidInput(os.str());
    }
    LinearProgram lp;
    std::vector<int> row(tree.size(), -1);
    int rows = 0;
    std::map<int, int> level_row;
    for (std::size_t i = 0; i < tree.size(); ++i) {
        if (tree.alive(i)) row[i] = rows++;
    }
    for (std::size_t i = 0; i < tree.size(); ++i) {
        if (tree.alive(i) && !level_row.count(tree.level(i))) level_row[tree.level(i)] = 0;
    }
    for (auto& [level, r] : level_row) r = rows++;
    for (const Atom& a : nu.atoms()) {
        if (!level_row.count(a.level)) {
            std::ostringstream os;
            os << "target charges level " << a.level << " which the tree never visits";
            throw Infeasible(os.str());
        }
    }
    lp.rows = rows;
    lp.rhs.assign(static_cast<std::size_t>(rows), 0.0);
    lp.rhs[0] = 1.0;
    for (auto& [level, r] : level_row) lp.rhs[static_cast<std::size_t>(r)] = nu.mass(level);

    std::vector<int> qc(tree.size(), -1);
    std::vector<int> cc(tree.size(), -1);
    for (std::size_t i = 0; i < tree.size(); ++i) {
        if (!tree.alive(i)) continue;
        qc[i] = lp.add_column(-G(tree.prefix(i)), {{row[i], 1.0}, {level_row[tree.level(i)], 1.0}});
        if (!tree.terminal(i)) {
            cc[i] = lp.add_column(0.0, {{row[i], 1.0},
                                        {row[WalkTree::child(i, false)], -0.5},
                                        {row[WalkTree::child(i, true)], -0.5}});
        }
    }
    const LpResult res = solve_lp(lp, opt.simplex);
    if (res.status == LpStatus::Infeasible) {
        std::ostringstream os;
        os << "no kernel embeds the target on this tree (phase-one residual " << res.phase1_residual << ")";
        throw Infeasible(os.str());
    }
    if (res.status != LpStatus::Optimal) {
        throw Diverged("tree LP stopped with status " + to_string(res.status));
    }
    TreeBruteResult out;
    out.lp_iterations = res.iterations;
    out.stop.assign(tree.size(), 1.0);
    for (std::size_t i = 0; i < tree.size(); ++i) {
        if (!tree.alive(i) || tree.terminal(i)) continue;
        const double q = std::max(0.0, res.x[static_cast<std::size_t>(qc[i])]);
        const double c = std::max(0.0, res.x[static_cast<std::size_t>(cc[i])]);
        out.stop[i] = q + c > 1e-15 ? q / (q + c) : 1.0;
    }
    out.value = -res.objective;
    out.min_value = out.value;
    return out;
}

}  // namespace

TreeBruteResult brute_force_tree(const PathReward& G, const DiscreteMeasure& nu_hat,
                                 const WalkTree& tree, bool deterministic_only,
                                 const TreeBruteOptions& opt) {
    if (tree.depth() > 12) throw InvalidInput("brute force is limited to depth 12");
    for (std::size_t i = 0; i < tree.size(); ++i) {
        if (tree.alive(i) && G(tree.prefix(i)) < 0.0) {
            throw InvalidInput("path reward must be nonnegative");
        }
    }
    if (deterministic_only) {
        DeterministicSearch s(G, nu_hat, tree, opt);
        return s.run();
    }
    return randomized_lp(G, nu_hat, tree, opt);
}

}  // namespace skemb
