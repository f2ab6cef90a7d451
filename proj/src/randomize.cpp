#include "skemb/randomize.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <tuple>

#include "skemb/error.hpp"

namespace skemb {

TreePath glue(const TreePath& omega, const TreePath& omega_prime, int t) {
    if (t < 0 || t > omega.length()) {
        std::ostringstream os;
        os << "glue index " << t << " outside [0, " << omega.length() << "]";
        throw InvalidInput(os.str());
    }
    std::vector<int8_t> steps(omega.steps().begin(), omega.steps().begin() + t);
    steps.insert(steps.end(), omega_prime.steps().begin(), omega_prime.steps().end());
    return TreePath(std::move(steps));
}

int EtaBound::tau(std::span<const int8_t> steps) const {
    const double dt = dx * dx;
    int level = 0;
    for (std::size_t k = 0;; ++k) {
        if (std::hypot(static_cast<double>(k) * dt, level * dx) >= eta * (1.0 - 1e-12)) {
            return static_cast<int>(k);
        }
        if (k == steps.size()) return -1;
        level += steps[k];
    }
}

EtaBound make_eta_bound(double dx, double eta) {
    if (!(dx > 0.0) || !std::isfinite(dx)) throw InvalidInput("dx must be positive");
    if (!(eta > 0.0) || !std::isfinite(eta)) throw InvalidInput("eta must be positive");
    EtaBound eb;
    eb.dx = dx;
    eb.eta = eta;
    eb.inner = std::max(1, static_cast<int>(std::ceil(eta / dx - 1e-9)));
    eb.outer = std::max(eb.inner, static_cast<int>(std::ceil(std::sqrt(eta) / dx - 1e-9)));
    return eb;
}

TreeKernel shift_time(const TreeKernel& xi, const TreeKernel& tau, ShiftConvention conv) {
    if (!tau.deterministic()) throw InvalidInput("shift requires a deterministic stopping rule");
    const WalkTree& outer = tau.tree();
    const WalkTree& inner = xi.tree();
    const std::size_t n = outer.size();
    std::vector<int> t0(n, -1);
    std::vector<std::size_t> xm(n, 0);
    std::vector<double> stop(n, 0.0);

    auto start = [&](std::size_t node) {
        t0[node] = outer.time(node);
        const int residual = outer.depth() - outer.time(node);
        if (inner.depth() < residual && !outer.terminal(node)) {
            std::ostringstream os;
            os << "residual depth insufficient: the shifted kernel has depth " << inner.depth()
               << " but " << residual << " steps remain after the stopping index at node " << node;
            throw InvalidInput(os.str());
        }
    };
    if (tau.stop(0) >= 0.5) start(0);

    for (std::size_t c = 0; c < n; ++c) {
        if (!outer.alive(c)) continue;
        if (c > 0) {
            const std::size_t p = WalkTree::parent(c);
            if (t0[p] >= 0) {
                t0[c] = t0[p];
                const bool up = c % 2 == 0;
                xm[c] = inner.terminal(xm[p]) ? xm[p] : WalkTree::child(xm[p], up);
            } else if (tau.stop(c) >= 0.5) {
                start(c);
            }
        }
        if (t0[c] < 0) continue;
        const int t = outer.time(c);
        if (conv == ShiftConvention::Inclusive) {
            stop[c] = xi.stop(xm[c]);
        } else if (t == t0[c]) {
            stop[c] = 0.0;
        } else if (t == t0[c] + 1) {
            stop[c] = 1.0 - (1.0 - xi.stop(0)) * (1.0 - xi.stop(xm[c]));
        } else {
            stop[c] = xi.stop(xm[c]);
        }
    }
    return TreeKernel(outer, std::move(stop));
}

int quantile_time(const TreeKernel& xi, double u, const TreePath& omega) {
    if (!(u >= 0.0 && u <= 1.0)) throw InvalidInput("quantile level must lie in [0, 1]");
    const WalkTree& tree = xi.tree();
    std::size_t node = 0;
    double survive = 1.0;
    for (int t = 0;; ++t) {
        survive *= 1.0 - xi.stop(node);
        if (tree.terminal(node) || 1.0 - survive >= u) return t;
        if (t >= omega.length()) throw InvalidInput("path ends before the quantile is reached");
        const int8_t s = omega.steps()[static_cast<std::size_t>(t)];
        if (s == 0) throw InvalidInput("tree paths take steps of +-1");
        node = WalkTree::child(node, s > 0);
    }
}

TreeKernel mix_kernels(const TreeKernel& a, const TreeKernel& b, double w) {
    if (!(w >= 0.0 && w <= 1.0)) throw InvalidInput("mixture weight must lie in [0, 1]");
    if (a.tree().size() != b.tree().size() || a.tree().absorb_lo() != b.tree().absorb_lo() ||
        a.tree().absorb_hi() != b.tree().absorb_hi()) {
        throw InvalidInput("mixed kernels must share a tree");
    }
    const std::vector<double> ma = a.arrival();
    const std::vector<double> mb = b.arrival();
    std::vector<double> stop(ma.size(), 1.0);
    for (std::size_t i = 0; i < stop.size(); ++i) {
        const double m = w * ma[i] + (1.0 - w) * mb[i];
        if (m > 0.0) stop[i] = (w * ma[i] * a.stop(i) + (1.0 - w) * mb[i] * b.stop(i)) / m;
    }
    return TreeKernel(a.tree(), std::move(stop));
}

double total_variation(const DiscreteMeasure& a, const DiscreteMeasure& b) {
    std::map<int, double> d;
    for (const Atom& x : a.atoms()) d[x.level] += x.mass;
    for (const Atom& x : b.atoms()) d[x.level] -= x.mass;
    double s = 0.0;
    for (const auto& [level, v] : d) s += std::abs(v);
    return 0.5 * s;
}

namespace {

// E|X - x| under a measure on levels.
double potential(const DiscreteMeasure& m, int x) {
    double s = 0.0;
    for (const Atom& a : m.atoms()) s += a.mass * std::abs(a.level - x);
    return s;
}

void check_convex_order(const DiscreteMeasure& mu, const DiscreteMeasure& nu, double dx) {
    std::vector<int> xs;
    for (const Atom& a : mu.atoms()) xs.push_back(a.level);
    for (const Atom& a : nu.atoms()) xs.push_back(a.level);
    for (int x : xs) {
        const double pn = potential(nu, x);
        const double pm = potential(mu, x);
        if (pn < pm - 1e-12) {
            std::ostringstream os;
            os << "two-point law is not below nu_hat in convex order: E_nu|X - x| = " << pn * dx
               << " < E_mu|X - x| = " << pm * dx << " at x = " << x * dx;
            throw InvalidInput(os.str());
        }
    }
}

}  // namespace

EtaApproximation eta_approximate(const TreeKernel& xi, const EtaBound& eb,
                                 const DiscreteMeasure& nu_hat, const EtaOptions& opt) {
    if (nu_hat.empty()) throw InvalidInput("target measure is empty");
    if (nu_hat.atoms().size() == 1 && nu_hat.atoms()[0].level == 0) {
        throw InvalidInput("target is the unit mass at 0; nothing to approximate");
    }
    if (!nu_hat.centered(eb.dx, 1e-12)) throw InvalidInput("target measure must be centered");
    const int e = eb.inner;
    const int s = eb.outer;
    const DiscreteMeasure mu({{-s, 0.5}, {s, 0.5}});
    check_convex_order(mu, nu_hat, eb.dx);
    const double xi_error = total_variation(xi.embedded(), nu_hat);
    if (xi_error > 1e-9) {
        std::ostringstream os;
        os << "kernel does not embed the target (total variation " << xi_error << ")";
        throw InvalidInput(os.str());
    }
    if (opt.rho_window < 1) throw InvalidInput("rho window must be at least 1");

    const WalkTree& inner = xi.tree();
    const int K = opt.chi_horizon > 0 ? opt.chi_horizon : std::max(1, inner.depth());
    const int D = opt.rho_window + std::max(inner.depth(), K);
    if (D > 20) {
        std::ostringstream os;
        os << "approximation needs a tree of depth " << D << " (limit 20)";
        throw InvalidInput(os.str());
    }

    Lattice lat(eb.dx, nu_hat.min_level(), nu_hat.max_level(), K);
    const MarkovReward fastest = tabulate(SpaceTimeFunction([](double t, double) { return -t; }), lat);
    PrimalLpResult lp = [&] {
        try {
            PrimalOptions po;
            po.simplex = opt.simplex;
            return solve_primal_lp(fastest, nu_hat, lat, po, &mu);
        } catch (const Infeasible& ex) {
            std::ostringstream os;
            os << "no embedding of the target from +-" << s * eb.dx << " within " << K
               << " steps: " << ex.what();
            throw Infeasible(os.str());
        }
    }();
    StoppingRule chi = rule_from_flow(lp.flow, lat);

    const WalkTree outer(D);
    const std::size_t n = outer.size();
    std::vector<int> rho(n, -1);
    std::vector<char> armed(n, 0);    // +-inner has been visited
    std::vector<char> escaped(n, 0);
    std::vector<std::size_t> xm(n, 0);
    std::vector<double> stop(n, 0.0);
    double escape = 0.0;
    double unresolved = 0.0;

    for (std::size_t c = 0; c < n; ++c) {
        const int t = outer.time(c);
        const int j = outer.level(c);
        if (c > 0) {
            const std::size_t p = WalkTree::parent(c);
            rho[c] = rho[p];
            armed[c] = armed[p];
            escaped[c] = escaped[p];
            if (rho[p] >= 0 && !escaped[p]) {
                xm[c] = inner.terminal(xm[p]) ? xm[p] : WalkTree::child(xm[p], c % 2 == 0);
            }
        }
        if (rho[c] < 0) {
            if (std::abs(j) == e) armed[c] = 1;
            if (armed[c] && (j == 0 || std::abs(j) == s)) {
                rho[c] = t;
                escaped[c] = j != 0;
                xm[c] = 0;
                if (escaped[c]) escape += outer.weight(c);
            }
        }
        if (t == opt.rho_window && rho[c] < 0) unresolved += outer.weight(c);
        if (rho[c] < 0) continue;
        if (!escaped[c]) {
            stop[c] = xi.stop(xm[c]);
        } else {
            const int k = t - rho[c];
            stop[c] = (k <= lat.horizon() && j >= lat.j_min() && j <= lat.j_max())
                          ? chi.a[lat.node(k, j)]
                          : 1.0;
        }
    }

    TreeKernel kernel(outer, std::move(stop));
    const double distortion = total_variation(kernel.embedded(), nu_hat);
    return EtaApproximation{std::move(kernel), eb, std::move(chi), lat, escape, unresolved, distortion};
}

DerandomizeReport derandomize(const TreeKernel& xi, const EtaBound& eb, int n0,
                              const std::vector<PathReward>& payoffs) {
    const WalkTree& tree = xi.tree();
    if (n0 < 0 || n0 > tree.depth()) {
        std::ostringstream os;
        os << "prefix depth " << n0 << " outside [0, " << tree.depth() << "]";
        throw InvalidInput(os.str());
    }
    const std::uint32_t prefixes = std::uint32_t{1} << n0;

    // Class of each prefix: (tau_eta, level at tau_eta, level at n0).
    std::map<std::tuple<int, int, int>, std::vector<std::uint32_t>> classes;
    for (std::uint32_t f = 0; f < prefixes; ++f) {
        const TreePath p = TreePath::from_id(f, n0);
        const int te = eb.tau(p.steps());
        if (te < 0) {
            std::ostringstream os;
            os << "prefix depth " << n0 << " too small: tau_eta is not reached on prefix " << f;
            throw InvalidInput(os.str());
        }
        classes[{te, p.level(te), p.level(n0)}].push_back(f);
    }
    const std::vector<double> q = xi.stopped();
    for (std::size_t i = 0; i < q.size(); ++i) {
        if (tree.time(i) < n0 && q[i] > 1e-15) {
            std::ostringstream os;
            os << "kernel stops at index " << tree.time(i) << ", before the prefix depth " << n0;
            throw InvalidInput(os.str());
        }
    }

    // Midpoint of each prefix's cell inside its class; prefixes are equiprobable.
    std::vector<double> u(prefixes, 0.5);
    std::vector<std::uint32_t> cls(prefixes, 0);
    DerandomizeReport rep{xi, xi, n0, classes.size(), 0.0, {}, {}, {}, 0.0};
    {
        std::uint32_t id = 0;
        for (const auto& [key, members] : classes) {
            const double cell = 1.0 / static_cast<double>(members.size());
            for (std::size_t r = 0; r < members.size(); ++r) {
                u[members[r]] = (static_cast<double>(r) + 0.5) * cell;
                cls[members[r]] = id;
            }
            ++id;
        }
    }
    rep.mean_atom = static_cast<double>(classes.size()) / static_cast<double>(prefixes);
    std::vector<std::vector<std::uint32_t>> members_of(classes.size());
    {
        std::size_t id = 0;
        for (const auto& [key, members] : classes) members_of[id++] = members;
    }

    const std::vector<double> m = xi.arrival();
    std::vector<double> avg(tree.size(), 0.0);
    std::vector<double> rule(tree.size(), 0.0);
    std::vector<double> survive(tree.size(), 1.0);
    for (std::size_t c = 0; c < tree.size(); ++c) {
        const int t = tree.time(c);
        if (t < n0) continue;
        const std::uint32_t id = static_cast<std::uint32_t>(c - ((std::size_t{1} << t) - 1));
        const int tail = t - n0;
        const std::uint32_t f = id >> tail;
        const std::uint32_t sigma = id & ((std::uint32_t{1} << tail) - 1);
        double num = 0.0;
        double den = 0.0;
        for (std::uint32_t g : members_of[cls[f]]) {
            const std::size_t node = ((std::size_t{1} << t) - 1) + ((g << tail) | sigma);
            num += m[node] * xi.stop(node);
            den += m[node];
        }
        avg[c] = den > 0.0 ? num / den : 1.0;
        const double before = t > n0 ? survive[WalkTree::parent(c)] : 1.0;
        survive[c] = before * (1.0 - avg[c]);
        rule[c] = 1.0 - survive[c] >= u[f] ? 1.0 : 0.0;
    }
    rep.averaged = TreeKernel(tree, std::move(avg));
    rep.rule = TreeKernel(tree, std::move(rule));

    for (const PathReward& G : payoffs) {
        const double a = xi.value(G);
        const double b = rep.rule.value(G);
        rep.randomized_values.push_back(a);
        rep.deterministic_values.push_back(b);
        rep.replication_error.push_back(std::abs(a - b));
    }
    rep.law_distortion = total_variation(rep.rule.embedded(), xi.embedded());
    return rep;
}

}  // namespace skemb
