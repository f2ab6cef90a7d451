#include "skemb/dual.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "skemb/error.hpp"

namespace skemb {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_shapes(const std::vector<double>& psi, const MarkovReward& G, const Lattice& lat) {
    if (G.horizon() != lat.horizon() || G.j_min() != lat.j_min() || G.j_max() != lat.j_max()) {
        throw InvalidInput("reward table and lattice differ");
    }
    if (psi.size() != static_cast<std::size_t>(lat.levels())) {
        throw InvalidInput("psi must hold one entry per lattice level");
    }
    for (double p : psi) {
        if (std::isnan(p) || p == -kInf) throw InvalidInput("psi entries must be finite or +infinity");
    }
}

// Backward pass into preallocated buffers; returns v(0,0).
double snell_pass(const std::vector<double>& psi, const MarkovReward& G, const Lattice& lat,
                  std::vector<double>& v, std::vector<char>& stop) {
    const int K = lat.horizon();
    const int L = lat.levels();
    for (int k = K; k >= 0; --k) {
        for (int j = lat.j_min(); j <= lat.j_max(); ++j) {
            const std::size_t n = lat.node(k, j);
            const double reward = G(k, j) - psi[static_cast<std::size_t>(lat.level_index(j))];
            if (k == K || lat.is_boundary(j)) {
                v[n] = reward;
                stop[n] = 1;
                continue;
            }
            const std::size_t below = n + static_cast<std::size_t>(L) - 1;
            const double cont = 0.5 * (v[below] + v[below + 2]);
            if (reward >= cont) {
                v[n] = reward;
                stop[n] = 1;
            } else {
                v[n] = cont;
                stop[n] = 0;
            }
        }
    }
    return v[lat.node(0, 0)];
}

void law_pass(const std::vector<char>& stop, const Lattice& lat, std::vector<double>& m,
              std::vector<double>& law) {
    std::fill(m.begin(), m.end(), 0.0);
    std::fill(law.begin(), law.end(), 0.0);
    m[lat.node(0, 0)] = 1.0;
    const int L = lat.levels();
    for (int k = 0; k <= lat.horizon(); ++k) {
        for (int j = lat.j_min(); j <= lat.j_max(); ++j) {
            const std::size_t n = lat.node(k, j);
            if (m[n] == 0.0) continue;
            if (stop[n]) {
                law[static_cast<std::size_t>(lat.level_index(j))] += m[n];
            } else {
                const std::size_t below = n + static_cast<std::size_t>(L) - 1;
                m[below] += 0.5 * m[n];
                m[below + 2] += 0.5 * m[n];
            }
        }
    }
}

double charged_sum(const std::vector<double>& nu, const std::vector<double>& psi) {
    double s = 0.0;
    for (std::size_t i = 0; i < nu.size(); ++i) {
        if (nu[i] > 0.0) s += nu[i] * psi[i];
    }
    return s;
}

}  // namespace

DualPair snell(const std::vector<double>& psi, const MarkovReward& G, const Lattice& lat,
               const DiscreteMeasure* nu_hat) {
    check_shapes(psi, G, lat);
    DualPair dp;
    dp.psi = psi;
    const std::size_t N = lat.node_count();
    dp.v.assign(N, 0.0);
    dp.stop.assign(N, 1);
    const double v0 = snell_pass(psi, G, lat, dp.v, dp.stop);

    dp.M.assign(N, 0.0);
    dp.drift.assign(N, 0.0);
    const int L = lat.levels();
    for (int k = 0; k <= lat.horizon(); ++k) {
        for (int j = lat.j_min(); j <= lat.j_max(); ++j) {
            const std::size_t n = lat.node(k, j);
            dp.M[n] = dp.v[n] - v0;
            if (k == lat.horizon() || lat.is_boundary(j)) continue;
            const std::size_t below = n + static_cast<std::size_t>(L) - 1;
            const double cont = 0.5 * (dp.v[below] + dp.v[below + 2]);
            dp.drift[n] = dp.v[n] == cont ? 0.0 : dp.v[n] - cont;
        }
    }
    dp.value_dual = v0;
    if (nu_hat != nullptr) dp.value_dual += charged_sum(nu_hat->dense(lat), psi);
    return dp;
}

std::vector<double> stopped_law(const DualPair& dp, const Lattice& lat) {
    std::vector<double> m(lat.node_count());
    std::vector<double> law(static_cast<std::size_t>(lat.levels()));
    law_pass(dp.stop, lat, m, law);
    return law;
}

DualPair dual_from_lp(const PrimalLpResult& lp, const MarkovReward& G, const Lattice& lat,
                      const DiscreteMeasure& nu_hat) {
    return snell(lp.psi_hat, G, lat, &nu_hat);
}

DescentResult dual_descent(const MarkovReward& G, const DiscreteMeasure& nu_hat, const Lattice& lat,
                           const DescentOptions& opt) {
    if (opt.iters < 1) throw InvalidInput("dual descent needs at least one iteration");
    const std::vector<double> nu = nu_hat.dense(lat);
    const std::size_t L = nu.size();
    std::vector<double> psi(L, kInf);
    for (std::size_t i = 0; i < L; ++i) {
        if (nu[i] > 0.0) psi[i] = 0.0;
    }
    check_shapes(psi, G, lat);

    double alpha0 = opt.alpha0;
    if (alpha0 <= 0.0) alpha0 = std::max(G.range(), 1e-12) / static_cast<double>(L);

    const std::size_t N = lat.node_count();
    std::vector<double> v(N), m(N), law(L);
    std::vector<char> stop(N);
    std::vector<double> avg(psi);
    std::vector<double> best_psi(psi);
    double weight_sum = 0.0;

    DescentResult out;
    double best_J = kInf;
    double prev_J = kInf;
    long rising = 0;
    const int stride = std::max(1, opt.trajectory_stride);
    const bool have_primal = std::isfinite(opt.primal_value);

    auto reached = [&](double J) {
        return have_primal && opt.target_gap > 0.0 && J - opt.primal_value <= opt.target_gap;
    };

    long t = 1;
    for (; t <= opt.iters; ++t) {
        const double J = snell_pass(psi, G, lat, v, stop) + charged_sum(nu, psi);
        if ((t - 1) % stride == 0) out.trajectory.push_back(J);
        if (J < best_J) {
            best_J = J;
            best_psi = psi;
            out.from_average = false;
        }
        if (J > prev_J) {
            if (++rising >= opt.divergence_window && opt.divergence_window > 0) {
                std::ostringstream os;
                os << "dual objective rose for " << rising << " consecutive steps (J = " << J
                   << " at iteration " << t << ", best " << best_J << ")";
                throw Diverged(os.str());
            }
        } else {
            rising = 0;
        }
        prev_J = J;
        if (reached(best_J)) break;

        law_pass(stop, lat, m, law);
        const double alpha =
            opt.schedule == StepSchedule::Constant ? alpha0 : alpha0 / std::sqrt(static_cast<double>(t));

        // Running average of the iterates, weighted by step length.
        weight_sum += alpha;
        const double w = alpha / weight_sum;
        for (std::size_t i = 0; i < L; ++i) {
            if (nu[i] > 0.0) avg[i] += w * (psi[i] - avg[i]);
        }
        for (std::size_t i = 0; i < L; ++i) {
            if (nu[i] > 0.0) psi[i] -= alpha * (nu[i] - law[i]);
        }
        if (opt.average_every > 0 && t % opt.average_every == 0) {
            const double Ja = snell_pass(avg, G, lat, v, stop) + charged_sum(nu, avg);
            if (Ja < best_J) {
                best_J = Ja;
                best_psi = avg;
                out.from_average = true;
            }
            if (reached(best_J)) break;
        }
    }
    out.iterations = std::min(t, opt.iters);
    out.best = snell(best_psi, G, lat, &nu_hat);
    out.best_J = out.best.value_dual;
    if (have_primal) out.gap = out.best_J - opt.primal_value;
    return out;
}

Envelope convex_envelope(const std::vector<double>& psi, const Lattice& lat) {
    const int L = lat.levels();
    if (psi.size() != static_cast<std::size_t>(L)) {
        throw InvalidInput("psi must hold one entry per lattice level");
    }
    for (int i = 0; i < L; ++i) {
        if (!std::isfinite(psi[static_cast<std::size_t>(i)])) {
            std::ostringstream os;
            os << "convex envelope needs finite psi; level " << lat.j_min() + i << " holds "
               << psi[static_cast<std::size_t>(i)];
            throw InvalidInput(os.str());
        }
    }
    // Lower hull in level units, vertices in increasing level order.
    std::vector<int> hull;
    auto cross = [&](int a, int b, int c) {
        const double ya = psi[static_cast<std::size_t>(a)];
        const double yb = psi[static_cast<std::size_t>(b)];
        const double yc = psi[static_cast<std::size_t>(c)];
        return (b - a) * (yc - ya) - (yb - ya) * (c - a);
    };
    for (int i = 0; i < L; ++i) {
        while (hull.size() >= 2 && cross(hull[hull.size() - 2], hull.back(), i) <= 0.0) hull.pop_back();
        hull.push_back(i);
    }

    Envelope env;
    env.hull.assign(static_cast<std::size_t>(L), 0.0);
    for (std::size_t h = 0; h + 1 < hull.size(); ++h) {
        const int a = hull[h];
        const int b = hull[h + 1];
        const double ya = psi[static_cast<std::size_t>(a)];
        const double yb = psi[static_cast<std::size_t>(b)];
        for (int i = a; i <= b; ++i) {
            env.hull[static_cast<std::size_t>(i)] = ya + (yb - ya) * (i - a) / static_cast<double>(b - a);
        }
    }
    if (hull.size() == 1) env.hull[0] = psi[0];

    const int i0 = lat.level_index(0);
    if (i0 > 0) {
        const double slope = env.hull[static_cast<std::size_t>(i0)] - env.hull[static_cast<std::size_t>(i0 - 1)];
        env.shift_c = slope / lat.dx();
    } else if (L > 1) {
        env.shift_c = (env.hull[1] - env.hull[0]) / lat.dx();
    }
    env.normalized.resize(static_cast<std::size_t>(L));
    for (int j = lat.j_min(); j <= lat.j_max(); ++j) {
        const auto i = static_cast<std::size_t>(lat.level_index(j));
        env.normalized[i] = psi[i] - env.shift_c * lat.x(j);
    }
    return env;
}

GammaSet extract_gamma(const DualPair& dp, const MarkovReward& G, const Lattice& lat, double tol,
                       const FlowSolution* fs, double feas_tol) {
    check_shapes(dp.psi, G, lat);
    if (dp.v.size() != lat.node_count()) throw InvalidInput("dual pair does not match the lattice");
    const int K = lat.horizon();
    const int L = lat.levels();
    const std::vector<char> support = flow_support(lat);
    auto where = [](int k, int j) {
        std::ostringstream os;
        os << "(k=" << k << ", j=" << j << ")";
        return os.str();
    };
    for (int k = 0; k <= K; ++k) {
        for (int j = lat.j_min(); j <= lat.j_max(); ++j) {
            const std::size_t n = lat.node(k, j);
            if (!support[n]) continue;
            const double scale = feas_tol * std::max(1.0, std::abs(G(k, j)));
            const double psi = dp.psi[static_cast<std::size_t>(lat.level_index(j))];
            if (dp.v[n] + psi < G(k, j) - scale) {
                throw InvalidInput("dual pair is not feasible: v + psi < G at node " + where(k, j));
            }
            if (k < K && lat.is_interior(j)) {
                const std::size_t below = n + static_cast<std::size_t>(L) - 1;
                const double cont = 0.5 * (dp.v[below] + dp.v[below + 2]);
                if (dp.v[n] < cont - scale) {
                    throw InvalidInput("dual pair is not feasible: v is not a supermartingale at node " +
                                       where(k, j));
                }
            }
        }
    }
    GammaSet gs;
    gs.tol = tol;
    gs.member.assign(lat.node_count(), 0);
    for (int k = 0; k <= K; ++k) {
        for (int j = lat.j_min(); j <= lat.j_max(); ++j) {
            const std::size_t n = lat.node(k, j);
            const double psi = dp.psi[static_cast<std::size_t>(lat.level_index(j))];
            gs.member[n] = std::isfinite(psi) && dp.v[n] + psi - G(k, j) <= tol;
        }
    }
    if (fs == nullptr) return gs;
    if (fs->m.size() != lat.node_count() || fs->q.size() != lat.node_count()) {
        throw InvalidInput("flow does not match the lattice");
    }
    // Arrival mass whose path has crossed no node with positive drift.
    std::vector<double> clean(lat.node_count(), 0.0);
    clean[lat.node(0, 0)] = fs->m[lat.node(0, 0)];
    for (int k = 0; k <= K; ++k) {
        for (int j = lat.j_min(); j <= lat.j_max(); ++j) {
            const std::size_t n = lat.node(k, j);
            const double m = fs->m[n];
            if (!(clean[n] > 0.0) || !(m > 0.0)) continue;
            const double frac = std::min(1.0, clean[n] / m);
            if (gs.member[n]) gs.mass += frac * fs->q[n];
            if (k < K && lat.is_interior(j) && dp.drift[n] <= tol) {
                const double go = 0.5 * frac * std::max(0.0, m - fs->q[n]);
                const std::size_t below = n + static_cast<std::size_t>(L) - 1;
                clean[below] += go;
                clean[below + 2] += go;
            }
        }
    }
    return gs;
}

Certificate certify(const DualPair& dp, const FlowSolution& fs, const MarkovReward& G,
                    const Lattice& lat, double tol) {
    check_shapes(dp.psi, G, lat);
    if (fs.q.size() != lat.node_count() || dp.v.size() != lat.node_count()) {
        throw InvalidInput("dual pair or flow does not match the lattice");
    }
    Certificate c;
    const double v0 = dp.v[lat.node(0, 0)];
    double qv = 0.0;
    for (int k = 0; k <= lat.horizon(); ++k) {
        for (int j = lat.j_min(); j <= lat.j_max(); ++j) {
            const std::size_t n = lat.node(k, j);
            const double q = fs.q[n];
            if (q == 0.0) continue;
            const double psi = dp.psi[static_cast<std::size_t>(lat.level_index(j))];
            c.residual_contact += q * (dp.v[n] + psi - G(k, j));
            qv += q * dp.v[n];
        }
    }
    c.residual_martingale = qv - v0 * fs.embedded.total();
    c.primal = fs.value;
    c.dual = dp.value_dual;
    c.gap = c.dual - c.primal;
    const double scale = std::max(1.0, std::abs(c.primal));
    c.weak_duality = c.primal <= c.dual + tol * scale;
    c.optimal = c.residual_contact <= tol && std::abs(c.residual_martingale) <= tol;
    std::ostringstream os;
    if (c.optimal) {
        os << "optimal";
    } else {
        os << "within gap " << c.gap;
    }
    if (!c.weak_duality) os << "; weak duality violated";
    c.verdict = os.str();
    return c;
}

}  // namespace skemb
