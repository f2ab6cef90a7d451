#pragma once

#include <limits>
#include <string>
#include <vector>

#include "skemb/lattice.hpp"
#include "skemb/primal.hpp"
#include "skemb/reward.hpp"

namespace skemb {

/// psi per level plus the Snell surface of g - psi. Node tables are indexed
/// by Lattice::node, level tables by Lattice::level_index.
struct DualPair {
    std::vector<double> psi;    // +infinity marks an excluded level
    std::vector<double> v;      // Snell value of g - psi
    std::vector<double> M;      // v - v(0,0); M(0,0) = 0
    std::vector<double> drift;  // v - continuation value; zero at boundary and horizon
    std::vector<char> stop;     // earliest-optimal rule: stop iff g - psi >= continuation
    double value_dual = 0.0;    // v(0,0) + sum nu_hat * psi
};

/// Backward induction for the reward g - psi. value_dual uses nu_hat when
/// given, otherwise it is v(0,0).
DualPair snell(const std::vector<double>& psi, const MarkovReward& G, const Lattice& lat,
               const DiscreteMeasure* nu_hat = nullptr);

/// Law of the stopping level under the earliest-optimal rule of dp.
std::vector<double> stopped_law(const DualPair& dp, const Lattice& lat);

/// Dual pair built from the LP marginal duals: psi = psi_hat, v = snell(psi).
DualPair dual_from_lp(const PrimalLpResult& lp, const MarkovReward& G, const Lattice& lat,
                      const DiscreteMeasure& nu_hat);

enum class StepSchedule {
    InverseSqrt,  // alpha_t = alpha_0 / sqrt(t)
    Constant,     // alpha_t = alpha_0
};

struct DescentOptions {
    long iters = 50'000;
    StepSchedule schedule = StepSchedule::InverseSqrt;
    double alpha0 = 0.0;        // 0 selects range(G) / level count
    int average_every = 50;     // how often the Polyak average is evaluated
    long divergence_window = 2000;
    double target_gap = 0.0;    // stop early once J - primal_value <= target_gap
    double primal_value = std::numeric_limits<double>::quiet_NaN();
    int trajectory_stride = 1;
};

struct DescentResult {
    DualPair best;
    double best_J = 0.0;
    long iterations = 0;
    std::vector<double> trajectory;  // J at every trajectory_stride-th iterate
    double gap = std::numeric_limits<double>::quiet_NaN();  // best_J - primal_value
    bool from_average = false;
};

/// Minimizes J(psi) = v(0,0) + sum nu_hat psi by subgradient steps along
/// nu_hat - mu(psi), keeping the best of the iterates and their running
/// average. Levels not charged by nu_hat are excluded (psi = +infinity).
/// Throws Diverged if J rises for divergence_window consecutive steps.
DescentResult dual_descent(const MarkovReward& G, const DiscreteMeasure& nu_hat, const Lattice& lat,
                           const DescentOptions& opt = {});

struct Envelope {
    std::vector<double> hull;        // largest convex minorant on the level grid
    double shift_c = 0.0;            // left slope of the hull at level 0, per unit x
    std::vector<double> normalized;  // psi(x) - shift_c * x
};

/// Lower convex hull of (x_j, psi_j) by the monotone chain.
Envelope convex_envelope(const std::vector<double>& psi, const Lattice& lat);

struct GammaSet {
    std::vector<char> member;  // node table of contact nodes
    double tol = 0.0;
    double mass = 0.0;         // stopped mass inside the set when a flow is supplied
};

/// Contact set of the martingale part of v. A stop at node n is inside when
/// v + psi - G <= tol at n and the drift of v is <= tol at every earlier node
/// of the path; member marks the first condition only. Throws InvalidInput
/// naming the first node where dp is not dual feasible (beyond feas_tol).
GammaSet extract_gamma(const DualPair& dp, const MarkovReward& G, const Lattice& lat, double tol,
                       const FlowSolution* fs = nullptr, double feas_tol = 1e-9);

struct Certificate {
    bool optimal = false;
    double residual_contact = 0.0;     // sum q (M + psi_M - G), nonnegative
    double residual_martingale = 0.0;  // sum q M, nonpositive
    double primal = 0.0;
    double dual = 0.0;
    double gap = 0.0;                  // dual - primal
    bool weak_duality = true;
    std::string verdict;
};

/// Optimality test for a dual-feasible pair and a feasible flow.
Certificate certify(const DualPair& dp, const FlowSolution& fs, const MarkovReward& G,
                    const Lattice& lat, double tol);

}  // namespace skemb
