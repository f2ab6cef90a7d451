#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "skemb/lattice.hpp"
#include "skemb/reward.hpp"
#include "skemb/simplex.hpp"

namespace skemb {

/// Markovian randomized stopping rule: a(k, j) is the probability of
/// stopping at (k, j) given arrival. Boundary and horizon nodes stop surely.
struct StoppingRule {
    std::vector<double> a;  // indexed by Lattice::node
};

/// Builds a rule from f(k, j), forcing a = 1 at boundary levels and at k = K.
/// Throws InvalidInput if f leaves [0, 1].
StoppingRule make_rule(const Lattice& lat, const std::function<double(int k, int j)>& f);

/// Arriving mass m and stopped mass q on the lattice.
struct FlowSolution {
    std::vector<double> m;  // indexed by Lattice::node
    std::vector<double> q;
    double value = 0.0;
    DiscreteMeasure embedded;
    double mean_time = 0.0;
};

/// Initial law defaults to the unit mass at level 0.
FlowSolution evaluate_rule(const StoppingRule& rule, const MarkovReward& G, const Lattice& lat,
                           const DiscreteMeasure* initial = nullptr);

/// a = q / m where m > 0; nodes without mass get a = 1.
StoppingRule rule_from_flow(const FlowSolution& fs, const Lattice& lat);

struct PrimalOptions {
    SimplexOptions simplex{};
};

struct PrimalLpResult {
    FlowSolution flow;
    /// Dual of the node conservation rows, indexed by Lattice::node. Nodes
    /// that carry no LP variable hold NaN.
    std::vector<double> flow_dual;
    /// Dual of the marginal rows, indexed by level index. Levels without a
    /// marginal row hold +infinity.
    std::vector<double> psi_hat;
    /// Support of the flow variables (nodes that can receive mass).
    std::vector<char> support;
    LpStatus status = LpStatus::Optimal;
    long iterations = 0;
    double dual_value = 0.0;
};

/// Nodes that can receive mass from the initial law before absorption.
std::vector<char> flow_support(const Lattice& lat, const DiscreteMeasure* initial = nullptr);

/// Exact maximization of sum q * G over flows embedding nu_hat. Throws
/// Infeasible listing the levels that cannot be met.
PrimalLpResult solve_primal_lp(const MarkovReward& G, const DiscreteMeasure& nu_hat,
                               const Lattice& lat, const PrimalOptions& opt = {},
                               const DiscreteMeasure* initial = nullptr);

}  // namespace skemb
