#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "skemb/lattice.hpp"
#include "skemb/primal.hpp"
#include "skemb/reward.hpp"

namespace skemb {

/// Cave barrier on the lattice. Level tables are indexed by level index.
/// A level with l = r = t_p stops at every time (endpoint or outer level).
struct CaveBarrier {
    static constexpr double kGap = -1.0;

    std::vector<double> l;  // kGap or a time in [0, t_p]
    std::vector<double> r;  // a time >= t_p, or +infinity
    double t_p = 0.0;
    std::vector<char> D;    // continuation region, node table over both parities
};

/// Stopped mass split by stopping time: at or before t_p goes to nu_l.
struct SplitMeasure {
    DiscreteMeasure nu_l;
    DiscreteMeasure nu_r;
    std::string parting_rule = "mass stopped at the parting time is assigned to nu_l";
};

struct ExtractedCave {
    CaveBarrier barrier;
    SplitMeasure split;
    /// Nodes with 0 < stop probability < 1 in the flow (randomized ties).
    std::vector<std::size_t> randomized;
};

/// Reads the barrier off an optimal flow and regularizes it. Throws
/// InvalidInput if the target charges level 0 and ShapeViolation naming the
/// offending nodes if the stopping set is not a cave.
ExtractedCave extract_barrier(const FlowSolution& fs, const CaveReward& g, const Lattice& lat);

/// Monotone envelope of l and restriction of D to the component of (0,0).
CaveBarrier regularize(CaveBarrier bar, const Lattice& lat);

/// First exit rule of D.
StoppingRule barrier_rule(const CaveBarrier& bar, const Lattice& lat);

/// h(k,j) = dplus g at stopped nodes, walk average inside D, on every node.
std::vector<double> compute_h(const CaveBarrier& bar, const CaveReward& g, const Lattice& lat);

struct LevelVerdict {
    int level = 0;
    double lo = 0.0;      // lower integration limit
    double hi = 0.0;      // upper integration limit
    double I = 0.0;       // trapezoid integral of h over [lo, hi]
    double delta = 0.0;   // g(hi) - g(lo)
    double nu_l = 0.0;
    double nu_r = 0.0;
    double slack = 0.0;   // signed margin of the binding inequality; negative fails
    bool equality = false;  // both measures charge the level
    bool truncated = false; // no right barrier before the horizon
    std::string verdict;    // pass, fail, truncated, uncharged
};

struct VariationalReport {
    std::vector<LevelVerdict> levels;
    double tol = 0.0;
    double tail_bound = 0.0;  // |g(t_max) - g(K dt)| for truncated levels
    bool pass = false;
};

VariationalReport check_variational(const CaveBarrier& bar, const SplitMeasure& split,
                                    const CaveReward& g, const Lattice& lat, double tol);

struct SufficiencyReport {
    std::vector<double> H;      // node table; NaN on levels without a barrier
    std::vector<double> Gamma;  // per level
    bool dominates = false;     // g(t) <= H(t, x) everywhere
    bool left_contact = false;  // g(l) = H(l, x) on nu_l-charged levels
    bool right_contact = false; // g(r) = H(r, x) on nu_r-charged levels
    std::vector<std::size_t> failing;  // nodes where a check failed
    bool pass = false;
};

/// Verification surface built from h. Throws ShapeViolation listing the
/// failing nodes when throw_on_fail is set.
SufficiencyReport sufficiency_surface(const CaveBarrier& bar, const SplitMeasure& split,
                                      const CaveReward& g, const Lattice& lat, double tol,
                                      bool throw_on_fail = false);

}  // namespace skemb
