#pragma once

#include <cstdint>
#include <vector>

#include "skemb/cave.hpp"
#include "skemb/lattice.hpp"
#include "skemb/primal.hpp"

namespace skemb {

struct SimConfig {
    long n_paths = 10000;
    double dt_sim = 1e-3;
    std::uint64_t seed = 1;
    double cap = 10.0;          // explosion proxy |X| >= cap
    double confidence = 0.95;
    int bootstrap = 200;        // resamples for the distance interval
    int threads = 1;
    long batch = 4096;          // paths per seeded substream
};

/// Throws InvalidInput unless n_paths >= 1, dt_sim > 0, cap > 0 and
/// confidence lies in (0, 1).
void validate(const SimConfig& cfg);

struct MCReport {
    double estimate = 0.0;
    double half_width = 0.0;
    long n_effective = 0;
    std::uint64_t seed = 0;
    double confidence = 0.0;
};

struct EmbeddingCheck {
    MCReport mc;               // W1(empirical stopped law, nu_hat)
    double exact_distance = 0.0;  // W1(flow-computed law, nu_hat)
    DiscreteMeasure empirical;
    bool pass = false;         // |estimate - exact| <= half_width
};

/// Simulates walks from level 0 under the rule and compares the stopped law
/// with nu_hat. The half width is the bootstrap quantile of the distance
/// between resampled and observed laws, which bounds the sampling error of
/// the estimate by the triangle inequality.
EmbeddingCheck verify_embedding(const StoppingRule& rule, const DiscreteMeasure& nu_hat,
                                const Lattice& lat, const SimConfig& cfg);
EmbeddingCheck verify_embedding(const CaveBarrier& bar, const DiscreteMeasure& nu_hat,
                                const Lattice& lat, const SimConfig& cfg);

struct ExplosionReport {
    MCReport mc;               // fraction of paths that stay below the cap
    MCReport doubled;          // same seed, cap doubled
    long exploded = 0;
    long flagged = 0;          // step underflow, counted as exploded
    bool below_one = false;    // the interval excludes 1
};

/// Estimates E[L_t] as the probability that dX = 4 X^3 dt + dW started at 0
/// stays below the cap until t_end. Steps are dt_sim / (1 + X^4).
ExplosionReport strict_local_martingale_probe(double t_end, const SimConfig& cfg);

struct PathwiseBound {
    long n_paths = 0;
    long violations = 0;
    double max_log_gap = 0.0;  // max over paths of log L_t - B_t^4 (must be <= 0)
    double min_L = 0.0;
};

/// Simulates Brownian paths with step dt_sim and checks
/// 0 <= L_t = exp(B_t^4 - 2 int (3B^2 + 4B^6) ds) <= exp(B_t^4), with the
/// integral by the trapezoid rule.
PathwiseBound pathwise_bound(double t_end, const SimConfig& cfg);

/// Normal quantile for a two-sided interval at the given confidence.
double two_sided_z(double confidence);

}  // namespace skemb
