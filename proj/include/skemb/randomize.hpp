#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "skemb/lattice.hpp"
#include "skemb/primal.hpp"
#include "skemb/reward.hpp"
#include "skemb/simplex.hpp"
#include "skemb/tree.hpp"

namespace skemb {

/// First t steps of omega followed by the steps of omega_prime.
TreePath glue(const TreePath& omega, const TreePath& omega_prime, int t);

/// Space-time radius eta on a grid of step dx (dt = dx^2). The level radii
/// are rounded up to the grid: inner = ceil(eta/dx), outer = max(inner,
/// ceil(sqrt(eta)/dx)).
struct EtaBound {
    double dx = 1.0;
    double eta = 1.0;
    int inner = 1;
    int outer = 1;

    /// First index k with |(k dt, level_k dx)| >= eta, or -1 if none.
    int tau(std::span<const int8_t> steps) const;
};

EtaBound make_eta_bound(double dx, double eta);

/// Strict: (tau + xi)([0,t]) = 1{tau < t} xi([0, t - tau]).
/// Inclusive: 1{tau <= t} xi([0, t - tau]), so xi's mass at 0 lands on tau.
enum class ShiftConvention { Strict, Inclusive };

/// Shifts xi by the deterministic rule tau. The result lives on tau's tree;
/// xi runs on the increments after tau. Throws InvalidInput if tau is not
/// deterministic or xi's tree is shallower than some residual depth.
TreeKernel shift_time(const TreeKernel& xi, const TreeKernel& tau,
                      ShiftConvention conv = ShiftConvention::Strict);

/// inf{t : xi_omega([0,t]) >= u}. omega must reach a terminal node or the
/// crossing.
int quantile_time(const TreeKernel& xi, double u, const TreePath& omega);

/// Kernel whose law is w * a + (1 - w) * b on a common tree.
TreeKernel mix_kernels(const TreeKernel& a, const TreeKernel& b, double w);

/// Total variation distance between two measures on levels.
double total_variation(const DiscreteMeasure& a, const DiscreteMeasure& b);

struct EtaOptions {
    int rho_window = 12;   // steps allowed for the return-or-escape time
    int chi_horizon = 0;   // lattice horizon for chi; 0 uses xi's depth
    SimplexOptions simplex{};
};

struct EtaApproximation {
    TreeKernel kernel;
    EtaBound bound;
    StoppingRule chi;        // on chi_lattice, started from +-outer
    Lattice chi_lattice;
    double escape_mass = 0.0;      // W{|omega(rho)| = outer}
    double unresolved_mass = 0.0;  // W{rho > rho_window}
    double law_distortion = 0.0;   // TV between the embedded law and nu_hat
};

/// Restarts xi at rho when the walk is back at 0 and runs an LP embedding
/// chi of nu_hat from the two-point law at +-outer otherwise. rho is the
/// first visit to {0, +-outer} at or after the first visit to +-inner.
/// Throws InvalidInput if nu_hat = delta_0, if the two-point law is not below
/// nu_hat in convex order, or if xi does not embed nu_hat.
EtaApproximation eta_approximate(const TreeKernel& xi, const EtaBound& eb,
                                 const DiscreteMeasure& nu_hat, const EtaOptions& opt = {});

struct DerandomizeReport {
    TreeKernel rule;       // deterministic
    TreeKernel averaged;   // xi averaged over prefixes sharing a class
    int n0 = 0;
    std::size_t classes = 0;
    double mean_atom = 0.0;  // average over prefixes of 1 / (class size)
    std::vector<double> randomized_values;
    std::vector<double> deterministic_values;
    std::vector<double> replication_error;
    double law_distortion = 0.0;  // TV between the two embedded laws
};

/// Replaces the randomization of xi by the prefix of length n0. Prefixes are
/// grouped by (tau_eta, level at tau_eta, level at n0); inside a group they
/// are ranked lexicographically and the rank midpoint u drives
/// quantile_time of the averaged kernel. Throws InvalidInput if tau_eta is
/// not reached within n0 steps on some path or xi stops before n0.
DerandomizeReport derandomize(const TreeKernel& xi, const EtaBound& eb, int n0,
                              const std::vector<PathReward>& payoffs);

}  // namespace skemb
