#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "skemb/lattice.hpp"
#include "skemb/reward.hpp"
#include "skemb/simplex.hpp"

namespace skemb {

/// Depth-n binary tree of +-1 walk prefixes in heap order: the root is 0 and
/// the children of node i are 2i+1 (step -1) and 2i+2 (step +1). Optional
/// absorbing levels end the walk, so nodes below an absorbed node are never
/// reached.
class WalkTree {
public:
    WalkTree(int depth, std::optional<int> absorb_lo = std::nullopt,
             std::optional<int> absorb_hi = std::nullopt);

    int depth() const { return depth_; }
    std::size_t size() const { return level_.size(); }
    int time(std::size_t node) const { return time_[node]; }
    int level(std::size_t node) const { return level_[node]; }
    /// Probability of the prefix under the fair walk, 2^-time.
    double weight(std::size_t node) const;
    bool absorbed(std::size_t node) const;
    /// The walk can arrive at node (no absorbed strict ancestor).
    bool alive(std::size_t node) const { return alive_[node] != 0; }
    /// Stopping is forced: leaf or absorbing level.
    bool terminal(std::size_t node) const;
    std::optional<int> absorb_lo() const { return lo_; }
    std::optional<int> absorb_hi() const { return hi_; }

    static std::size_t child(std::size_t node, bool up) { return 2 * node + 1 + (up ? 1 : 0); }
    static std::size_t parent(std::size_t node) { return (node - 1) / 2; }
    /// Node reached after k steps along the path with the given id.
    std::size_t node_on_path(std::uint32_t path_id, int k) const;
    std::uint32_t path_count() const { return std::uint32_t{1} << depth_; }
    /// Steps from the root to node.
    std::vector<int8_t> prefix(std::size_t node) const;

private:
    int depth_;
    std::optional<int> lo_;
    std::optional<int> hi_;
    std::vector<int> time_;
    std::vector<int> level_;
    std::vector<char> alive_;
};

/// Randomized stopping kernel on a WalkTree: stop[i] is the probability of
/// stopping at node i given arrival. Terminal nodes stop surely.
class TreeKernel {
public:
    TreeKernel(const WalkTree& tree, std::vector<double> stop);
    /// Kernel that never stops before a terminal node.
    static TreeKernel run_to_end(const WalkTree& tree);

    const WalkTree& tree() const { return tree_; }
    double stop(std::size_t node) const { return stop_[node]; }
    std::span<const double> stop_table() const { return stop_; }

    /// Unconditional arriving and stopped mass per node.
    std::vector<double> arrival() const;
    std::vector<double> stopped() const;
    /// xi_omega([0, k]) along the path with the given id.
    double cdf(std::uint32_t path_id, int k) const;
    /// Law of the stopping level, indexed by level + depth.
    std::vector<double> level_law() const;
    DiscreteMeasure embedded() const;
    double value(const PathReward& G) const;
    bool deterministic(double tol = 1e-12) const;

private:
    WalkTree tree_;
    std::vector<double> stop_;
};

struct TreeBruteOptions {
    bool markovian = false;  // payoff depends on (time, level) only; enables memoization
    std::size_t max_states = 4'000'000;
    std::size_t max_lp_nodes = 6000;
    SimplexOptions simplex{};
};

struct TreeBruteResult {
    double value = 0.0;
    /// Smallest value over feasible kernels (deterministic mode only).
    double min_value = 0.0;
    std::vector<double> stop;  // argmax kernel, usable with TreeKernel
    std::size_t states = 0;
    long lp_iterations = 0;
};

/// Maximizes the payoff over kernels embedding nu_hat on the tree. With
/// deterministic_only, searches all adapted {0,1} kernels; otherwise solves
/// the exact path-indexed LP. Throws Infeasible when nothing embeds nu_hat.
TreeBruteResult brute_force_tree(const PathReward& G, const DiscreteMeasure& nu_hat,
                                 const WalkTree& tree, bool deterministic_only,
                                 const TreeBruteOptions& opt = {});

}  // namespace skemb
