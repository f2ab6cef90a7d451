#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "skemb/lattice.hpp"

namespace skemb {

/// Reward g(k, j) tabulated on every grid node. Entries must be finite at
/// nodes reachable from (0, 0); non-finite entries elsewhere are zeroed.
class MarkovReward {
public:
    MarkovReward(const Lattice& lat, std::vector<double> table,
                 std::optional<double> bound = std::nullopt);

    double operator()(int k, int j) const { return table_[node(k, j)]; }
    std::span<const double> table() const { return table_; }
    int horizon() const { return K_; }
    int j_min() const { return j_min_; }
    int j_max() const { return j_max_; }
    std::optional<double> bound() const { return bound_; }

    /// max - min over reachable nodes.
    double range() const { return hi_ - lo_; }
    double min_value() const { return lo_; }
    double max_value() const { return hi_; }

private:
    std::size_t node(int k, int j) const {
        return static_cast<std::size_t>(k) * static_cast<std::size_t>(j_max_ - j_min_ + 1) +
               static_cast<std::size_t>(j - j_min_);
    }

    std::vector<double> table_;
    int K_;
    int j_min_;
    int j_max_;
    std::optional<double> bound_;
    double lo_ = 0.0;
    double hi_ = 0.0;
};

using TimeFunction = std::function<double(double)>;
using SpaceTimeFunction = std::function<double(double t, double x)>;

/// Input to validate_cave: either closed-form g or a dense table g(i*dt).
struct CaveSpec {
    double t_p = 0.0;
    TimeFunction g;
    TimeFunction dplus;       // optional; forward difference with step dt when empty
    std::vector<double> table;  // used when g is empty: table[i] = g(i*dt)
    double dt = 0.0;          // grid step for the shape checks
    double t_max = 0.0;       // checks cover [0, t_max]
};

/// Time-only reward that is convex decreasing before t_p and concave
/// increasing after it, as verified on a time grid.
class CaveReward {
public:
    double operator()(double t) const;
    double dplus(double t) const;
    double t_p() const { return t_p_; }
    double lipschitz() const { return lipschitz_; }
    double bound() const { return bound_; }
    double grid_dt() const { return dt_; }
    double t_max() const { return t_max_; }
    /// "supplied" or "forward-difference".
    const std::string& dplus_source() const { return dplus_source_; }

private:
    friend CaveReward validate_cave(const CaveSpec& spec);

    TimeFunction g_;
    TimeFunction dplus_;
    std::vector<double> table_;
    double t_p_ = 0.0;
    double dt_ = 0.0;
    double t_max_ = 0.0;
    double lipschitz_ = 0.0;
    double bound_ = 0.0;
    std::string dplus_source_;
};

/// Checks strict shape conditions by finite differences on the grid i*dt.
/// Throws ShapeViolation naming the first offending triple of grid times.
/// Differences within a few ulps of |g| are treated as undetermined.
CaveReward validate_cave(const CaveSpec& spec);

MarkovReward tabulate(const CaveReward& g, const Lattice& lat);
MarkovReward tabulate(const SpaceTimeFunction& g, const Lattice& lat);

/// Reward on stopped tree paths; the argument is the path prefix up to the
/// stopping index, so the stopping index is prefix.size().
using PathReward = std::function<double(std::span<const int8_t> prefix)>;

/// Path reward induced by a Markovian g(k, level).
PathReward markov_path_reward(std::function<double(int k, int level)> g);

}  // namespace skemb
