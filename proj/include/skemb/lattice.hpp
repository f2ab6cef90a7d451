#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace skemb {

/// Space-time grid for the simple symmetric random walk with step dx and
/// time step dt = dx^2. Levels j_min and j_max are absorbing. Immutable.
class Lattice {
public:
    /// Direct construction; K is the time horizon in steps.
    Lattice(double dx, int j_min, int j_max, int K);

    double dx() const { return dx_; }
    double dt() const { return dt_; }
    int j_min() const { return j_min_; }
    int j_max() const { return j_max_; }
    int horizon() const { return K_; }
    /// Exact probability that a walk from (0,0) is still strictly inside
    /// (j_min, j_max) at step K.
    double residual() const { return residual_; }

    int levels() const { return j_max_ - j_min_ + 1; }
    int level_index(int j) const { return j - j_min_; }
    double x(int j) const { return j * dx_; }
    double t(int k) const { return k * dt_; }
    bool is_boundary(int j) const { return j == j_min_ || j == j_max_; }
    bool is_interior(int j) const { return j > j_min_ && j < j_max_; }

    bool on_grid(int k, int j) const {
        return k >= 0 && k <= K_ && j >= j_min_ && j <= j_max_;
    }
    /// A walk from (0,0) can occupy (k, j): parity k = j (mod 2), |j| <= k.
    bool reachable(int k, int j) const;

    /// Row-major index into a dense (K+1) x levels() table.
    std::size_t node(int k, int j) const {
        return static_cast<std::size_t>(k) * static_cast<std::size_t>(levels()) +
               static_cast<std::size_t>(level_index(j));
    }
    std::size_t node_count() const {
        return static_cast<std::size_t>(K_ + 1) * static_cast<std::size_t>(levels());
    }

private:
    double dx_;
    double dt_;
    int j_min_;
    int j_max_;
    int K_;
    double residual_;
};

/// Probability that the walk from level 0 has not hit j_min or j_max after
/// k steps, for k = 0..K.
std::vector<double> survival_curve(int j_min, int j_max, int K);

/// Grid covering [x_min, x_max] with spacing dx. The horizon is the smallest
/// K >= 1 whose exact survival probability is <= eps_residual.
Lattice build_lattice(double x_min, double x_max, double dx, double eps_residual);

struct Atom {
    int level;
    double mass;
};

struct RealAtom {
    double x;
    double p;
};

/// Atomic measure on grid levels. Atoms are sorted by level, merged, and
/// zero-mass atoms are dropped.
class DiscreteMeasure {
public:
    DiscreteMeasure() = default;
    /// Throws InvalidInput on negative mass or, unless sub_probability is
    /// set, on total mass differing from one by more than mass_tol.
    explicit DiscreteMeasure(std::vector<Atom> atoms, bool sub_probability = false,
                             double mass_tol = 1e-12);

    std::span<const Atom> atoms() const { return atoms_; }
    bool empty() const { return atoms_.empty(); }
    bool sub_probability() const { return sub_probability_; }

    double mass(int level) const;
    double total() const;
    double mean(double dx) const;
    double second_moment(double dx) const;
    bool centered(double dx, double tol = 1e-12) const;
    int min_level() const;
    int max_level() const;

    /// Masses indexed by lat.level_index(); throws if an atom is off-grid.
    std::vector<double> dense(const Lattice& lat) const;
    static DiscreteMeasure from_dense(const Lattice& lat, std::span<const double> masses,
                                      bool sub_probability = false, double mass_tol = 1e-12);

    std::vector<RealAtom> to_real(double dx) const;

private:
    std::vector<Atom> atoms_;
    bool sub_probability_ = false;
};

/// Spreads each atom over its two neighbouring grid levels with barycentric
/// weights, which keeps the mean exact. Throws InvalidInput if the support
/// leaves [x_min, x_max] or the input is not centered.
DiscreteMeasure quantize_measure(std::span<const RealAtom> nu, const Lattice& lat);

/// Wasserstein-1 distance between two finite measures of equal mass on R.
double wasserstein1(std::span<const RealAtom> a, std::span<const RealAtom> b);

/// Path of a walk with steps in {-1, 0, +1}; value at index k is
/// dx * (sum of the first k steps). Tree paths use +-1 only; zero steps
/// represent frozen segments.
class TreePath {
public:
    TreePath() = default;
    explicit TreePath(std::vector<int8_t> steps);

    std::span<const int8_t> steps() const { return steps_; }
    int length() const { return static_cast<int>(steps_.size()); }
    /// Level (in units of dx) after k steps; k is clamped to length().
    int level(int k) const;
    double value(int k, double dx) const { return level(k) * dx; }

    /// Decodes a path id of a depth-n binary tree. The first step is the
    /// most significant bit, bit 1 meaning +1, so numeric order of ids is
    /// lexicographic order of paths.
    static TreePath from_id(std::uint32_t id, int depth);
    /// Constant path at level 0.
    static TreePath zero(int length);

    friend bool operator==(const TreePath&, const TreePath&) = default;

private:
    std::vector<int8_t> steps_;
};

}  // namespace skemb
