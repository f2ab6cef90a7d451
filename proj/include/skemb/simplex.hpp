#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace skemb {

/// min c'x subject to A x = b, x >= 0, with A stored column-wise.
struct LinearProgram {
    int rows = 0;
    std::vector<std::size_t> col_start{0};  // CSC offsets, size cols()+1
    std::vector<int> row_index;
    std::vector<double> value;
    std::vector<double> cost;
    std::vector<double> rhs;

    int cols() const { return static_cast<int>(cost.size()); }
    /// Appends a column; entries with equal rows are not merged.
    int add_column(double c, const std::vector<std::pair<int, double>>& entries);
};

enum class Pricing {
    Dantzig,  // most negative reduced cost, Bland rule while degenerate pivots stall
    Bland,    // smallest eligible index throughout
};

struct SimplexOptions {
    Pricing pricing = Pricing::Dantzig;
    /// Reverses the index order used by Bland choices and tie-breaks.
    bool reverse_order = false;
    int refactor_every = 200;
    int stall_limit = 50;
    long max_iterations = 0;  // 0 means 100 * (rows + cols)
    double feas_tol = 1e-9;
    double opt_tol = 1e-10;
    double pivot_tol = 1e-9;
};

enum class LpStatus { Optimal, Infeasible, Unbounded, IterationLimit };

std::string to_string(LpStatus s);

struct LpResult {
    LpStatus status = LpStatus::IterationLimit;
    double objective = 0.0;
    std::vector<double> x;      // primal solution, size cols()
    std::vector<double> y;      // row duals: c_j - y'A_j >= 0 at optimum
    std::vector<int> basis;     // basic variable per row; >= cols() means artificial
    long iterations = 0;
    /// Rows whose artificial variable stayed positive after phase one.
    std::vector<int> infeasible_rows;
    double phase1_residual = 0.0;
};

/// Two-phase revised simplex with a dense basis inverse, rank-one updates
/// and periodic refactorization. Deterministic for fixed options.
LpResult solve_lp(const LinearProgram& lp, const SimplexOptions& opt = {});

}  // namespace skemb
