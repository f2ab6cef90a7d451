#include "skemb/simplex.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "skemb/error.hpp"

namespace skemb {

int LinearProgram::add_column(double c, const std::vector<std::pair<int, double>>& entries) {
    for (const auto& [r, v] : entries) {
        if (r < 0 || r >= rows) throw InvalidInput("LP column entry has an out-of-range row");
        if (v == 0.0) continue;
        row_index.push_back(r);
        value.push_back(v);
    }
    col_start.push_back(row_index.size());
    cost.push_back(c);
    return cols() - 1;
}

std::string to_string(LpStatus s) {
    switch (s) {
        case LpStatus::Optimal: return "optimal";
        case LpStatus::Infeasible: return "infeasible";
        case LpStatus::Unbounded: return "unbounded";
        case LpStatus::IterationLimit: return "iteration-limit";
    }
    return "unknown";
}

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr double kStableFraction = 0.01;
constexpr double kSmallPivot = 1e-5;
constexpr double kZeroTol = 1e-13;  // basic values below this are roundoff

class Solver {
public:
    Solver(const LinearProgram& lp, const SimplexOptions& opt)
        : lp_(lp), opt_(opt), m_(lp.rows), n_(lp.cols()), sign_(static_cast<std::size_t>(m_), 1.0) {
        if (static_cast<int>(lp.rhs.size()) != m_ ||
            lp.col_start.size() != static_cast<std::size_t>(n_) + 1) {
            throw InvalidInput("malformed linear program");
        }
        b_.resize(m_);
        for (int i = 0; i < m_; ++i) {
            if (lp.rhs[i] < 0.0) sign_[i] = -1.0;
            b_(i) = sign_[i] * lp.rhs[i];
        }
        max_iter_ = opt.max_iterations > 0 ? opt.max_iterations : 100L * (m_ + n_ + 1);
    }

    LpResult run() {
        LpResult res;
        basis_.resize(static_cast<std::size_t>(m_));
        position_.assign(static_cast<std::size_t>(n_ + m_), -1);
        for (int i = 0; i < m_; ++i) {
            basis_[i] = n_ + i;
            position_[n_ + i] = i;
        }

        // Phase one: minimize the sum of artificials.
        cost_.assign(static_cast<std::size_t>(n_ + m_), 0.0);
        for (int i = 0; i < m_; ++i) cost_[n_ + i] = 1.0;
        phase_ = 1;
        refactor();
        LpStatus st = iterate();
        if (st == LpStatus::IterationLimit) return finish(res, st);
        if (st == LpStatus::Unbounded) throw Diverged("simplex lost accuracy in phase one");
        double art = 0.0;
        for (int i = 0; i < m_; ++i) {
            if (basis_[i] >= n_) art += std::max(0.0, xb_(i));
        }
        res.phase1_residual = art;
        if (art > opt_.feas_tol * std::max(1.0, b_.lpNorm<1>())) {
            for (int i = 0; i < m_; ++i) {
                if (basis_[i] >= n_ && xb_(i) > opt_.feas_tol) res.infeasible_rows.push_back(basis_[i] - n_);
            }
            std::sort(res.infeasible_rows.begin(), res.infeasible_rows.end());
            return finish(res, LpStatus::Infeasible);
        }
        // Replace b by what the structural basics produce, so the leftover
        // artificial residue (below tolerance) cannot leak into phase two.
        b_.setZero();
        for (int i = 0; i < m_; ++i) {
            if (basis_[i] >= n_) continue;
            const double v = std::max(0.0, xb_(i));
            for_column(basis_[i], [&](int r, double a) { b_(r) += a * v; });
        }
        refactor();
        drive_out_artificials();

        // Phase two.
        for (int j = 0; j < n_; ++j) cost_[j] = lp_.cost[j];
        for (int i = 0; i < m_; ++i) cost_[n_ + i] = 0.0;
        phase_ = 2;
        refactor();
        st = iterate();
        return finish(res, st);
    }

private:
    template <class F>
    void for_column(int j, F&& f) const {
        if (j >= n_) {
            f(j - n_, 1.0);
            return;
        }
        for (std::size_t p = lp_.col_start[j]; p < lp_.col_start[j + 1]; ++p) {
            const int r = lp_.row_index[p];
            f(r, sign_[r] * lp_.value[p]);
        }
    }

    int rank(int j) const { return opt_.reverse_order ? (n_ + m_ - 1 - j) : j; }

    void refactor() {
        RowMatrix B = RowMatrix::Zero(m_, m_);
        for (int i = 0; i < m_; ++i) {
            for_column(basis_[i], [&](int r, double v) { B(r, i) += v; });
        }
        Eigen::PartialPivLU<RowMatrix> lu(B);
        binv_ = lu.inverse();
        xb_ = binv_ * b_;
        xb_ += binv_ * (b_ - B * xb_);  // one step of iterative refinement
        Eigen::VectorXd cb(m_);
        for (int i = 0; i < m_; ++i) cb(i) = cost_[basis_[i]];
        y_ = binv_.transpose() * cb;
        since_refactor_ = 0;
    }

    double reduced_cost(int j) const {
        double d = cost_[j];
        for_column(j, [&](int r, double v) { d -= y_(r) * v; });
        return d;
    }

    Eigen::VectorXd ftran(int j) const {
        Eigen::VectorXd w = Eigen::VectorXd::Zero(m_);
        for_column(j, [&](int r, double v) { w.noalias() += v * binv_.col(r); });
        return w;
    }

    // Artificials never re-enter once they leave.
    bool may_enter(int j) const { return j < n_ && position_[j] < 0; }

    int choose_entering(bool bland, double& dq) const {
        int best = -1;
        double best_d = -opt_.opt_tol;
        for (int j = 0; j < n_; ++j) {
            if (!may_enter(j)) continue;
            const double d = reduced_cost(j);
            if (d >= -opt_.opt_tol) continue;
            if (bland) {
                if (best < 0 || rank(j) < rank(best)) {
                    best = j;
                    best_d = d;
                }
            } else if (d < best_d || (d == best_d && best >= 0 && rank(j) < rank(best))) {
                best = j;
                best_d = d;
            }
        }
        dq = best_d;
        return best;
    }

    // Minimum ratio test. Near-ties are resolved toward the largest pivot in
    // Dantzig mode and toward the smallest rank in Bland mode; pivots far
    // below the largest tied one are skipped when an alternative exists.
    int ratio_test(const Eigen::VectorXd& w, double& theta, bool bland) const {
        auto pivot_of = [&](int i) {
            const bool fixed = phase_ == 2 && basis_[i] >= n_;
            return fixed ? std::abs(w(i)) : w(i);
        };
        auto ratio_of = [&](int i) {
            if (phase_ == 2 && basis_[i] >= n_) return 0.0;  // artificial fixed at zero
            const double x = xb_(i) > kZeroTol ? xb_(i) : 0.0;
            return x / w(i);
        };
        double best = std::numeric_limits<double>::infinity();
        for (int i = 0; i < m_; ++i) {
            if (pivot_of(i) > opt_.pivot_tol) best = std::min(best, ratio_of(i));
        }
        if (!std::isfinite(best)) return -1;
        const double tie = 1e-12 * (1.0 + best);
        double wmax = 0.0;
        for (int i = 0; i < m_; ++i) {
            const double p = pivot_of(i);
            if (p > opt_.pivot_tol && ratio_of(i) <= best + tie) wmax = std::max(wmax, p);
        }
        int r = -1;
        for (int i = 0; i < m_; ++i) {
            const double p = pivot_of(i);
            if (p <= opt_.pivot_tol || ratio_of(i) > best + tie || p < kStableFraction * wmax) continue;
            if (r < 0) {
                r = i;
                continue;
            }
            const double pr = pivot_of(r);
            const bool better = bland ? rank(basis_[i]) < rank(basis_[r])
                                      : (p > pr || (p == pr && rank(basis_[i]) < rank(basis_[r])));
            if (better) r = i;
        }
        theta = ratio_of(r);
        return r;
    }

    void pivot(int q, int r, const Eigen::VectorXd& w, double theta, double dq) {
        xb_.noalias() -= theta * w;
        xb_(r) = theta;
        const double wr = w(r);
        y_.noalias() += (dq / wr) * binv_.row(r).transpose();
        Eigen::RowVectorXd row = binv_.row(r) / wr;
        binv_.noalias() -= w * row;
        binv_.row(r) = row;

        position_[basis_[r]] = -1;
        basis_[r] = q;
        position_[q] = r;
        ++iterations_;
        if (++since_refactor_ >= opt_.refactor_every || std::abs(wr) < kSmallPivot) refactor();
    }

    LpStatus iterate() {
        int stall = 0;
        while (true) {
            if (iterations_ >= max_iter_) return LpStatus::IterationLimit;
            const bool bland = opt_.pricing == Pricing::Bland || stall >= opt_.stall_limit;
            double dq = 0.0;
            int q = choose_entering(bland, dq);
            if (q < 0) {
                if (since_refactor_ == 0) return LpStatus::Optimal;
                refactor();
                q = choose_entering(bland, dq);
                if (q < 0) return LpStatus::Optimal;
            }
            Eigen::VectorXd w = ftran(q);
            double theta = 0.0;
            const int r = ratio_test(w, theta, bland);
            if (r < 0) {
                if (since_refactor_ > 0) {
                    refactor();
                    continue;
                }
                return LpStatus::Unbounded;
            }
            if (theta * std::abs(dq) <= 1e-14) ++stall;
            else stall = 0;
            pivot(q, r, w, theta, dq);
        }
    }

    void drive_out_artificials() {
        for (int i = 0; i < m_; ++i) {
            if (basis_[i] < n_) continue;
            int best = -1;
            double best_a = 1e-7;
            for (int j = 0; j < n_; ++j) {
                if (position_[j] >= 0) continue;
                double a = 0.0;
                for_column(j, [&](int r, double v) { a += binv_(i, r) * v; });
                if (std::abs(a) > best_a) {
                    best_a = std::abs(a);
                    best = j;
                }
            }
            if (best < 0) continue;  // redundant row
            // The artificial is zero within tolerance; a degenerate pivot
            // keeps the other basics feasible.
            xb_(i) = 0.0;
            Eigen::VectorXd w = ftran(best);
            pivot(best, i, w, 0.0, 0.0);
        }
    }

    LpResult& finish(LpResult& res, LpStatus st) {
        if (since_refactor_ > 0) refactor();
        res.status = st;
        res.iterations = iterations_;
        res.x.assign(static_cast<std::size_t>(n_), 0.0);
        for (int i = 0; i < m_; ++i) {
            if (basis_[i] < n_) {
                const double v = xb_(i);
                res.x[basis_[i]] = std::abs(v) < 1e-14 ? 0.0 : v;
            }
        }
        res.y.resize(static_cast<std::size_t>(m_));
        for (int i = 0; i < m_; ++i) res.y[i] = sign_[i] * y_(i);
        res.basis = basis_;
        double obj = 0.0;
        for (int j = 0; j < n_; ++j) obj += lp_.cost[j] * res.x[j];
        res.objective = obj;
        return res;
    }

    const LinearProgram& lp_;
    SimplexOptions opt_;
    int m_;
    int n_;
    std::vector<double> sign_;
    Eigen::VectorXd b_;
    std::vector<double> cost_;
    std::vector<int> basis_;
    std::vector<int> position_;
    RowMatrix binv_;
    Eigen::VectorXd xb_;
    Eigen::VectorXd y_;
    int phase_ = 1;
    int since_refactor_ = 0;
    long iterations_ = 0;
    long max_iter_ = 0;
};

}  // namespace

LpResult solve_lp(const LinearProgram& lp, const SimplexOptions& opt) {
    Solver s(lp, opt);
    return s.run();
}

}  // namespace skemb
