#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "doctest.h"
#include "skemb/simplex.hpp"

using namespace skemb;

namespace {

struct Dense {
    int m, n;
    std::vector<std::vector<double>> A;
    std::vector<double> b, c;
};

LinearProgram to_lp(const Dense& d) {
    LinearProgram lp;
    lp.rows = d.m;
    lp.rhs = d.b;
    for (int j = 0; j < d.n; ++j) {
        std::vector<std::pair<int, double>> e;
        for (int i = 0; i < d.m; ++i) e.push_back({i, d.A[i][j]});
        lp.add_column(d.c[j], e);
    }
    return lp;
}

// Vertex enumeration: every basis of full-rank columns, keep the best
// feasible basic solution. Returns +inf when none is feasible.
double vertex_oracle(const Dense& d) {
    double best = std::numeric_limits<double>::infinity();
    std::vector<int> pick(static_cast<std::size_t>(d.m));
    std::function<void(int, int)> rec = [&](int start, int depth) {
        if (depth == d.m) {
            Eigen::MatrixXd B(d.m, d.m);
            for (int i = 0; i < d.m; ++i)
                for (int k = 0; k < d.m; ++k) B(i, k) = d.A[i][pick[k]];
            Eigen::FullPivLU<Eigen::MatrixXd> lu(B);
            if (lu.rank() < d.m) return;
            Eigen::VectorXd b(d.m);
            for (int i = 0; i < d.m; ++i) b(i) = d.b[i];
            Eigen::VectorXd x = lu.solve(b);
            double obj = 0.0;
            for (int k = 0; k < d.m; ++k) {
                if (x(k) < -1e-9) return;
                obj += d.c[pick[k]] * x(k);
            }
            best = std::min(best, obj);
            return;
        }
        for (int j = start; j < d.n; ++j) {
            pick[depth] = j;
            rec(j + 1, depth + 1);
        }
    };
    rec(0, 0);
    return best;
}

Dense random_bounded(std::mt19937_64& rng, int m, int n) {
    // Include a convexity row so the feasible set is bounded.
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    std::uniform_real_distribution<double> P(0.0, 1.0);
    Dense d{m, n, {}, {}, {}};
    d.A.assign(m, std::vector<double>(n));
    std::vector<double> x0(n);
    for (auto& v : x0) v = P(rng);
    for (int j = 0; j < n; ++j) d.A[0][j] = 1.0;
    for (int i = 1; i < m; ++i)
        for (int j = 0; j < n; ++j) d.A[i][j] = std::round(4 * U(rng)) / 2;
    d.b.assign(m, 0.0);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) d.b[i] += d.A[i][j] * x0[j];
    d.c.resize(n);
    for (auto& v : d.c) v = U(rng);
    return d;
}

void check_duals(const Dense& d, const LpResult& r) {
    double by = 0.0;
    for (int i = 0; i < d.m; ++i) by += d.b[i] * r.y[i];
    CHECK(by == doctest::Approx(r.objective).epsilon(1e-9));
    for (int j = 0; j < d.n; ++j) {
        double red = d.c[j];
        for (int i = 0; i < d.m; ++i) red -= d.A[i][j] * r.y[i];
        CHECK(red >= -1e-9);
        CHECK(std::abs(red * r.x[j]) <= 1e-9);
    }
}

}  // namespace

TEST_CASE("random bounded LPs match vertex enumeration") {
    std::mt19937_64 rng(11);
    for (int t = 0; t < 60; ++t) {
        const int m = 2 + t % 3;
        const int n = m + 3 + t % 4;
        const Dense d = random_bounded(rng, m, n);
        const double oracle = vertex_oracle(d);
        for (Pricing p : {Pricing::Dantzig, Pricing::Bland}) {
            for (bool rev : {false, true}) {
                SimplexOptions opt;
                opt.pricing = p;
                opt.reverse_order = rev;
                const LpResult r = solve_lp(to_lp(d), opt);
                REQUIRE(r.status == LpStatus::Optimal);
                CHECK(r.objective == doctest::Approx(oracle).epsilon(1e-9));
                check_duals(d, r);
            }
        }
    }
}

TEST_CASE("infeasible LP reports the offending rows") {
    // x1 + x2 = 1 and x1 + x2 = 2.
    Dense d{2, 2, {{1, 1}, {1, 1}}, {1, 2}, {0, 0}};
    const LpResult r = solve_lp(to_lp(d));
    CHECK(r.status == LpStatus::Infeasible);
    CHECK_FALSE(r.infeasible_rows.empty());
    CHECK(r.phase1_residual == doctest::Approx(1.0));
}

TEST_CASE("unbounded LP") {
    // min -x1 with x1 - x2 = 0.
    Dense d{1, 2, {{1, -1}}, {0}, {-1, 0}};
    CHECK(solve_lp(to_lp(d)).status == LpStatus::Unbounded);
}

TEST_CASE("redundant rows and negative right-hand sides") {
    // x1 + x2 + x3 = 1, -x1 - x2 - x3 = -1, x1 - x3 = 0; min -x2 + x1.
    Dense d{3, 3, {{1, 1, 1}, {-1, -1, -1}, {1, 0, -1}}, {1, -1, 0}, {1, -1, 0}};
    const LpResult r = solve_lp(to_lp(d));
    REQUIRE(r.status == LpStatus::Optimal);
    CHECK(r.objective == doctest::Approx(-1.0));
    CHECK(r.x[1] == doctest::Approx(1.0));
    check_duals(d, r);
}

TEST_CASE("degenerate transportation LP terminates under both pricings") {
    // 4x4 assignment polytope with a repeated cost: heavy degeneracy.
    Dense d;
    d.m = 8;
    d.n = 16;
    d.A.assign(8, std::vector<double>(16, 0.0));
    d.b.assign(8, 1.0);
    d.c.resize(16);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
            d.A[i][4 * i + j] = 1.0;
            d.A[4 + j][4 * i + j] = 1.0;
            d.c[4 * i + j] = (i + j) % 2;
        }
    for (Pricing p : {Pricing::Dantzig, Pricing::Bland}) {
        SimplexOptions opt;
        opt.pricing = p;
        const LpResult r = solve_lp(to_lp(d), opt);
        REQUIRE(r.status == LpStatus::Optimal);
        CHECK(r.objective == doctest::Approx(0.0));
        check_duals(d, r);
    }
}
