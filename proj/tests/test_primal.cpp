#include <cmath>
#include <random>

#include "doctest.h"
#include "skemb/error.hpp"
#include "skemb/primal.hpp"
#include "skemb/tree.hpp"

using namespace skemb;

namespace {

MarkovReward time_reward(const Lattice& lat) {
    return tabulate([](double t, double) { return t; }, lat);
}

DiscreteMeasure three_point() { return DiscreteMeasure({{-2, 0.25}, {0, 0.5}, {2, 0.25}}); }

MarkovReward cave_table(const Lattice& lat) {
    CaveSpec s;
    s.t_p = 1.0;
    s.g = [](double t) { return t <= 1.0 ? std::exp(-t) : std::exp(-1.0) * (2.0 - std::exp(-(t - 1.0))); };
    s.dt = lat.dt();
    s.t_max = lat.t(lat.horizon());
    return tabulate(validate_cave(s), lat);
}

MarkovReward random_table(const Lattice& lat, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> U(0.0, 1.0);
    std::vector<double> t(lat.node_count());
    for (auto& v : t) v = U(rng);
    return MarkovReward(lat, std::move(t));
}

// Complementary slackness and dual feasibility of the LP duals.
void check_duals(const PrimalLpResult& r, const MarkovReward& G, const Lattice& lat) {
    for (int k = 0; k <= lat.horizon(); ++k) {
        for (int j = lat.j_min(); j <= lat.j_max(); ++j) {
            const std::size_t n = lat.node(k, j);
            if (!r.support[n]) continue;
            const double v = r.flow_dual[n];
            const double psi = r.psi_hat[static_cast<std::size_t>(lat.level_index(j))];
            CHECK(v + psi >= G(k, j) - 1e-9);
            if (r.flow.q[n] > 1e-12) CHECK(std::abs(v + psi - G(k, j)) <= 1e-9);
            if (k < lat.horizon() && lat.is_interior(j)) {
                const double cont = 0.5 * (r.flow_dual[lat.node(k + 1, j - 1)] + r.flow_dual[lat.node(k + 1, j + 1)]);
                CHECK(v >= cont - 1e-9);
                if (r.flow.m[n] - r.flow.q[n] > 1e-12) CHECK(std::abs(v - cont) <= 1e-9);
            }
        }
    }
    CHECK(r.dual_value == doctest::Approx(r.flow.value).epsilon(1e-9));
}

}  // namespace

TEST_CASE("running to the boundary of [-1,1]") {
    const Lattice lat = build_lattice(-1.0, 1.0, 1.0, 0.5);
    const MarkovReward G = time_reward(lat);
    const FlowSolution fs = evaluate_rule(make_rule(lat, [](int, int) { return 0.0; }), G, lat);
    CHECK(fs.embedded.mass(-1) == doctest::Approx(0.5));
    CHECK(fs.embedded.mass(1) == doctest::Approx(0.5));
    CHECK(fs.mean_time == doctest::Approx(lat.dt()));
    CHECK(fs.m[lat.node(0, 0)] == 1.0);
}

TEST_CASE("stopping at the root embeds the point mass") {
    const Lattice lat = build_lattice(-2.0, 2.0, 1.0, 1e-6);
    const MarkovReward G = tabulate([](double t, double x) { return 3.0 + x - t; }, lat);
    const FlowSolution fs = evaluate_rule(make_rule(lat, [](int k, int) { return k == 0 ? 1.0 : 0.0; }), G, lat);
    CHECK(fs.embedded.atoms().size() == 1);
    CHECK(fs.embedded.mass(0) == 1.0);
    CHECK(fs.value == doctest::Approx(3.0));
}

TEST_CASE("flow invariants under random rules") {
    const Lattice lat = build_lattice(-3.0, 2.0, 1.0, 1e-6);
    const MarkovReward G = time_reward(lat);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    for (int t = 0; t < 20; ++t) {
        std::vector<double> a(lat.node_count());
        for (auto& v : a) v = U(rng);
        const FlowSolution fs = evaluate_rule(make_rule(lat, [&](int k, int j) { return a[lat.node(k, j)]; }), G, lat);
        double total = 0.0;
        for (int k = 0; k <= lat.horizon(); ++k) {
            for (int j = lat.j_min(); j <= lat.j_max(); ++j) {
                const std::size_t n = lat.node(k, j);
                CHECK(fs.q[n] <= fs.m[n] + 1e-15);
                total += fs.q[n];
                if (k > 0) {
                    double in = 0.0;
                    for (int p : {j - 1, j + 1}) {
                        if (p > lat.j_min() && p < lat.j_max()) in += 0.5 * (fs.m[lat.node(k - 1, p)] - fs.q[lat.node(k - 1, p)]);
                    }
                    CHECK(fs.m[n] == doctest::Approx(in).epsilon(1e-12));
                }
            }
        }
        CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
        // Discrete Wald identity: E[tau] * dt equals the second moment.
        CHECK(fs.mean_time == doctest::Approx(fs.embedded.second_moment(1.0)).epsilon(1e-9));
    }
}

TEST_CASE("LP on the two-point target of [-1,1]") {
    const Lattice lat = build_lattice(-1.0, 1.0, 1.0, 0.5);
    const DiscreteMeasure nu({{-1, 0.5}, {1, 0.5}});
    const MarkovReward G = time_reward(lat);
    const PrimalLpResult r = solve_primal_lp(G, nu, lat);
    CHECK(r.flow.value == doctest::Approx(1.0).epsilon(1e-12));
    check_duals(r, G, lat);
}

TEST_CASE("Wald identity: every rule embedding the target has the same expected time") {
    const Lattice lat = build_lattice(-2.0, 2.0, 1.0, 1e-6);
    const DiscreteMeasure nu = three_point();
    const MarkovReward G = time_reward(lat);
    const PrimalLpResult r = solve_primal_lp(G, nu, lat);
    CHECK(std::abs(r.flow.value - 2.0) <= 1e-9);
    check_duals(r, G, lat);
    // Feasible rules from random objectives, evaluated under the time reward.
    std::mt19937_64 rng(99);
    for (int t = 0; t < 10; ++t) {
        const PrimalLpResult ri = solve_primal_lp(random_table(lat, rng), nu, lat);
        const FlowSolution fs = evaluate_rule(rule_from_flow(ri.flow, lat), G, lat);
        CHECK(std::abs(fs.value - 2.0) <= 1e-9);
        CHECK(fs.embedded.mass(0) == doctest::Approx(0.5).epsilon(1e-9));
    }
}

TEST_CASE("LP dominates every feasible rule and satisfies slackness") {
    const Lattice lat = build_lattice(-2.0, 2.0, 1.0, 1e-6);
    const DiscreteMeasure nu = three_point();
    std::mt19937_64 rng(3);
    for (int t = 0; t < 5; ++t) {
        const MarkovReward G = random_table(lat, rng);
        const PrimalLpResult r = solve_primal_lp(G, nu, lat);
        check_duals(r, G, lat);
        for (int s = 0; s < 5; ++s) {
            const PrimalLpResult other = solve_primal_lp(random_table(lat, rng), nu, lat);
            const FlowSolution fs = evaluate_rule(rule_from_flow(other.flow, lat), G, lat);
            CHECK(fs.value <= r.flow.value + 1e-9);
        }
    }
}

TEST_CASE("cave LP matches the path-indexed tree LP and beats deterministic rules") {
    const Lattice lat(1.0, -2, 2, 8);
    const DiscreteMeasure nu = three_point();
    const MarkovReward G = cave_table(lat);
    const PrimalLpResult r = solve_primal_lp(G, nu, lat);
    check_duals(r, G, lat);

    const WalkTree tree(8, -2, 2);
    const PathReward PG = markov_path_reward([&](int k, int level) { return G(k, level); });
    const TreeBruteResult tr = brute_force_tree(PG, nu, tree, false);
    CHECK(tr.value == doctest::Approx(r.flow.value).epsilon(1e-9));

    // Exhaustive search over deterministic Markovian rules on the 12 interior nodes.
    std::vector<std::size_t> interior;
    for (int k = 0; k < lat.horizon(); ++k)
        for (int j = -1; j <= 1; ++j)
            if (lat.reachable(k, j)) interior.push_back(lat.node(k, j));
    REQUIRE(interior.size() == 12);
    int feasible = 0;
    for (unsigned mask = 0; mask < (1u << interior.size()); ++mask) {
        std::vector<double> a(lat.node_count(), 0.0);
        for (std::size_t b = 0; b < interior.size(); ++b) a[interior[b]] = (mask >> b) & 1u;
        const FlowSolution fs = evaluate_rule(make_rule(lat, [&](int k, int j) { return a[lat.node(k, j)]; }), G, lat);
        bool ok = true;
        for (int j = -2; j <= 2; ++j) ok = ok && std::abs(fs.embedded.mass(j) - nu.mass(j)) <= 1e-12;
        if (!ok) continue;
        ++feasible;
        CHECK(fs.value <= r.flow.value + 1e-12);
    }
    CHECK(feasible > 0);
}

TEST_CASE("infeasible target reports the levels") {
    const Lattice lat(1.0, -2, 2, 1);
    try {
        solve_primal_lp(time_reward(lat), three_point(), lat);
        FAIL("expected infeasibility");
    } catch (const Infeasible& e) {
        CHECK(std::string(e.what()).find("levels") != std::string::npos);
    }
    // With horizon 2, at most 1/4 of the mass can reach -2.
    const Lattice lat2(1.0, -2, 2, 2);
    const DiscreteMeasure heavy({{-2, 1.0 / 3.0}, {1, 2.0 / 3.0}});
    CHECK_THROWS_AS(solve_primal_lp(time_reward(lat2), heavy, lat2), Infeasible);
    const DiscreteMeasure wide({{-2, 0.125}, {-1, 0.25}, {0, 0.25}, {1, 0.25}, {2, 0.125}});
    const PrimalLpResult r = solve_primal_lp(time_reward(lat2), wide, lat2);
    CHECK(r.flow.value == doctest::Approx(wide.second_moment(1.0)));
}

TEST_CASE("initial law on two levels") {
    const Lattice lat(1.0, -3, 3, 60);
    const DiscreteMeasure init({{-1, 0.5}, {1, 0.5}});
    const DiscreteMeasure nu({{-3, 0.125}, {-1, 0.375}, {1, 0.375}, {3, 0.125}});
    const MarkovReward G = time_reward(lat);
    const PrimalLpResult r = solve_primal_lp(G, nu, lat, {}, &init);
    // Wald from a non-degenerate start: E[tau] = E[X^2] - E[X_0^2].
    CHECK(r.flow.value == doctest::Approx(nu.second_moment(1.0) - 1.0).epsilon(1e-9));
    const FlowSolution fs = evaluate_rule(rule_from_flow(r.flow, lat), G, lat, &init);
    CHECK(fs.value == doctest::Approx(r.flow.value).epsilon(1e-9));
}

TEST_CASE("adjacent uncharged levels are never entered") {
    const Lattice lat = build_lattice(-2.0, 2.0, 1.0, 1e-6);
    const DiscreteMeasure trapped({{-2, 0.4}, {1, 0.4}, {2, 0.2}});
    CHECK_THROWS_AS(solve_primal_lp(time_reward(lat), trapped, lat), Infeasible);

    const Lattice wide = build_lattice(-4.0, 4.0, 1.0, 1e-6);
    const DiscreteMeasure nu({{-1, 0.5}, {1, 0.5}});
    const PrimalLpResult r = solve_primal_lp(time_reward(wide), nu, wide);
    CHECK(r.flow.value == doctest::Approx(1.0).epsilon(1e-12));
    for (int k = 0; k <= wide.horizon(); ++k) {
        for (int j : {-4, -3, -2, 2, 3, 4}) CHECK(r.flow.m[wide.node(k, j)] == 0.0);
    }
}
