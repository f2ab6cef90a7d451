#include <cmath>

#include "doctest.h"
#include "skemb/diagnostics.hpp"
#include "skemb/error.hpp"

using namespace skemb;

namespace {

CaveReward exp_cave(double t_max) {
    CaveSpec s;
    s.t_p = 1.0;
    s.dt = 0.01;
    s.t_max = t_max;
    s.g = [](double t) { return t <= 1.0 ? std::exp(-0.5 * t) : std::exp(-0.5) * (2.0 - std::exp(-0.5 * (t - 1.0))); };
    return validate_cave(s);
}

struct CaveCase {
    Lattice lat = build_lattice(-2.0, 2.0, 1.0, 1e-6);
    DiscreteMeasure nu{{{-2, 0.25}, {-1, 0.25}, {1, 0.25}, {2, 0.25}}};
    CaveBarrier optimal;
    CaveBarrier perturbed;

    CaveCase() {
        const CaveReward g = exp_cave(lat.t(lat.horizon()) + 1.0);
        const PrimalLpResult lp = solve_primal_lp(tabulate(g, lat), nu, lat);
        optimal = extract_barrier(lp.flow, g, lat).barrier;
        perturbed = optimal;
        perturbed.r[static_cast<std::size_t>(lat.level_index(1))] -= 2.0 * lat.dt();
        perturbed = regularize(perturbed, lat);
    }
};

SimConfig small(long n, std::uint64_t seed) {
    SimConfig c;
    c.n_paths = n;
    c.seed = seed;
    return c;
}

}  // namespace

TEST_CASE("exit rule of [-1,1]") {
    const Lattice lat(1.0, -1, 1, 40);
    const StoppingRule rule = make_rule(lat, [](int, int) { return 0.0; });
    const DiscreteMeasure nu({{-1, 0.5}, {1, 0.5}});
    double prev = 1.0;
    for (long n : {1000L, 100000L}) {
        const EmbeddingCheck e = verify_embedding(rule, nu, lat, small(n, 7));
        CHECK(e.exact_distance == 0.0);
        CHECK(e.pass);
        CHECK(e.mc.estimate < prev);
        CHECK(e.mc.estimate <= e.mc.half_width);
        prev = e.mc.estimate;
    }
    CHECK(prev < 0.01);
}

TEST_CASE("LP-optimal cave rule and a perturbed barrier") {
    const CaveCase cc;
    const EmbeddingCheck opt = verify_embedding(cc.optimal, cc.nu, cc.lat, small(20000, 3));
    CHECK(opt.exact_distance <= 1e-9);
    CHECK(opt.pass);
    const EmbeddingCheck bad = verify_embedding(cc.perturbed, cc.nu, cc.lat, small(20000, 3));
    CHECK(bad.exact_distance > 1e-3);
    CHECK(bad.pass);
    CHECK(bad.mc.estimate == doctest::Approx(bad.exact_distance).epsilon(0.5));
}

TEST_CASE("95% intervals cover the exact distance") {
    const CaveCase cc;
    int covered = 0;
    for (std::uint64_t s = 0; s < 100; ++s) covered += verify_embedding(cc.perturbed, cc.nu, cc.lat, small(2000, 100 + s)).pass;
    CHECK(covered >= 90);
}

TEST_CASE("simulation is reproducible and independent of the thread count") {
    const CaveCase cc;
    SimConfig a = small(9000, 42);
    a.batch = 1000;
    SimConfig b = a;
    b.threads = 3;
    const EmbeddingCheck x = verify_embedding(cc.perturbed, cc.nu, cc.lat, a);
    const EmbeddingCheck y = verify_embedding(cc.perturbed, cc.nu, cc.lat, b);
    CHECK(x.mc.estimate == y.mc.estimate);
    CHECK(x.mc.half_width == y.mc.half_width);

    SimConfig s = small(3000, 5);
    s.dt_sim = 1e-2;
    const ExplosionReport p = strict_local_martingale_probe(0.5, s);
    // Batches define the substreams, so only the thread count may change.
    s.threads = 4;
    const ExplosionReport q = strict_local_martingale_probe(0.5, s);
    CHECK(p.mc.estimate == q.mc.estimate);
    CHECK(p.doubled.estimate == q.doubled.estimate);
}

TEST_CASE("explosion probe near time 0") {
    SimConfig c = small(2000, 11);
    c.dt_sim = 1e-2;
    const ExplosionReport r = strict_local_martingale_probe(1e-4, c);
    CHECK(r.mc.estimate - r.mc.half_width >= 0.999);
    CHECK(r.flagged == 0);
}

TEST_CASE("explosion probe at time 1 stays below 1") {
    SimConfig c = small(10000, 12);
    c.dt_sim = 1e-2;
    c.confidence = 0.99;
    const ExplosionReport r = strict_local_martingale_probe(1.0, c);
    CHECK(r.below_one);
    CHECK(r.mc.estimate > 0.0);
    CHECK(std::abs(r.mc.estimate - r.doubled.estimate) <= 2.0 * r.mc.half_width);
    CHECK(r.doubled.estimate >= r.mc.estimate);
}

TEST_CASE("pathwise bound on Brownian paths") {
    SimConfig c = small(2000, 13);
    const PathwiseBound b = pathwise_bound(1.0, c);
    CHECK(b.n_paths == 2000);
    CHECK(b.violations == 0);
    CHECK(b.max_log_gap <= 0.0);
    CHECK(b.min_L >= 0.0);
}

TEST_CASE("configuration checks") {
    SimConfig c;
    c.cap = 4.0;
    CHECK_THROWS_AS(strict_local_martingale_probe(1.0, c), InvalidInput);
    c = SimConfig{};
    CHECK_THROWS_AS(strict_local_martingale_probe(0.0, c), InvalidInput);
    c.n_paths = 0;
    CHECK_THROWS_AS(validate(c), InvalidInput);
    c = SimConfig{};
    c.confidence = 1.0;
    CHECK_THROWS_AS(validate(c), InvalidInput);
    CHECK(two_sided_z(0.95) == doctest::Approx(1.959964).epsilon(1e-6));
}
