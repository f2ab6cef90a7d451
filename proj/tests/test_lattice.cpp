#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "skemb/error.hpp"
#include "skemb/lattice.hpp"

using namespace skemb;

namespace {

// Survival probability of the walk on {j_min..j_max} from the sine eigenbasis
// of the killed walk; independent of the forward recursion.
double survival_spectral(int j_min, int j_max, int k) {
    const int L = j_max - j_min;
    const int i0 = -j_min;
    double p = 0.0;
    for (int m = 1; m < L; ++m) {
        const double th = m * std::numbers::pi / L;
        double s = 0.0;
        for (int i = 1; i < L; ++i) s += std::sin(th * i);
        p += 2.0 / L * std::sin(th * i0) * s * std::pow(std::cos(th), k);
    }
    return p;
}

int horizon_oracle(int j_min, int j_max, double eps) {
    for (int k = 1;; ++k) {
        if (survival_spectral(j_min, j_max, k) <= eps) return k;
    }
}

std::vector<RealAtom> random_centered(std::mt19937_64& rng, double lo, double hi) {
    std::uniform_real_distribution<double> U(0.0, 1.0);
    std::uniform_int_distribution<int> count(2, 8);
    const int n = count(rng);
    std::vector<RealAtom> atoms;
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        atoms.push_back({lo + (hi - lo) * U(rng), 0.05 + U(rng)});
        total += atoms.back().p;
    }
    double mean = 0.0;
    for (auto& a : atoms) {
        a.p /= total;
        mean += a.p * a.x;
    }
    // Shift to mean zero and shrink so the support stays inside [lo, hi].
    double span = 0.0;
    for (auto& a : atoms) span = std::max(span, std::abs(a.x - mean));
    const double s = std::min(-lo, hi) / span;
    for (auto& a : atoms) a.x = (a.x - mean) * std::min(1.0, s);
    double m2 = 0.0;
    for (auto& a : atoms) m2 += a.p * a.x;
    // Put the last rounding residue on the heaviest atom.
    auto heavy = std::max_element(atoms.begin(), atoms.end(),
                                  [](const RealAtom& a, const RealAtom& b) { return a.p < b.p; });
    heavy->x -= m2 / heavy->p;
    return atoms;
}

}  // namespace

TEST_CASE("one-step walk on {-1,0,1} exits surely") {
    const Lattice lat = build_lattice(-1.0, 1.0, 1.0, 0.5);
    CHECK(lat.horizon() == 1);
    CHECK(lat.residual() == 0.0);
    CHECK(lat.dt() == 1.0);
}

TEST_CASE("horizon on [-2,2] matches the spectral oracle") {
    const Lattice lat = build_lattice(-2.0, 2.0, 1.0, 1e-6);
    CHECK(lat.horizon() == horizon_oracle(-2, 2, 1e-6));
    CHECK(lat.horizon() == 40);
    CHECK(lat.residual() <= 1e-6);
    const auto curve = survival_curve(-2, 2, lat.horizon());
    CHECK(curve[static_cast<std::size_t>(lat.horizon()) - 1] > 1e-6);
}

TEST_CASE("horizon on [-1,1] with dx = 0.5 and growth order") {
    const Lattice lat = build_lattice(-1.0, 1.0, 0.5, 1e-8);
    CHECK(lat.horizon() == horizon_oracle(-2, 2, 1e-8));
    CHECK(lat.dt() == 0.25);
    for (int half : {2, 3, 5, 8}) {
        for (double eps : {1e-3, 1e-6, 1e-9}) {
            const Lattice l = build_lattice(-half * 0.5, half * 0.5, 0.5, eps);
            const double L = 2.0 * half;
            const double scale = L * L * std::log(1.0 / eps);
            const double ratio = l.horizon() / scale;
            // Spectral gap gives K ~ (2 / pi^2) L^2 log(1/eps).
            CHECK(ratio > 0.1);
            CHECK(ratio < 0.5);
            CHECK(l.horizon() == horizon_oracle(-half, half, eps));
        }
    }
}

TEST_CASE("survival curve agrees with the spectral formula") {
    const auto curve = survival_curve(-3, 5, 60);
    for (int k = 0; k <= 60; ++k) {
        CHECK(curve[static_cast<std::size_t>(k)] ==
              doctest::Approx(survival_spectral(-3, 5, k)).epsilon(1e-10));
    }
}

TEST_CASE("build_lattice rejects bad input") {
    CHECK_THROWS_AS(build_lattice(-1.0, 1.0, 1.0, 1.0), InvalidInput);
    CHECK_THROWS_AS(build_lattice(-1.0, 1.0, 1.0, 0.0), InvalidInput);
    CHECK_THROWS_AS(build_lattice(0.5, 1.0, 0.5, 0.1), InvalidInput);
    try {
        build_lattice(-1.0, 1.25, 0.5, 0.1);
        FAIL("expected rejection");
    } catch (const InvalidInput& e) {
        CHECK(std::string(e.what()).find("remainder 0.25") != std::string::npos);
    }
}

TEST_CASE("reachability respects parity") {
    const Lattice lat(0.5, -4, 6, 30);
    std::mt19937_64 rng(7);
    std::uniform_int_distribution<int> K(-2, 32);
    std::uniform_int_distribution<int> J(-6, 8);
    for (int i = 0; i < 2000; ++i) {
        const int k = K(rng);
        const int j = J(rng);
        if (lat.reachable(k, j)) {
            CHECK(((k - j) % 2 + 2) % 2 == 0);
            CHECK(lat.on_grid(k, j));
        }
    }
    CHECK(lat.reachable(0, 0));
    CHECK_FALSE(lat.reachable(1, 0));
    CHECK_FALSE(lat.reachable(2, 4));
}

TEST_CASE("quantize: atoms already on the grid") {
    const Lattice lat = build_lattice(-1.0, 1.0, 1.0, 0.5);
    const std::vector<RealAtom> nu{{-1.0, 0.5}, {1.0, 0.5}};
    const DiscreteMeasure q = quantize_measure(nu, lat);
    REQUIRE(q.atoms().size() == 2);
    CHECK(q.mass(-1) == 0.5);
    CHECK(q.mass(1) == 0.5);
}

TEST_CASE("quantize: symmetric barycentric split") {
    const Lattice lat = build_lattice(-1.0, 1.0, 1.0, 0.5);
    const std::vector<RealAtom> nu{{-0.5, 0.5}, {0.5, 0.5}};
    const DiscreteMeasure q = quantize_measure(nu, lat);
    CHECK(q.mass(-1) == doctest::Approx(0.25));
    CHECK(q.mass(0) == doctest::Approx(0.5));
    CHECK(q.mass(1) == doctest::Approx(0.25));
    CHECK(std::abs(q.mean(1.0)) <= 1e-12);
}

TEST_CASE("quantize: asymmetric two-atom measure") {
    const Lattice lat = build_lattice(-1.0, 1.0, 0.5, 1e-6);
    const std::vector<RealAtom> nu{{-0.7, 0.3}, {0.3, 0.7}};
    // Oracle: x = -0.7 sits 0.6 of the way from -1.0 to -0.5; x = 0.3 sits
    // 0.6 of the way from 0.0 to 0.5.
    const DiscreteMeasure q = quantize_measure(nu, lat);
    CHECK(q.mass(-2) == doctest::Approx(0.3 * 0.4));
    CHECK(q.mass(-1) == doctest::Approx(0.3 * 0.6));
    CHECK(q.mass(0) == doctest::Approx(0.7 * 0.4));
    CHECK(q.mass(1) == doctest::Approx(0.7 * 0.6));
    CHECK(std::abs(q.mean(0.5)) <= 1e-12);
    const auto qr = q.to_real(0.5);
    CHECK(wasserstein1(nu, qr) <= 0.5);
}

TEST_CASE("quantize rejects bad targets") {
    const Lattice lat = build_lattice(-1.0, 1.0, 0.5, 1e-6);
    const std::vector<RealAtom> outside{{-1.5, 0.5}, {1.5, 0.5}};
    CHECK_THROWS_AS(quantize_measure(outside, lat), InvalidInput);
    const std::vector<RealAtom> biased{{-0.5, 0.5}, {1.0, 0.5}};
    try {
        quantize_measure(biased, lat);
        FAIL("expected rejection");
    } catch (const InvalidInput& e) {
        CHECK(std::string(e.what()).find("mean = 0.25") != std::string::npos);
    }
}

TEST_CASE("quantize property: mean stays zero and W1 <= dx") {
    std::mt19937_64 rng(2024);
    for (double dx : {1.0, 0.5, 0.1}) {
        const Lattice lat = build_lattice(-2.0, 2.0, dx, 1e-3);
        for (int i = 0; i < 100; ++i) {
            const auto nu = random_centered(rng, -2.0, 2.0);
            const DiscreteMeasure q = quantize_measure(nu, lat);
            CHECK(std::abs(q.mean(dx)) <= 1e-12);
            CHECK(wasserstein1(nu, q.to_real(dx)) <= dx);
        }
    }
}

TEST_CASE("wasserstein1 of sorted equal-weight samples") {
    const std::vector<RealAtom> a{{0.0, 0.25}, {1.0, 0.25}, {2.0, 0.25}, {5.0, 0.25}};
    const std::vector<RealAtom> b{{3.0, 0.25}, {0.5, 0.25}, {-1.0, 0.25}, {1.0, 0.25}};
    // Sorted pairing: |0-(-1)| + |1-0.5| + |2-1| + |5-3| over 4.
    CHECK(wasserstein1(a, b) == doctest::Approx((1.0 + 0.5 + 1.0 + 2.0) / 4.0));
}

TEST_CASE("discrete measure validation") {
    CHECK_THROWS_AS(DiscreteMeasure({{0, 0.5}}), InvalidInput);
    CHECK_THROWS_AS(DiscreteMeasure({{0, -0.1}, {1, 1.1}}), InvalidInput);
    const DiscreteMeasure sub({{0, 0.25}, {2, 0.25}, {0, 0.25}}, true);
    CHECK(sub.atoms().size() == 2);
    CHECK(sub.mass(0) == 0.5);
    CHECK(sub.total() == 0.75);
}

TEST_CASE("tree path ids follow lexicographic order") {
    const TreePath p = TreePath::from_id(0b101, 3);
    REQUIRE(p.length() == 3);
    CHECK(p.steps()[0] == 1);
    CHECK(p.steps()[1] == -1);
    CHECK(p.steps()[2] == 1);
    CHECK(p.level(3) == 1);
    CHECK(p.level(0) == 0);
    CHECK(TreePath::from_id(0, 4).level(4) == -4);
}
