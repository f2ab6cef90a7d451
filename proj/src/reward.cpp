#include "skemb/reward.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "skemb/error.hpp"

namespace skemb {

MarkovReward::MarkovReward(const Lattice& lat, std::vector<double> table,
                           std::optional<double> bound)
    : table_(std::move(table)),
      K_(lat.horizon()),
      j_min_(lat.j_min()),
      j_max_(lat.j_max()),
      bound_(bound) {
    if (table_.size() != lat.node_count()) {
        throw InvalidInput("reward table size does not match the lattice");
    }
    bool first = true;
    for (int k = 0; k <= K_; ++k) {
        for (int j = j_min_; j <= j_max_; ++j) {
            double& v = table_[node(k, j)];
            if (!lat.reachable(k, j)) {
                if (!std::isfinite(v)) v = 0.0;
                continue;
            }
            if (!std::isfinite(v)) {
                std::ostringstream os;
                os << "reward is not finite at node (k=" << k << ", j=" << j << ")";
                throw InvalidInput(os.str());
            }
            if (bound_ && std::abs(v) > *bound_) {
                std::ostringstream os;
                os << "reward " << v << " at node (k=" << k << ", j=" << j
                   << ") exceeds the declared bound " << *bound_;
                throw InvalidInput(os.str());
            }
            if (first) {
                lo_ = hi_ = v;
                first = false;
            } else {
                lo_ = std::min(lo_, v);
                hi_ = std::max(hi_, v);
            }
        }
    }
}

// ---------------------------------------------------------------------------

double CaveReward::operator()(double t) const {
    if (g_) return g_(t);
    const double r = t / dt_;
    const auto last = static_cast<double>(table_.size() - 1);
    if (r < -1e-9 || r > last + 1e-9) {
        std::ostringstream os;
        os << "time " << t << " is outside the tabulated range [0, " << last * dt_ << "]";
        throw InvalidInput(os.str());
    }
    const double c = std::clamp(r, 0.0, last);
    const std::size_t i =
        std::min(static_cast<std::size_t>(std::floor(c)), table_.size() - 2);
    const double w = c - static_cast<double>(i);
    return table_[i] * (1.0 - w) + table_[i + 1] * w;
}

double CaveReward::dplus(double t) const {
    if (dplus_) return dplus_(t);
    return ((*this)(t + dt_) - (*this)(t)) / dt_;
}

CaveReward validate_cave(const CaveSpec& spec) {
    if (!(spec.dt > 0.0)) throw InvalidInput("cave reward check needs dt > 0");
    if (!(spec.t_p >= 0.0)) throw InvalidInput("parting time must be nonnegative");
    if (!spec.g && spec.table.size() < 2) {
        throw InvalidInput("cave reward needs a closed form or a table with two or more rows");
    }

    CaveReward out;
    out.g_ = spec.g;
    out.dplus_ = spec.dplus;
    out.table_ = spec.table;
    out.t_p_ = spec.t_p;
    out.dt_ = spec.dt;
    out.dplus_source_ = spec.dplus ? "supplied" : "forward-difference";

    double t_max = spec.t_max;
    if (!spec.g) {
        const double table_end = static_cast<double>(spec.table.size() - 1) * spec.dt;
        t_max = t_max > 0.0 ? std::min(t_max, table_end) : table_end;
    }
    if (!(t_max > 0.0)) throw InvalidInput("cave reward check needs t_max > 0");
    out.t_max_ = t_max;

    const int n = static_cast<int>(std::floor(t_max / spec.dt + 1e-9));
    std::vector<double> g(static_cast<std::size_t>(n) + 1);
    double scale = 1.0;
    for (int i = 0; i <= n; ++i) {
        g[i] = spec.g ? spec.g(i * spec.dt) : spec.table[static_cast<std::size_t>(i)];
        if (!std::isfinite(g[i])) {
            std::ostringstream os;
            os << "g is not finite at t = " << i * spec.dt;
            throw InvalidInput(os.str());
        }
        scale = std::max(scale, std::abs(g[i]));
    }
    const double undetermined = 64.0 * std::numeric_limits<double>::epsilon() * scale;
    const double tp_slack = 1e-12 * std::max(1.0, spec.t_p);
    auto before = [&](int i) { return i * spec.dt <= spec.t_p + tp_slack; };
    auto after = [&](int i) { return i * spec.dt >= spec.t_p - tp_slack; };

    auto fail = [&](const char* piece, const char* what, int i0, int i1, int i2, double d) {
        std::ostringstream os;
        os.precision(10);
        os << piece << " piece: " << what << " at times (" << i0 * spec.dt << ", " << i1 * spec.dt;
        if (i2 >= 0) os << ", " << i2 * spec.dt;
        os << ") is " << d;
        throw ShapeViolation(os.str());
    };

    for (int i = 0; i + 1 <= n; ++i) {
        const double d = g[i + 1] - g[i];
        if (before(i) && before(i + 1) && d > undetermined) {
            fail("convex", "first difference is positive, g not decreasing,", i, i + 1, -1, d);
        }
        if (after(i) && after(i + 1) && d < -undetermined) {
            fail("concave", "first difference is negative, g not increasing,", i, i + 1, -1, d);
        }
        if (i >= 1) {
            const double d2 = g[i + 1] - 2.0 * g[i] + g[i - 1];
            if (before(i - 1) && before(i + 1) && d2 < -undetermined) {
                fail("convex", "second difference is negative", i - 1, i, i + 1, d2);
            }
            if (after(i - 1) && after(i + 1) && d2 > undetermined) {
                fail("concave", "second difference is positive", i - 1, i, i + 1, d2);
            }
        }
    }

    double lip = 0.0;
    for (int i = 0; i + 1 <= n; ++i) lip = std::max(lip, std::abs(g[i + 1] - g[i]) / spec.dt);
    if (spec.dplus) {
        for (int i = 0; i <= n; ++i) lip = std::max(lip, std::abs(spec.dplus(i * spec.dt)));
    }
    out.lipschitz_ = lip;
    double bound = 0.0;
    for (double v : g) bound = std::max(bound, std::abs(v));
    out.bound_ = bound;
    return out;
}

MarkovReward tabulate(const CaveReward& g, const Lattice& lat) {
    std::vector<double> table(lat.node_count(), 0.0);
    for (int k = 0; k <= lat.horizon(); ++k) {
        const double v = g(lat.t(k));
        for (int j = lat.j_min(); j <= lat.j_max(); ++j) table[lat.node(k, j)] = v;
    }
    return MarkovReward(lat, std::move(table));
}

MarkovReward tabulate(const SpaceTimeFunction& g, const Lattice& lat) {
    std::vector<double> table(lat.node_count(), 0.0);
    for (int k = 0; k <= lat.horizon(); ++k) {
        for (int j = lat.j_min(); j <= lat.j_max(); ++j) {
            table[lat.node(k, j)] = g(lat.t(k), lat.x(j));
        }
    }
    return MarkovReward(lat, std::move(table));
}

PathReward markov_path_reward(std::function<double(int k, int level)> g) {
    return [g = std::move(g)](std::span<const int8_t> prefix) {
        int level = 0;
        for (int8_t s : prefix) level += s;
        return g(static_cast<int>(prefix.size()), level);
    };
}

}  // namespace skemb
