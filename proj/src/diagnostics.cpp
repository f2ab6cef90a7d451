#include "skemb/diagnostics.hpp"

#include <algorithm>
#include <atomic>
#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <random>
#include <thread>

#include "skemb/error.hpp"
#include "skemb/reward.hpp"

namespace skemb {

void validate(const SimConfig& cfg) {
    if (cfg.n_paths < 1) throw InvalidInput("n_paths must be at least 1");
    if (!(cfg.dt_sim > 0.0)) throw InvalidInput("dt_sim must be positive");
    if (!(cfg.cap > 0.0)) throw InvalidInput("cap must be positive");
    if (!(cfg.confidence > 0.0 && cfg.confidence < 1.0)) throw InvalidInput("confidence must lie in (0, 1)");
    if (cfg.bootstrap < 1) throw InvalidInput("bootstrap count must be at least 1");
    if (cfg.batch < 1) throw InvalidInput("batch size must be at least 1");
}

double two_sided_z(double confidence) {
    return boost::math::quantile(boost::math::normal(), 0.5 + 0.5 * confidence);
}

namespace {

// Substream for one batch; independent of the thread that runs it.
std::mt19937_64 substream(std::uint64_t seed, std::uint64_t tag, std::uint64_t batch) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(batch),
                      static_cast<std::uint32_t>(batch >> 32)};
    return std::mt19937_64(seq);
}

// Runs f(batch, begin, end) over all batches; results must be written per batch.
template <class F>
void for_batches(const SimConfig& cfg, long n, F&& f) {
    const long batches = (n + cfg.batch - 1) / cfg.batch;
    std::atomic<long> next{0};
    auto worker = [&] {
        for (long b = next++; b < batches; b = next++) {
            f(b, b * cfg.batch, std::min(n, (b + 1) * cfg.batch));
        }
    };
    const int threads = std::max(1, std::min<int>(cfg.threads, static_cast<int>(batches)));
    std::vector<std::thread> pool;
    for (int i = 1; i < threads; ++i) pool.emplace_back(worker);
    worker();
    for (std::thread& t : pool) t.join();
}

constexpr std::uint64_t kWalkTag = 0x57414c4bu;
constexpr std::uint64_t kBootTag = 0x424f4f54u;
constexpr std::uint64_t kSdeTag = 0x53444531u;
constexpr std::uint64_t kBmTag = 0x424d3031u;

}  // namespace

EmbeddingCheck verify_embedding(const StoppingRule& rule, const DiscreteMeasure& nu_hat,
                                const Lattice& lat, const SimConfig& cfg) {
    validate(cfg);
    if (rule.a.size() != lat.node_count()) throw InvalidInput("rule does not match the lattice");
    const MarkovReward zero(lat, std::vector<double>(lat.node_count(), 0.0));
    const FlowSolution exact = evaluate_rule(rule, zero, lat);
    const std::vector<RealAtom> target = nu_hat.to_real(lat.dx());

    const long batches = (cfg.n_paths + cfg.batch - 1) / cfg.batch;
    std::vector<std::vector<long>> counts(static_cast<std::size_t>(batches),
                                          std::vector<long>(static_cast<std::size_t>(lat.levels()), 0));
    for_batches(cfg, cfg.n_paths, [&](long b, long begin, long end) {
        std::mt19937_64 rng = substream(cfg.seed, kWalkTag, static_cast<std::uint64_t>(b));
        std::uniform_real_distribution<double> U(0.0, 1.0);
        std::vector<long>& c = counts[static_cast<std::size_t>(b)];
        for (long i = begin; i < end; ++i) {
            int k = 0;
            int j = 0;
            while (true) {
                const double a = rule.a[lat.node(k, j)];
                if (k == lat.horizon() || lat.is_boundary(j) || a >= 1.0 || (a > 0.0 && U(rng) < a)) break;
                j += (rng() >> 63) ? 1 : -1;
                ++k;
            }
            ++c[static_cast<std::size_t>(lat.level_index(j))];
        }
    });
    std::vector<long> total(static_cast<std::size_t>(lat.levels()), 0);
    for (const auto& c : counts) {
        for (std::size_t i = 0; i < c.size(); ++i) total[i] += c[i];
    }
    const double n = static_cast<double>(cfg.n_paths);
    std::vector<double> freq(total.size());
    for (std::size_t i = 0; i < total.size(); ++i) freq[i] = static_cast<double>(total[i]) / n;
    DiscreteMeasure empirical = DiscreteMeasure::from_dense(lat, freq, false, 1e-9);
    const std::vector<RealAtom> emp = empirical.to_real(lat.dx());

    // Multinomial resamples by a chain of binomials.
    std::mt19937_64 rng = substream(cfg.seed, kBootTag, 0);
    std::vector<double> dist(static_cast<std::size_t>(cfg.bootstrap));
    std::vector<double> boot(total.size());
    for (double& d : dist) {
        long left = cfg.n_paths;
        double p_left = 1.0;
        for (std::size_t i = 0; i < total.size(); ++i) {
            long draw = 0;
            if (left > 0 && freq[i] > 0.0) {
                const double p = std::min(1.0, freq[i] / p_left);
                draw = std::binomial_distribution<long>(left, p)(rng);
            }
            boot[i] = static_cast<double>(draw) / n;
            left -= draw;
            p_left -= freq[i];
            if (p_left <= 0.0) p_left = 1e-300;
        }
        const DiscreteMeasure bm = DiscreteMeasure::from_dense(lat, boot, false, 1e-9);
        d = wasserstein1(bm.to_real(lat.dx()), emp);
    }
    std::sort(dist.begin(), dist.end());
    const std::size_t qi = std::min(dist.size() - 1,
                                    static_cast<std::size_t>(std::ceil(cfg.confidence * static_cast<double>(dist.size()))) - 1);

    EmbeddingCheck out;
    out.mc.estimate = wasserstein1(emp, target);
    out.mc.half_width = dist[qi];
    out.mc.n_effective = cfg.n_paths;
    out.mc.seed = cfg.seed;
    out.mc.confidence = cfg.confidence;
    out.exact_distance = wasserstein1(exact.embedded.to_real(lat.dx()), target);
    out.empirical = std::move(empirical);
    out.pass = std::abs(out.mc.estimate - out.exact_distance) <= out.mc.half_width;
    return out;
}

EmbeddingCheck verify_embedding(const CaveBarrier& bar, const DiscreteMeasure& nu_hat, const Lattice& lat,
                                const SimConfig& cfg) {
    return verify_embedding(barrier_rule(bar, lat), nu_hat, lat, cfg);
}

namespace {

struct SdeOutcome {
    long exploded = 0;      // reached the cap
    long exploded2 = 0;     // reached twice the cap
    long flagged = 0;
};

// One pass serves both caps: a path is identical up to its first visit to
// the smaller cap.
SdeOutcome simulate_sde(double t_end, const SimConfig& cfg) {
    const long batches = (cfg.n_paths + cfg.batch - 1) / cfg.batch;
    std::vector<SdeOutcome> per(static_cast<std::size_t>(batches));
    for_batches(cfg, cfg.n_paths, [&](long b, long begin, long end) {
        std::mt19937_64 rng = substream(cfg.seed, kSdeTag, static_cast<std::uint64_t>(b));
        std::normal_distribution<double> N(0.0, 1.0);
        SdeOutcome& o = per[static_cast<std::size_t>(b)];
        for (long i = begin; i < end; ++i) {
            double x = 0.0;
            double t = 0.0;
            bool hit = false;
            while (t < t_end) {
                const double x2 = x * x;
                const double h = std::min(cfg.dt_sim / (1.0 + x2 * x2), t_end - t);
                if (!(h > 0.0) || t + h == t) {
                    ++o.flagged;
                    if (!hit) ++o.exploded;
                    ++o.exploded2;
                    break;
                }
                x += 4.0 * x2 * x * h + std::sqrt(h) * N(rng);
                t += h;
                if (!hit && !(std::abs(x) < cfg.cap)) {
                    hit = true;
                    ++o.exploded;
                }
                if (!(std::abs(x) < 2.0 * cfg.cap)) {
                    ++o.exploded2;
                    break;
                }
            }
        }
    });
    SdeOutcome sum;
    for (const SdeOutcome& o : per) {
        sum.exploded += o.exploded;
        sum.exploded2 += o.exploded2;
        sum.flagged += o.flagged;
    }
    return sum;
}

MCReport proportion(long survivors, const SimConfig& cfg) {
    MCReport r;
    const double n = static_cast<double>(cfg.n_paths);
    r.estimate = static_cast<double>(survivors) / n;
    r.half_width = two_sided_z(cfg.confidence) * std::sqrt(r.estimate * (1.0 - r.estimate) / n);
    r.n_effective = cfg.n_paths;
    r.seed = cfg.seed;
    r.confidence = cfg.confidence;
    return r;
}

}  // namespace

ExplosionReport strict_local_martingale_probe(double t_end, const SimConfig& cfg) {
    validate(cfg);
    if (!(t_end > 0.0)) throw InvalidInput("t_end must be positive");
    if (cfg.cap < 5.0) throw InvalidInput("explosion cap must be at least 5");
    const SdeOutcome o = simulate_sde(t_end, cfg);
    ExplosionReport r;
    r.mc = proportion(cfg.n_paths - o.exploded, cfg);
    r.doubled = proportion(cfg.n_paths - o.exploded2, cfg);
    r.exploded = o.exploded;
    r.flagged = o.flagged;
    r.below_one = r.mc.estimate + r.mc.half_width < 1.0;
    return r;
}

PathwiseBound pathwise_bound(double t_end, const SimConfig& cfg) {
    validate(cfg);
    if (!(t_end > 0.0)) throw InvalidInput("t_end must be positive");
    const long steps = std::max(1L, static_cast<long>(std::ceil(t_end / cfg.dt_sim - 1e-9)));
    const double h = t_end / static_cast<double>(steps);
    const double sh = std::sqrt(h);
    const long batches = (cfg.n_paths + cfg.batch - 1) / cfg.batch;
    std::vector<PathwiseBound> per(static_cast<std::size_t>(batches));
    for_batches(cfg, cfg.n_paths, [&](long b, long begin, long end) {
        std::mt19937_64 rng = substream(cfg.seed, kBmTag, static_cast<std::uint64_t>(b));
        std::normal_distribution<double> N(0.0, 1.0);
        PathwiseBound& o = per[static_cast<std::size_t>(b)];
        o.max_log_gap = -std::numeric_limits<double>::infinity();
        o.min_L = std::numeric_limits<double>::infinity();
        auto phi = [](double x) {
            const double x2 = x * x;
            return 3.0 * x2 + 4.0 * x2 * x2 * x2;
        };
        for (long i = begin; i < end; ++i) {
            double x = 0.0;
            double integral = 0.0;
            for (long s = 0; s < steps; ++s) {
                const double y = x + sh * N(rng);
                integral += 0.5 * h * (phi(x) + phi(y));
                x = y;
            }
            const double b4 = x * x * x * x;
            const double logL = b4 - 2.0 * integral;
            const double L = std::exp(logL);
            ++o.n_paths;
            o.max_log_gap = std::max(o.max_log_gap, logL - b4);
            o.min_L = std::min(o.min_L, L);
            if (!(L >= 0.0) || logL - b4 > 0.0) ++o.violations;
        }
    });
    PathwiseBound r;
    r.max_log_gap = -std::numeric_limits<double>::infinity();
    r.min_L = std::numeric_limits<double>::infinity();
    for (const PathwiseBound& o : per) {
        r.n_paths += o.n_paths;
        r.violations += o.violations;
        r.max_log_gap = std::max(r.max_log_gap, o.max_log_gap);
        r.min_L = std::min(r.min_L, o.min_L);
    }
    return r;
}

}  // namespace skemb
