#include "skemb/lattice.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <sstream>

#include "skemb/error.hpp"

namespace skemb {

namespace {

constexpr int kMaxHorizon = 1'000'000;

// Returns n if x == n * dx up to rounding, otherwise throws with the remainder.
int grid_multiple(double x, double dx, const char* name) {
    const double n = std::round(x / dx);
    if (std::abs(x - n * dx) > 1e-9 * std::max(1.0, std::abs(x))) {
        const double remainder = std::fmod(x, dx);
        std::ostringstream os;
        os << name << " = " << x << " is not a multiple of dx = " << dx
           << " (remainder " << remainder << ")";
        throw InvalidInput(os.str());
    }
    return static_cast<int>(n);
}

}  // namespace

std::vector<double> survival_curve(int j_min, int j_max, int K) {
    const int inner = j_max - j_min - 1;
    std::vector<double> out(static_cast<std::size_t>(K) + 1, 0.0);
    if (inner <= 0) {
        return out;
    }
    std::vector<double> p(static_cast<std::size_t>(inner), 0.0);
    std::vector<double> next(p.size());
    p[static_cast<std::size_t>(-j_min - 1)] = 1.0;
    out[0] = 1.0;
    for (int k = 1; k <= K; ++k) {
        for (int i = 0; i < inner; ++i) {
            const double left = i > 0 ? p[i - 1] : 0.0;
            const double right = i + 1 < inner ? p[i + 1] : 0.0;
            next[i] = 0.5 * (left + right);
        }
        p.swap(next);
        double s = 0.0;
        for (double v : p) s += v;
        out[k] = s;
    }
    return out;
}

Lattice::Lattice(double dx, int j_min, int j_max, int K)
    : dx_(dx), dt_(dx * dx), j_min_(j_min), j_max_(j_max), K_(K), residual_(0.0) {
    if (!(dx > 0.0) || !std::isfinite(dx)) {
        throw InvalidInput("dx must be positive and finite");
    }
    if (!(j_min < 0 && 0 < j_max)) {
        throw InvalidInput("lattice levels must satisfy j_min < 0 < j_max");
    }
    if (K < 1) {
        throw InvalidInput("lattice horizon must be at least one step");
    }
    residual_ = survival_curve(j_min, j_max, K).back();
}

bool Lattice::reachable(int k, int j) const {
    if (!on_grid(k, j)) return false;
    if (std::abs(j) > k) return false;
    return ((k - j) % 2 + 2) % 2 == 0;
}

Lattice build_lattice(double x_min, double x_max, double dx, double eps_residual) {
    if (!(dx > 0.0) || !std::isfinite(dx)) {
        throw InvalidInput("dx must be positive and finite");
    }
    if (!(eps_residual > 0.0 && eps_residual < 1.0)) {
        std::ostringstream os;
        os << "eps_residual = " << eps_residual << " must lie in (0, 1)";
        throw InvalidInput(os.str());
    }
    if (!(x_min < 0.0 && 0.0 < x_max)) {
        throw InvalidInput("interval must satisfy x_min < 0 < x_max");
    }
    const int j_min = grid_multiple(x_min, dx, "x_min");
    const int j_max = grid_multiple(x_max, dx, "x_max");

    const int inner = j_max - j_min - 1;
    std::vector<double> p(static_cast<std::size_t>(inner), 0.0);
    std::vector<double> next(p.size());
    p[static_cast<std::size_t>(-j_min - 1)] = 1.0;
    for (int k = 1; k <= kMaxHorizon; ++k) {
        double s = 0.0;
        for (int i = 0; i < inner; ++i) {
            const double left = i > 0 ? p[i - 1] : 0.0;
            const double right = i + 1 < inner ? p[i + 1] : 0.0;
            next[i] = 0.5 * (left + right);
            s += next[i];
        }
        p.swap(next);
        if (s <= eps_residual) {
            return Lattice(dx, j_min, j_max, k);
        }
    }
    throw InvalidInput("no horizon up to 1e6 steps meets eps_residual");
}

// ---------------------------------------------------------------------------

DiscreteMeasure::DiscreteMeasure(std::vector<Atom> atoms, bool sub_probability, double mass_tol)
    : sub_probability_(sub_probability) {
    for (const Atom& a : atoms) {
        if (!(a.mass >= 0.0) || !std::isfinite(a.mass)) {
            std::ostringstream os;
            os << "negative or non-finite mass " << a.mass << " at level " << a.level;
            throw InvalidInput(os.str());
        }
    }
    std::sort(atoms.begin(), atoms.end(),
              [](const Atom& a, const Atom& b) { return a.level < b.level; });
    for (const Atom& a : atoms) {
        if (a.mass == 0.0) continue;
        if (!atoms_.empty() && atoms_.back().level == a.level) {
            atoms_.back().mass += a.mass;
        } else {
            atoms_.push_back(a);
        }
    }
    const double tot = total();
    if (sub_probability_) {
        if (tot > 1.0 + mass_tol) {
            std::ostringstream os;
            os << "sub-probability has total mass " << tot;
            throw InvalidInput(os.str());
        }
    } else if (std::abs(tot - 1.0) > mass_tol) {
        std::ostringstream os;
        os.precision(17);
        os << "probability measure has total mass " << tot;
        throw InvalidInput(os.str());
    }
}

double DiscreteMeasure::mass(int level) const {
    auto it = std::lower_bound(atoms_.begin(), atoms_.end(), level,
                               [](const Atom& a, int l) { return a.level < l; });
    return (it != atoms_.end() && it->level == level) ? it->mass : 0.0;
}

double DiscreteMeasure::total() const {
    double s = 0.0;
    for (const Atom& a : atoms_) s += a.mass;
    return s;
}

double DiscreteMeasure::mean(double dx) const {
    double s = 0.0;
    for (const Atom& a : atoms_) s += a.level * dx * a.mass;
    return s;
}

double DiscreteMeasure::second_moment(double dx) const {
    double s = 0.0;
    for (const Atom& a : atoms_) {
        const double x = a.level * dx;
        s += x * x * a.mass;
    }
    return s;
}

bool DiscreteMeasure::centered(double dx, double tol) const {
    return std::abs(mean(dx)) <= tol;
}

int DiscreteMeasure::min_level() const {
    if (atoms_.empty()) throw InvalidInput("empty measure has no support");
    return atoms_.front().level;
}

int DiscreteMeasure::max_level() const {
    if (atoms_.empty()) throw InvalidInput("empty measure has no support");
    return atoms_.back().level;
}

std::vector<double> DiscreteMeasure::dense(const Lattice& lat) const {
    std::vector<double> out(static_cast<std::size_t>(lat.levels()), 0.0);
    for (const Atom& a : atoms_) {
        if (a.level < lat.j_min() || a.level > lat.j_max()) {
            std::ostringstream os;
            os << "atom at level " << a.level << " lies outside [" << lat.j_min() << ", "
               << lat.j_max() << "]";
            throw InvalidInput(os.str());
        }
        out[static_cast<std::size_t>(lat.level_index(a.level))] = a.mass;
    }
    return out;
}

DiscreteMeasure DiscreteMeasure::from_dense(const Lattice& lat, std::span<const double> masses,
                                            bool sub_probability, double mass_tol) {
    std::vector<Atom> atoms;
    for (int j = lat.j_min(); j <= lat.j_max(); ++j) {
        const double m = masses[static_cast<std::size_t>(lat.level_index(j))];
        if (m != 0.0) atoms.push_back({j, m});
    }
    return DiscreteMeasure(std::move(atoms), sub_probability, mass_tol);
}

std::vector<RealAtom> DiscreteMeasure::to_real(double dx) const {
    std::vector<RealAtom> out;
    out.reserve(atoms_.size());
    for (const Atom& a : atoms_) out.push_back({a.level * dx, a.mass});
    return out;
}

// ---------------------------------------------------------------------------

DiscreteMeasure quantize_measure(std::span<const RealAtom> nu, const Lattice& lat) {
    if (nu.empty()) throw InvalidInput("target measure has no atoms");
    const double dx = lat.dx();
    const double x_lo = lat.x(lat.j_min());
    const double x_hi = lat.x(lat.j_max());
    double total = 0.0;
    double mean = 0.0;
    double scale = 1.0;
    for (const RealAtom& a : nu) {
        if (!(a.p >= 0.0) || !std::isfinite(a.x)) {
            throw InvalidInput("target atoms need finite location and nonnegative mass");
        }
        const double slack = 1e-12 * std::max(1.0, std::abs(a.x));
        if (a.x < x_lo - slack || a.x > x_hi + slack) {
            std::ostringstream os;
            os << "atom at x = " << a.x << " lies outside [" << x_lo << ", " << x_hi << "]";
            throw InvalidInput(os.str());
        }
        total += a.p;
        mean += a.x * a.p;
        scale = std::max(scale, std::abs(a.x));
    }
    if (std::abs(total - 1.0) > 1e-12) {
        std::ostringstream os;
        os.precision(17);
        os << "target measure has total mass " << total;
        throw InvalidInput(os.str());
    }
    if (std::abs(mean) > 1e-12 * scale) {
        std::ostringstream os;
        os.precision(17);
        os << "target measure is not centered: mean = " << mean;
        throw InvalidInput(os.str());
    }

    std::vector<double> mass(static_cast<std::size_t>(lat.levels()), 0.0);
    auto add = [&](int j, double m) {
        j = std::clamp(j, lat.j_min(), lat.j_max());
        mass[static_cast<std::size_t>(lat.level_index(j))] += m;
    };
    for (const RealAtom& a : nu) {
        const double r = a.x / dx;
        const double n = std::round(r);
        if (std::abs(r - n) <= 1e-12 * std::max(1.0, std::abs(r))) {
            add(static_cast<int>(n), a.p);
            continue;
        }
        const int lo = static_cast<int>(std::floor(r));
        const double w_hi = r - lo;  // barycentric weight of the upper neighbour
        add(lo, a.p * (1.0 - w_hi));
        add(lo + 1, a.p * w_hi);
    }
    return DiscreteMeasure::from_dense(lat, mass);
}

double wasserstein1(std::span<const RealAtom> a, std::span<const RealAtom> b) {
    // Integral of |F_a - F_b| over the merged support.
    struct Ev {
        double x;
        double d;
    };
    std::vector<Ev> ev;
    ev.reserve(a.size() + b.size());
    for (const RealAtom& r : a) ev.push_back({r.x, r.p});
    for (const RealAtom& r : b) ev.push_back({r.x, -r.p});
    std::sort(ev.begin(), ev.end(), [](const Ev& l, const Ev& r) { return l.x < r.x; });
    double w = 0.0;
    double cdf_diff = 0.0;
    for (std::size_t i = 0; i + 1 < ev.size(); ++i) {
        cdf_diff += ev[i].d;
        w += std::abs(cdf_diff) * (ev[i + 1].x - ev[i].x);
    }
    return w;
}

// ---------------------------------------------------------------------------

TreePath::TreePath(std::vector<int8_t> steps) : steps_(std::move(steps)) {
    for (int8_t s : steps_) {
        if (s < -1 || s > 1) throw InvalidInput("tree path steps must be -1, 0 or +1");
    }
}

int TreePath::level(int k) const {
    k = std::clamp(k, 0, length());
    int s = 0;
    for (int i = 0; i < k; ++i) s += steps_[static_cast<std::size_t>(i)];
    return s;
}

TreePath TreePath::zero(int length) {
    if (length < 0) throw InvalidInput("path length must be non-negative");
    return TreePath(std::vector<int8_t>(static_cast<std::size_t>(length), 0));
}

TreePath TreePath::from_id(std::uint32_t id, int depth) {
    std::vector<int8_t> steps(static_cast<std::size_t>(depth));
    for (int i = 0; i < depth; ++i) {
        const bool up = (id >> (depth - 1 - i)) & 1u;
        steps[static_cast<std::size_t>(i)] = up ? 1 : -1;
    }
    return TreePath(std::move(steps));
}

}  // namespace skemb
