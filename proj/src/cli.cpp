#include "skemb/cli.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>

#include <boost/version.hpp>
#include <CLI11.hpp>
#include <Eigen/Core>
#include <json.hpp>

#include "skemb/cave.hpp"
#include "skemb/dual.hpp"
#include "skemb/error.hpp"
#include "skemb/primal.hpp"
#include "skemb/randomize.hpp"
#include "skemb/reward.hpp"

#ifndef SKEMB_VERSION
#define SKEMB_VERSION "0.0.0"
#endif

namespace skemb {

namespace {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------- config

[[noreturn]] void field_error(const std::string& path, const std::string& what) {
    throw InvalidInput("config field '" + path + "': " + what);
}

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

void check_keys(const json& obj, const std::string& path, std::initializer_list<const char*> keys) {
    if (!obj.is_object()) field_error(path.empty() ? "<root>" : path, "expected an object");
    for (const auto& [k, v] : obj.items()) {
        if (std::none_of(keys.begin(), keys.end(), [&](const char* a) { return k == a; })) {
            field_error(join(path, k), "unknown field");
        }
    }
}

const json* member(const json& obj, const char* key) {
    const auto it = obj.find(key);
    return it == obj.end() ? nullptr : &*it;
}

double number(const json& v, const std::string& path) {
    if (!v.is_number()) field_error(path, "expected a number");
    return v.get<double>();
}

long integer(const json& v, const std::string& path) {
    if (!v.is_number_integer()) field_error(path, "expected an integer");
    return v.get<long>();
}

void read(const json& obj, const std::string& path, const char* key, double& out) {
    if (const json* v = member(obj, key)) out = number(*v, join(path, key));
}

void read(const json& obj, const std::string& path, const char* key, long& out) {
    if (const json* v = member(obj, key)) out = integer(*v, join(path, key));
}

void read(const json& obj, const std::string& path, const char* key, int& out) {
    long v = out;
    read(obj, path, key, v);
    if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
        field_error(join(path, key), "out of range");
    }
    out = static_cast<int>(v);
}

void read(const json& obj, const std::string& path, const char* key, std::string& out,
          std::initializer_list<const char*> allowed) {
    const json* v = member(obj, key);
    if (!v) return;
    if (!v->is_string()) field_error(join(path, key), "expected a string");
    out = v->get<std::string>();
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return out == a; })) {
        std::string list;
        for (const char* a : allowed) list += (list.empty() ? "" : ", ") + std::string(a);
        field_error(join(path, key), "'" + out + "' is not one of " + list);
    }
}

void require_positive(double v, const std::string& path) {
    if (!(v > 0.0) || !std::isfinite(v)) field_error(path, "must be positive");
}

std::string slurp(const fs::path& p, const std::string& field) {
    std::ifstream in(p, std::ios::binary);
    if (!in) field_error(field, "cannot open '" + p.string() + "'");
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            cells.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    cells.push_back(cur);
    return cells;
}

std::optional<double> parse_double(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t");
    std::size_t e = s.find_last_not_of(" \t");
    if (b == std::string::npos) return std::nullopt;
    double v = 0.0;
    const auto r = std::from_chars(s.data() + b, s.data() + e + 1, v);
    if (r.ec != std::errc() || r.ptr != s.data() + e + 1) return std::nullopt;
    return v;
}

// Numeric CSV rows with a fixed column count; a non-numeric first row is a header.
std::vector<std::pair<int, std::vector<double>>> read_numeric_csv(std::string_view text, std::size_t columns,
                                                                  const std::string& what) {
    std::vector<std::pair<int, std::vector<double>>> rows;
    std::istringstream in{std::string(text)};
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        const std::vector<std::string> cells = split_csv_line(line);
        std::vector<double> vals;
        bool ok = cells.size() == columns;
        for (const std::string& c : cells) {
            const auto v = parse_double(c);
            if (!v) {
                ok = false;
                break;
            }
            vals.push_back(*v);
        }
        if (!ok) {
            if (rows.empty() && lineno == 1 && cells.size() == columns) continue;  // header
            throw InvalidInput(what + ", line " + std::to_string(lineno) + ": expected " + std::to_string(columns) +
                               " numeric fields");
        }
        rows.emplace_back(lineno, std::move(vals));
    }
    return rows;
}

std::vector<RealAtom> read_atoms(const json& v, const std::string& path) {
    if (!v.is_array()) field_error(path, "expected an array of [x, p] pairs");
    std::vector<RealAtom> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const std::string p = path + "[" + std::to_string(i) + "]";
        if (!v[i].is_array() || v[i].size() != 2) field_error(p, "expected [x, p]");
        out.push_back({number(v[i][0], p + "[0]"), number(v[i][1], p + "[1]")});
    }
    return out;
}

ProblemConfig parse_problem(const json& j, const fs::path& base) {
    const std::string P = "problem";
    check_keys(j, P, {"x_min", "x_max", "dx", "eps_residual", "horizon", "nu", "nu_csv"});
    ProblemConfig c;
    read(j, P, "x_min", c.x_min);
    read(j, P, "x_max", c.x_max);
    read(j, P, "dx", c.dx);
    read(j, P, "eps_residual", c.eps_residual);
    read(j, P, "horizon", c.horizon);
    require_positive(c.dx, "problem.dx");
    require_positive(c.eps_residual, "problem.eps_residual");
    if (c.horizon < 0) field_error("problem.horizon", "must be nonnegative");
    const json* nu = member(j, "nu");
    const json* csv = member(j, "nu_csv");
    if ((nu != nullptr) == (csv != nullptr)) field_error("problem.nu", "give exactly one of nu and nu_csv");
    if (nu) {
        c.nu = read_atoms(*nu, "problem.nu");
    } else {
        if (!csv->is_string()) field_error("problem.nu_csv", "expected a path");
        const fs::path p = base / csv->get<std::string>();
        const std::string text = slurp(p, "problem.nu_csv");
        for (const auto& [line, r] : read_numeric_csv(text, 2, p.string())) c.nu.push_back({r[0], r[1]});
    }
    if (c.nu.empty()) field_error("problem.nu", "target has no atoms");
    return c;
}

RewardConfig parse_reward(const json& j) {
    const std::string P = "reward";
    check_keys(j, P, {"form", "t_p", "a", "dt_check", "g", "table"});
    RewardConfig c;
    read(j, P, "form", c.form, {"time", "cave-exp", "cave-bowl", "cave-table", "table"});
    read(j, P, "t_p", c.t_p);
    read(j, P, "a", c.a);
    read(j, P, "dt_check", c.dt_check);
    require_positive(c.dt_check, "reward.dt_check");
    if (c.t_p < 0.0) field_error("reward.t_p", "must be nonnegative");
    if (const json* g = member(j, "g")) {
        if (!g->is_array()) field_error("reward.g", "expected an array of numbers");
        for (std::size_t i = 0; i < g->size(); ++i) c.g.push_back(number((*g)[i], "reward.g[" + std::to_string(i) + "]"));
    }
    if (const json* t = member(j, "table")) {
        if (!t->is_array()) field_error("reward.table", "expected an array of [k, level, value]");
        for (std::size_t i = 0; i < t->size(); ++i) {
            const std::string p = "reward.table[" + std::to_string(i) + "]";
            const json& e = (*t)[i];
            if (!e.is_array() || e.size() != 3) field_error(p, "expected [k, level, value]");
            c.table.push_back({static_cast<int>(integer(e[0], p + "[0]")), static_cast<int>(integer(e[1], p + "[1]")),
                               number(e[2], p + "[2]")});
        }
    }
    if (c.form == "cave-table" && c.g.size() < 2) field_error("reward.g", "cave-table needs two or more values");
    if (c.form == "table" && c.table.empty()) field_error("reward.table", "table form needs entries");
    return c;
}

SolverConfig parse_solver(const json& j) {
    const std::string P = "solver";
    check_keys(j, P, {"mode", "iters", "step", "schedule", "tol", "gap_tol", "gamma_tol", "check_tol", "seed"});
    SolverConfig c;
    read(j, P, "mode", c.mode, {"lp", "dual-descent", "both"});
    read(j, P, "iters", c.iters);
    read(j, P, "step", c.step);
    read(j, P, "schedule", c.schedule, {"inverse-sqrt", "constant"});
    read(j, P, "tol", c.tol);
    read(j, P, "gap_tol", c.gap_tol);
    read(j, P, "gamma_tol", c.gamma_tol);
    read(j, P, "check_tol", c.check_tol);
    if (const json* s = member(j, "seed")) {
        if (!s->is_number_unsigned()) field_error("solver.seed", "expected a nonnegative integer");
        c.seed = s->get<std::uint64_t>();
    }
    if (c.iters < 1) field_error("solver.iters", "must be at least 1");
    if (c.step < 0.0) field_error("solver.step", "must be nonnegative");
    require_positive(c.tol, "solver.tol");
    require_positive(c.gap_tol, "solver.gap_tol");
    require_positive(c.gamma_tol, "solver.gamma_tol");
    if (c.check_tol < 0.0) field_error("solver.check_tol", "must be nonnegative");
    return c;
}

SimulationConfig parse_simulation(const json& j) {
    const std::string P = "simulation";
    check_keys(j, P, {"n_paths", "dt_sim", "cap", "confidence", "bootstrap", "batch", "rule", "t_end", "pathwise_paths"});
    SimulationConfig c;
    read(j, P, "n_paths", c.sim.n_paths);
    read(j, P, "dt_sim", c.sim.dt_sim);
    read(j, P, "cap", c.sim.cap);
    read(j, P, "confidence", c.sim.confidence);
    read(j, P, "bootstrap", c.sim.bootstrap);
    read(j, P, "batch", c.sim.batch);
    read(j, P, "rule", c.rule, {"lp", "cave"});
    read(j, P, "t_end", c.t_end);
    read(j, P, "pathwise_paths", c.pathwise_paths);
    require_positive(c.t_end, "simulation.t_end");
    if (c.pathwise_paths < 1) field_error("simulation.pathwise_paths", "must be at least 1");
    try {
        validate(c.sim);
    } catch (const InvalidInput& e) {
        field_error("simulation", e.what());
    }
    return c;
}

TreeConfig parse_tree(const json& j, const fs::path& base) {
    const std::string P = "tree";
    check_keys(j, P, {"depth", "dx", "eta", "prefix_depths", "kernel", "payoffs"});
    TreeConfig c;
    read(j, P, "depth", c.depth);
    read(j, P, "dx", c.dx);
    read(j, P, "eta", c.eta);
    require_positive(c.dx, "tree.dx");
    require_positive(c.eta, "tree.eta");
    if (c.depth < 1 || c.depth > 20) field_error("tree.depth", "must lie in [1, 20]");
    if (const json* n = member(j, "prefix_depths")) {
        if (!n->is_array() || n->empty()) field_error("tree.prefix_depths", "expected a nonempty array");
        c.prefix_depths.clear();
        for (std::size_t i = 0; i < n->size(); ++i) {
            const std::string p = "tree.prefix_depths[" + std::to_string(i) + "]";
            c.prefix_depths.push_back(static_cast<int>(integer((*n)[i], p)));
            if (i > 0 && c.prefix_depths[i] <= c.prefix_depths[i - 1]) field_error(p, "depths must increase");
        }
    }
    if (const json* k = member(j, "kernel")) {
        const std::string K = "tree.kernel";
        check_keys(*k, K, {"form", "from", "b1", "b2", "w", "path"});
        read(*k, K, "form", c.kernel.form, {"exit-mix", "csv"});
        read(*k, K, "from", c.kernel.from);
        read(*k, K, "b1", c.kernel.b1);
        read(*k, K, "b2", c.kernel.b2);
        read(*k, K, "w", c.kernel.w);
        if (!(c.kernel.w >= 0.0 && c.kernel.w <= 1.0)) field_error("tree.kernel.w", "must lie in [0, 1]");
        if (c.kernel.form == "csv") {
            const json* p = member(*k, "path");
            if (!p || !p->is_string()) field_error("tree.kernel.path", "csv kernels need a path");
            c.kernel.csv = base / p->get<std::string>();
            if (!fs::exists(c.kernel.csv)) field_error("tree.kernel.path", "'" + c.kernel.csv.string() + "' does not exist");
        }
    }
    if (const json* p = member(j, "payoffs")) {
        if (!p->is_array() || p->empty()) field_error("tree.payoffs", "expected a nonempty array");
        c.payoffs.clear();
        for (std::size_t i = 0; i < p->size(); ++i) {
            std::string name;
            const json holder = {{"v", (*p)[i]}};
            read(holder, "tree.payoffs[" + std::to_string(i) + "]", "v", name,
                 {"square", "cos-decay", "time", "call", "tanh"});
            c.payoffs.push_back(name);
        }
    }
    return c;
}

OutputConfig parse_output(const json& j, const fs::path& base) {
    check_keys(j, "output", {"dir", "formats"});
    OutputConfig c;
    if (const json* d = member(j, "dir")) {
        if (!d->is_string()) field_error("output.dir", "expected a path");
        c.dir = base / d->get<std::string>();
    }
    if (const json* f = member(j, "formats")) {
        if (!f->is_array()) field_error("output.formats", "expected an array");
        c.csv = c.json = false;
        for (std::size_t i = 0; i < f->size(); ++i) {
            std::string name;
            const json holder = {{"v", (*f)[i]}};
            read(holder, "output.formats[" + std::to_string(i) + "]", "v", name, {"csv", "json"});
            (name == "csv" ? c.csv : c.json) = true;
        }
    }
    return c;
}

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string hex64(std::uint64_t h) {
    static const char* d = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i, h >>= 4) s[static_cast<std::size_t>(i)] = d[h & 15];
    return s;
}

// ---------------------------------------------------------------- output

std::string num(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

// RFC 4180: CRLF records, fields quoted when they contain separators.
class Csv {
public:
    explicit Csv(std::initializer_list<std::string> header) { row(std::vector<std::string>(header)); }

    void row(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) s_ += ',';
            const std::string& c = cells[i];
            if (c.find_first_of(",\"\r\n") == std::string::npos) {
                s_ += c;
            } else {
                s_ += '"';
                for (char ch : c) s_ += ch == '"' ? std::string("\"\"") : std::string(1, ch);
                s_ += '"';
            }
        }
        s_ += "\r\n";
    }
    const std::string& str() const { return s_; }

private:
    std::string s_;
};

struct Artifacts {
    std::vector<std::pair<std::string, std::string>> files;
    const OutputConfig* out = nullptr;

    void csv(const std::string& name, const Csv& c) {
        if (out->csv) files.emplace_back(name, c.str());
    }
    void json(const std::string& name, const ojson& j) {
        if (out->json) files.emplace_back(name, j.dump(2) + "\n");
    }
};

ojson mc_json(const MCReport& r) {
    ojson j;
    j["estimate"] = r.estimate;
    j["half_width"] = r.half_width;
    j["n_effective"] = r.n_effective;
    j["seed"] = r.seed;
    j["confidence"] = r.confidence;
    return j;
}

// ---------------------------------------------------------------- problem setup

Lattice make_lattice(const ProblemConfig& p) {
    const Lattice auto_lat = build_lattice(p.x_min, p.x_max, p.dx, p.eps_residual);
    if (p.horizon == 0) return auto_lat;
    return Lattice(p.dx, auto_lat.j_min(), auto_lat.j_max(), p.horizon);
}

bool is_cave(const RewardConfig& r) { return r.form.rfind("cave-", 0) == 0; }

CaveReward make_cave(const RewardConfig& r, const Lattice& lat) {
    CaveSpec s;
    s.t_p = r.t_p;
    s.dt = r.dt_check;
    const double tp = r.t_p;
    const double a = r.a;
    if (r.form == "cave-exp") {
        s.t_max = lat.t(lat.horizon()) + 1.0;
        s.g = [tp, a](double t) { return t <= tp ? std::exp(-a * t) : std::exp(-a * tp) * (2.0 - std::exp(-a * (t - tp))); };
    } else if (r.form == "cave-bowl") {
        s.t_max = lat.t(lat.horizon()) + 1.0;
        s.g = [tp, a](double t) { return t <= tp ? 0.2 * (tp - t) * (tp - t) : 1.0 - std::exp(-a * (t - tp)); };
    } else {
        s.table = r.g;
    }
    return validate_cave(s);
}

MarkovReward make_reward(const RewardConfig& r, const Lattice& lat) {
    if (is_cave(r)) return tabulate(make_cave(r, lat), lat);
    if (r.form == "time") return tabulate([](double t, double) { return t; }, lat);
    std::vector<double> table(lat.node_count(), 0.0);
    for (std::size_t i = 0; i < r.table.size(); ++i) {
        const auto& e = r.table[i];
        if (!lat.on_grid(e.k, e.level)) {
            field_error("reward.table[" + std::to_string(i) + "]", "node (" + std::to_string(e.k) + ", " +
                                                                     std::to_string(e.level) + ") is off the lattice");
        }
        table[lat.node(e.k, e.level)] = e.value;
    }
    return MarkovReward(lat, std::move(table));
}

struct Problem {
    Lattice lat;
    DiscreteMeasure nu;
    MarkovReward G;
};

Problem make_problem(const RunConfig& cfg) {
    if (cfg.problem.nu.empty()) field_error("problem", "this subcommand needs a problem block with a target");
    Lattice lat = make_lattice(cfg.problem);
    DiscreteMeasure nu = quantize_measure(cfg.problem.nu, lat);
    MarkovReward G = make_reward(cfg.reward, lat);
    return {std::move(lat), std::move(nu), std::move(G)};
}

PrimalLpResult solve_lp(const Problem& p) { return solve_primal_lp(p.G, p.nu, p.lat); }

DescentResult descend(const Problem& p, const SolverConfig& s, double primal) {
    DescentOptions o;
    o.iters = s.iters;
    o.alpha0 = s.step;
    o.schedule = s.schedule == "constant" ? StepSchedule::Constant : StepSchedule::InverseSqrt;
    o.primal_value = primal;
    o.trajectory_stride = static_cast<int>(std::max(1L, s.iters / 1000));
    return dual_descent(p.G, p.nu, p.lat, o);
}

double rel_gap(double dual, double primal) { return std::abs(dual - primal) / std::max(1.0, std::abs(primal)); }

ojson lattice_json(const Lattice& lat) {
    ojson j;
    j["dx"] = lat.dx();
    j["j_min"] = lat.j_min();
    j["j_max"] = lat.j_max();
    j["horizon"] = lat.horizon();
    j["residual"] = lat.residual();
    return j;
}

ojson descent_json(const DescentResult& d, double primal) {
    ojson j;
    j["dual_value"] = d.best_J;
    j["iterations"] = d.iterations;
    j["from_average"] = d.from_average;
    j["gap"] = std::isnan(primal) ? std::numeric_limits<double>::quiet_NaN() : d.best_J - primal;
    j["relative_gap"] = std::isnan(primal) ? std::numeric_limits<double>::quiet_NaN() : rel_gap(d.best_J, primal);
    return j;
}

Csv trajectory_csv(const DescentResult& d, long stride) {
    Csv c({"iteration", "J"});
    for (std::size_t i = 0; i < d.trajectory.size(); ++i) {
        c.row({std::to_string(static_cast<long>(i) * stride + 1), num(d.trajectory[i])});
    }
    return c;
}

// ---------------------------------------------------------------- subcommands

bool cmd_solve_primal(const RunConfig& cfg, Artifacts& art) {
    const Problem p = make_problem(cfg);
    const PrimalLpResult lp = solve_lp(p);
    const Lattice& lat = p.lat;
    Csv flow({"k", "level", "x", "t", "arrival", "stopped", "flow_dual"});
    for (int k = 0; k <= lat.horizon(); ++k) {
        for (int j = lat.j_min(); j <= lat.j_max(); ++j) {
            const std::size_t n = lat.node(k, j);
            if (!lp.support[n]) continue;
            flow.row({std::to_string(k), std::to_string(j), num(lat.x(j)), num(lat.t(k)), num(lp.flow.m[n]),
                      num(lp.flow.q[n]), num(lp.flow_dual[n])});
        }
    }
    Csv marg({"level", "x", "target", "embedded", "psi_hat"});
    for (int j = lat.j_min(); j <= lat.j_max(); ++j) {
        marg.row({std::to_string(j), num(lat.x(j)), num(p.nu.mass(j)), num(lp.flow.embedded.mass(j)),
                  num(lp.psi_hat[static_cast<std::size_t>(lat.level_index(j))])});
    }
    const bool pass = lp.status == LpStatus::Optimal && rel_gap(lp.dual_value, lp.flow.value) <= cfg.solver.tol;
    ojson r;
    r["subcommand"] = "solve-primal";
    r["lattice"] = lattice_json(lat);
    r["status"] = to_string(lp.status);
    r["value"] = lp.flow.value;
    r["dual_value"] = lp.dual_value;
    r["mean_time"] = lp.flow.mean_time;
    r["iterations"] = lp.iterations;
    r["verdict"] = pass ? "pass" : "fail";
    art.csv("flow.csv", flow);
    art.csv("marginal.csv", marg);
    art.json("report.json", r);
    return pass;
}

Csv psi_csv(const std::vector<double>& psi, const Lattice& lat) {
    Csv c({"level", "x", "psi"});
    for (int j = lat.j_min(); j <= lat.j_max(); ++j) {
        c.row({std::to_string(j), num(lat.x(j)), num(psi[static_cast<std::size_t>(lat.level_index(j))])});
    }
    return c;
}

bool cmd_solve_dual(const RunConfig& cfg, Artifacts& art) {
    const Problem p = make_problem(cfg);
    const std::string& mode = cfg.solver.mode;
    ojson r;
    r["subcommand"] = "solve-dual";
    r["lattice"] = lattice_json(p.lat);
    r["mode"] = mode;
    bool pass = true;
    if (mode == "lp") {
        const PrimalLpResult lp = solve_lp(p);
        const DualPair dp = dual_from_lp(lp, p.G, p.lat, p.nu);
        r["primal"] = lp.flow.value;
        r["dual_value"] = dp.value_dual;
        r["relative_gap"] = rel_gap(dp.value_dual, lp.flow.value);
        pass = rel_gap(dp.value_dual, lp.flow.value) <= cfg.solver.tol;
        art.csv("psi.csv", psi_csv(dp.psi, p.lat));
    } else {
        double primal = std::numeric_limits<double>::quiet_NaN();
        if (mode == "both") primal = solve_lp(p).flow.value;
        const DescentResult d = descend(p, cfg.solver, primal);
        r["primal"] = primal;
        r["descent"] = descent_json(d, primal);
        if (mode == "both") pass = rel_gap(d.best_J, primal) <= cfg.solver.gap_tol;
        art.csv("psi.csv", psi_csv(d.best.psi, p.lat));
        art.csv("trajectory.csv", trajectory_csv(d, std::max(1L, cfg.solver.iters / 1000)));
    }
    r["verdict"] = pass ? "pass" : "fail";
    art.json("report.json", r);
    return pass;
}

bool cmd_gap_report(const RunConfig& cfg, Artifacts& art) {
    const Problem p = make_problem(cfg);
    const Lattice& lat = p.lat;
    const PrimalLpResult lp = solve_lp(p);
    const DualPair dp = dual_from_lp(lp, p.G, lat, p.nu);
    const Certificate cert = certify(dp, lp.flow, p.G, lat, cfg.solver.tol);
    const GammaSet gamma = extract_gamma(dp, p.G, lat, cfg.solver.gamma_tol, &lp.flow);
    const double gap = dp.value_dual - lp.flow.value;
    bool pass = rel_gap(dp.value_dual, lp.flow.value) <= cfg.solver.tol && cert.optimal &&
                gamma.mass >= 1.0 - cfg.solver.gamma_tol;

    ojson r;
    r["subcommand"] = "gap-report";
    r["lattice"] = lattice_json(lat);
    r["primal"] = lp.flow.value;
    r["dual"] = dp.value_dual;
    r["gap"] = gap;
    r["second_moment"] = p.nu.second_moment(lat.dx());
    r["mean_time"] = lp.flow.mean_time;
    ojson c;
    c["optimal"] = cert.optimal;
    c["residual_contact"] = cert.residual_contact;
    c["residual_martingale"] = cert.residual_martingale;
    c["weak_duality"] = cert.weak_duality;
    c["verdict"] = cert.verdict;
    r["certificate"] = c;
    r["gamma_tol"] = gamma.tol;
    r["gamma_mass"] = gamma.mass;
    if (cfg.solver.mode != "lp") {
        const DescentResult d = descend(p, cfg.solver, lp.flow.value);
        r["descent"] = descent_json(d, lp.flow.value);
        pass = pass && rel_gap(d.best_J, lp.flow.value) <= cfg.solver.gap_tol;
        art.csv("trajectory.csv", trajectory_csv(d, std::max(1L, cfg.solver.iters / 1000)));
    }
    r["verdict"] = pass ? "pass" : "fail";

    Csv surf({"k", "level", "x", "t", "G", "M", "psi", "stopped", "in_gamma"});
    for (int k = 0; k <= lat.horizon(); ++k) {
        for (int j = lat.j_min(); j <= lat.j_max(); ++j) {
            const std::size_t n = lat.node(k, j);
            if (!lp.support[n]) continue;
            surf.row({std::to_string(k), std::to_string(j), num(lat.x(j)), num(lat.t(k)), num(p.G(k, j)), num(dp.M[n]),
                      num(dp.psi[static_cast<std::size_t>(lat.level_index(j))]), num(lp.flow.q[n]),
                      gamma.member[n] ? "1" : "0"});
        }
    }
    art.csv("surface.csv", surf);
    art.json("report.json", r);
    return pass;
}

bool cmd_cave(const RunConfig& cfg, Artifacts& art) {
    if (!is_cave(cfg.reward)) field_error("reward.form", "cave needs a cave-* reward");
    const Problem p = make_problem(cfg);
    const Lattice& lat = p.lat;
    const CaveReward g = make_cave(cfg.reward, lat);
    const PrimalLpResult lp = solve_lp(p);
    const ExtractedCave ex = extract_barrier(lp.flow, g, lat);
    const double tol = cfg.solver.check_tol > 0.0 ? cfg.solver.check_tol : 1e-3 + g.lipschitz() * lat.dx();
    const VariationalReport var = check_variational(ex.barrier, ex.split, g, lat, tol);
    const SufficiencyReport suf = sufficiency_surface(ex.barrier, ex.split, g, lat, tol);
    const FlowSolution bar_fs = evaluate_rule(barrier_rule(ex.barrier, lat), p.G, lat);
    const bool pass = var.pass && suf.pass;

    Csv bar({"level", "x", "l", "r", "nu_l", "nu_r"});
    for (int j = lat.j_min(); j <= lat.j_max(); ++j) {
        const auto i = static_cast<std::size_t>(lat.level_index(j));
        bar.row({std::to_string(j), num(lat.x(j)), ex.barrier.l[i] == CaveBarrier::kGap ? "" : num(ex.barrier.l[i]),
                 num(ex.barrier.r[i]), num(ex.split.nu_l.mass(j)), num(ex.split.nu_r.mass(j))});
    }
    ojson levels = ojson::array();
    for (const LevelVerdict& lv : var.levels) {
        ojson e;
        e["level"] = lv.level;
        e["lo"] = lv.lo;
        e["hi"] = lv.hi;
        e["integral"] = lv.I;
        e["delta"] = lv.delta;
        e["nu_l"] = lv.nu_l;
        e["nu_r"] = lv.nu_r;
        e["slack"] = lv.slack;
        e["equality"] = lv.equality;
        e["truncated"] = lv.truncated;
        e["verdict"] = lv.verdict;
        levels.push_back(e);
    }
    ojson lj;
    lj["tol"] = tol;
    lj["levels"] = levels;

    ojson r;
    r["subcommand"] = "cave";
    r["lattice"] = lattice_json(lat);
    r["t_p"] = g.t_p();
    r["lipschitz"] = g.lipschitz();
    r["lp_value"] = lp.flow.value;
    r["barrier_value"] = bar_fs.value;
    r["randomized_nodes"] = ex.randomized.size();
    r["tol"] = tol;
    r["tail_bound"] = var.tail_bound;
    r["variational"] = var.pass ? "pass" : "fail";
    ojson s;
    s["dominates"] = suf.dominates;
    s["left_contact"] = suf.left_contact;
    s["right_contact"] = suf.right_contact;
    s["failing_nodes"] = suf.failing.size();
    s["verdict"] = suf.pass ? "pass" : "fail";
    r["sufficiency"] = s;
    r["verdict"] = pass ? "pass" : "fail";
    art.csv("barrier.csv", bar);
    art.json("levels.json", lj);
    art.json("report.json", r);
    return pass;
}

TreeKernel exit_after(const WalkTree& tree, int from, int b) {
    std::vector<double> stop(tree.size(), 0.0);
    for (std::size_t i = 0; i < tree.size(); ++i) {
        if (tree.time(i) >= from && std::abs(tree.level(i)) >= b) stop[i] = 1.0;
    }
    return TreeKernel(tree, std::move(stop));
}

PathReward named_payoff(const std::string& name, double dx) {
    const double dt = dx * dx;
    if (name == "square") return markov_path_reward([dx](int, int l) { return l * l * dx * dx; });
    if (name == "cos-decay") return markov_path_reward([dx, dt](int k, int l) { return std::cos(l * dx) * std::exp(-k * dt); });
    if (name == "time") return markov_path_reward([dt](int k, int) { return k * dt; });
    if (name == "call") return markov_path_reward([dx](int, int l) { return std::max(0.0, l * dx - 0.5); });
    return markov_path_reward([dx, dt](int k, int l) { return std::tanh(l * dx + 0.4 * k * dt); });
}

bool cmd_derandomize(const RunConfig& cfg, Artifacts& art) {
    const TreeConfig& tc = cfg.tree;
    const WalkTree tree(tc.depth);
    const TreeKernel xi = tc.kernel.form == "csv"
                              ? read_kernel_csv(slurp(tc.kernel.csv, "tree.kernel.path"), tc.depth)
                              : mix_kernels(exit_after(tree, tc.kernel.from, tc.kernel.b1),
                                            exit_after(tree, tc.kernel.from, tc.kernel.b2), tc.kernel.w);
    const EtaBound eb = make_eta_bound(tc.dx, tc.eta);
    std::vector<PathReward> pay;
    for (const std::string& n : tc.payoffs) pay.push_back(named_payoff(n, tc.dx));

    Csv errs({"n0", "payoff", "randomized", "deterministic", "error"});
    ojson runs = ojson::array();
    std::vector<std::vector<double>> err_by_n0;
    for (int n0 : tc.prefix_depths) {
        const DerandomizeReport rep = derandomize(xi, eb, n0, pay);
        for (std::size_t g = 0; g < pay.size(); ++g) {
            errs.row({std::to_string(n0), tc.payoffs[g], num(rep.randomized_values[g]), num(rep.deterministic_values[g]),
                      num(rep.replication_error[g])});
        }
        err_by_n0.push_back(rep.replication_error);
        ojson e;
        e["n0"] = n0;
        e["classes"] = rep.classes;
        e["mean_atom"] = rep.mean_atom;
        e["law_distortion"] = rep.law_distortion;
        e["deterministic"] = rep.rule.deterministic();
        runs.push_back(e);
        if (cfg.output.csv) art.files.emplace_back("rule_n" + std::to_string(n0) + ".csv", kernel_csv(rep.rule));
    }
    bool monotone = true;
    for (std::size_t i = 1; i < err_by_n0.size(); ++i) {
        for (std::size_t g = 0; g < pay.size(); ++g) monotone = monotone && err_by_n0[i][g] <= err_by_n0[i - 1][g];
    }
    ojson r;
    r["subcommand"] = "derandomize";
    r["depth"] = tc.depth;
    r["dx"] = tc.dx;
    r["eta"] = tc.eta;
    r["inner"] = eb.inner;
    r["outer"] = eb.outer;
    r["runs"] = runs;
    r["monotone"] = monotone;
    r["verdict"] = monotone ? "pass" : "fail";
    if (cfg.output.csv) art.files.emplace_back("kernel.csv", kernel_csv(xi));
    art.csv("errors.csv", errs);
    art.json("report.json", r);
    return monotone;
}

SimConfig sim_config(const RunConfig& cfg) {
    SimConfig s = cfg.simulation.sim;
    s.seed = cfg.solver.seed;
    s.threads = cfg.threads;
    return s;
}

bool cmd_verify_embedding(const RunConfig& cfg, Artifacts& art) {
    const Problem p = make_problem(cfg);
    const Lattice& lat = p.lat;
    const PrimalLpResult lp = solve_lp(p);
    StoppingRule rule;
    if (cfg.simulation.rule == "cave") {
        if (!is_cave(cfg.reward)) field_error("simulation.rule", "the cave rule needs a cave-* reward");
        rule = barrier_rule(extract_barrier(lp.flow, make_cave(cfg.reward, lat), lat).barrier, lat);
    } else {
        rule = rule_from_flow(lp.flow, lat);
    }
    const EmbeddingCheck chk = verify_embedding(rule, p.nu, lat, sim_config(cfg));
    const MarkovReward zero(lat, std::vector<double>(lat.node_count(), 0.0));
    const FlowSolution exact = evaluate_rule(rule, zero, lat);

    Csv emp({"level", "x", "target", "exact", "empirical"});
    for (int j = lat.j_min(); j <= lat.j_max(); ++j) {
        emp.row({std::to_string(j), num(lat.x(j)), num(p.nu.mass(j)), num(exact.embedded.mass(j)),
                 num(chk.empirical.mass(j))});
    }
    ojson r;
    r["subcommand"] = "verify-embedding";
    r["lattice"] = lattice_json(lat);
    r["rule"] = cfg.simulation.rule;
    r["distance"] = mc_json(chk.mc);
    r["exact_distance"] = chk.exact_distance;
    r["verdict"] = chk.pass ? "pass" : "fail";
    art.csv("empirical.csv", emp);
    art.json("report.json", r);
    return chk.pass;
}

bool cmd_slm(const RunConfig& cfg, Artifacts& art) {
    const SimConfig s = sim_config(cfg);
    const ExplosionReport ex = strict_local_martingale_probe(cfg.simulation.t_end, s);
    SimConfig sb = s;
    sb.n_paths = cfg.simulation.pathwise_paths;
    const PathwiseBound pb = pathwise_bound(cfg.simulation.t_end, sb);
    const double diff = std::abs(ex.mc.estimate - ex.doubled.estimate);
    const bool stable = diff <= 2.0 * ex.mc.half_width;
    const bool pass = ex.below_one && stable && pb.violations == 0;

    Csv c({"cap", "estimate", "half_width"});
    c.row({num(s.cap), num(ex.mc.estimate), num(ex.mc.half_width)});
    c.row({num(2.0 * s.cap), num(ex.doubled.estimate), num(ex.doubled.half_width)});
    ojson r;
    r["subcommand"] = "counterexample-slm";
    r["t_end"] = cfg.simulation.t_end;
    r["dt_sim"] = s.dt_sim;
    r["cap"] = s.cap;
    r["expectation"] = mc_json(ex.mc);
    r["doubled_cap"] = mc_json(ex.doubled);
    r["exploded"] = ex.exploded;
    r["flagged"] = ex.flagged;
    r["below_one"] = ex.below_one;
    r["cap_difference"] = diff;
    r["cap_stable"] = stable;
    ojson b;
    b["n_paths"] = pb.n_paths;
    b["violations"] = pb.violations;
    b["max_log_gap"] = pb.max_log_gap;
    b["min_L"] = pb.min_L;
    r["pathwise"] = b;
    r["verdict"] = pass ? "pass" : "fail";
    art.csv("caps.csv", c);
    art.json("report.json", r);
    return pass;
}

std::string timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void write_file(const fs::path& p, const std::string& content) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw InvalidInput("cannot write '" + p.string() + "'");
    out << content;
    if (!out) throw InvalidInput("write to '" + p.string() + "' failed");
}

}  // namespace

RunConfig parse_config(std::string_view text, const fs::path& base_dir, const Overrides& ov) {
    json root;
    try {
        root = json::parse(text.begin(), text.end());
    } catch (const json::parse_error& e) {
        const std::size_t byte = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
        const std::string_view head = text.substr(0, byte);
        const std::size_t line = 1 + static_cast<std::size_t>(std::count(head.begin(), head.end(), '\n'));
        const std::size_t nl = head.rfind('\n');
        const std::size_t col = nl == std::string_view::npos ? byte + 1 : byte - nl;
        std::string msg = e.what();
        if (const auto p = msg.find("syntax error"); p != std::string::npos) msg = msg.substr(p);
        throw InvalidInput("config line " + std::to_string(line) + ", column " + std::to_string(col) + ": " + msg);
    }
    check_keys(root, "", {"problem", "reward", "solver", "simulation", "tree", "output"});
    if (ov.has_seed) root["solver"]["seed"] = ov.seed;
    if (ov.has_tol) root["solver"]["tol"] = ov.tol;

    RunConfig c;
    if (const json* p = member(root, "problem")) c.problem = parse_problem(*p, base_dir);
    if (const json* r = member(root, "reward")) c.reward = parse_reward(*r);
    if (const json* s = member(root, "solver")) c.solver = parse_solver(*s);
    if (const json* s = member(root, "simulation")) c.simulation = parse_simulation(*s);
    if (const json* t = member(root, "tree")) c.tree = parse_tree(*t, base_dir);
    if (const json* o = member(root, "output")) c.output = parse_output(*o, base_dir);
    if (!ov.out.empty()) c.output.dir = ov.out;

    // The destination does not change any number, so it stays out of the hash.
    json hashed = root;
    if (hashed.contains("output")) hashed["output"].erase("dir");
    c.canonical = hashed.dump();
    return c;
}

std::string kernel_csv(const TreeKernel& xi) {
    Csv c({"path_id", "index", "mass"});
    const int n = xi.tree().depth();
    for (std::uint32_t id = 0; id < xi.tree().path_count(); ++id) {
        double prev = 0.0;
        for (int k = 0; k <= n; ++k) {
            const double F = xi.cdf(id, k);
            if (F > prev) c.row({std::to_string(id), std::to_string(k), num(F - prev)});
            prev = F;
        }
    }
    return c.str();
}

TreeKernel read_kernel_csv(std::string_view text, int depth) {
    if (depth < 1 || depth > 20) throw InvalidInput("kernel depth must lie in [1, 20]");
    const WalkTree tree(depth);
    const std::size_t paths = tree.path_count();
    const auto n = static_cast<std::size_t>(depth + 1);
    std::vector<double> mass(paths * n, 0.0);
    std::vector<int> line_of(paths * n, 0);
    for (const auto& [line, r] : read_numeric_csv(text, 3, "kernel csv")) {
        const std::string where = "kernel csv, line " + std::to_string(line) + ": ";
        if (r[0] < 0 || r[0] >= static_cast<double>(paths) || r[0] != std::floor(r[0])) {
            throw InvalidInput(where + "path_id out of range");
        }
        if (r[1] < 0 || r[1] > depth || r[1] != std::floor(r[1])) throw InvalidInput(where + "index out of range");
        if (!(r[2] >= 0.0) || !std::isfinite(r[2])) throw InvalidInput(where + "mass must be nonnegative");
        const std::size_t at = static_cast<std::size_t>(r[0]) * n + static_cast<std::size_t>(r[1]);
        if (line_of[at]) throw InvalidInput(where + "duplicate of line " + std::to_string(line_of[at]));
        mass[at] = r[2];
        line_of[at] = line;
    }
    const double nan = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> stop(tree.size(), nan);
    for (std::uint32_t id = 0; id < paths; ++id) {
        double cum = 0.0;
        for (int k = 0; k <= depth; ++k) {
            const std::size_t at = id * n + static_cast<std::size_t>(k);
            const std::size_t node = tree.node_on_path(id, k);
            const double rem = 1.0 - cum;
            if (rem > 1e-12) {
                const double a = std::min(1.0, mass[at] / rem);
                if (std::isnan(stop[node])) {
                    stop[node] = a;
                } else if (std::abs(stop[node] - a) > 1e-9) {
                    throw InvalidInput("kernel csv, path " + std::to_string(id) + " index " + std::to_string(k) +
                                       ": stopping mass depends on the future of the path");
                }
            } else if (mass[at] > 1e-12) {
                throw InvalidInput("kernel csv, line " + std::to_string(line_of[at]) + ": mass beyond 1 on path " +
                                   std::to_string(id));
            }
            cum += mass[at];
        }
        if (std::abs(cum - 1.0) > 1e-9) {
            throw InvalidInput("kernel csv, path " + std::to_string(id) + ": masses sum to " + num(cum));
        }
    }
    for (double& s : stop) {
        if (std::isnan(s)) s = 1.0;
    }
    return TreeKernel(tree, std::move(stop));
}

int threads_from_env() {
    const char* v = std::getenv("SKEMB_THREADS");
    if (!v || !*v) return 1;
    int t = 0;
    const auto r = std::from_chars(v, v + std::char_traits<char>::length(v), t);
    if (r.ec != std::errc() || *r.ptr != '\0' || t < 1) {
        throw InvalidInput("SKEMB_THREADS must be a positive integer, got '" + std::string(v) + "'");
    }
    return t;
}

int run(const std::string& subcommand, const RunConfig& cfg, std::ostream& err) {
    static const std::map<std::string, bool (*)(const RunConfig&, Artifacts&)> table = {
        {"solve-primal", cmd_solve_primal},     {"solve-dual", cmd_solve_dual},
        {"gap-report", cmd_gap_report},         {"cave", cmd_cave},
        {"derandomize", cmd_derandomize},       {"verify-embedding", cmd_verify_embedding},
        {"counterexample-slm", cmd_slm},
    };
    try {
        const auto it = table.find(subcommand);
        if (it == table.end()) throw InvalidInput("unknown subcommand '" + subcommand + "'");
        Artifacts art;
        art.out = &cfg.output;
        const bool pass = it->second(cfg, art);
        const int status = pass ? 0 : 2;

        fs::create_directories(cfg.output.dir);
        ojson files = ojson::array();
        for (const auto& [name, content] : art.files) {
            write_file(cfg.output.dir / name, content);
            ojson f;
            f["file"] = name;
            f["fnv1a64"] = hex64(fnv1a(content));
            files.push_back(f);
        }
        ojson versions;
        versions["skemb"] = SKEMB_VERSION;
        versions["compiler"] = __VERSION__;
        versions["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                            std::to_string(EIGEN_MINOR_VERSION);
        versions["boost"] = BOOST_LIB_VERSION;
        versions["nlohmann_json"] = std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                    std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                    std::to_string(NLOHMANN_JSON_VERSION_PATCH);
        versions["cli11"] = CLI11_VERSION;
        ojson m;
        m["tool"] = "skemb";
        m["subcommand"] = subcommand;
        m["config_hash"] = "fnv1a64:" + hex64(fnv1a(cfg.canonical));
        m["seed"] = cfg.solver.seed;
        m["threads"] = cfg.threads;
        m["exit_status"] = status;
        m["versions"] = versions;
        m["artifacts"] = files;
        m["timestamp"] = timestamp();
        write_file(cfg.output.dir / "manifest.json", m.dump(2) + "\n");
        if (!pass) err << "verdict: fail (see " << (cfg.output.dir / "report.json").string() << ")\n";
        return status;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

int cli_main(int argc, char** argv) {
    CLI::App app{"Skorokhod embedding solvers on the random-walk lattice", "skemb"};
    app.require_subcommand(1);
    std::string config;
    std::string out;
    std::uint64_t seed = 0;
    double tol = 0.0;
    const char* subs[][2] = {
        {"solve-primal", "exact LP over stopping flows"},
        {"solve-dual", "dual problem by LP duals or subgradient descent"},
        {"gap-report", "primal and dual values, certificate and contact set"},
        {"cave", "cave barrier, variational check and verification surface"},
        {"derandomize", "replace randomization by the path prefix on a tree"},
        {"verify-embedding", "Monte Carlo check of the embedded law"},
        {"counterexample-slm", "explosion probe and pathwise bound"},
    };
    std::vector<CLI::App*> apps;
    std::vector<CLI::Option*> seed_opts;
    std::vector<CLI::Option*> tol_opts;
    for (const auto& s : subs) {
        CLI::App* sub = app.add_subcommand(s[0], s[1]);
        sub->add_option("--config", config, "JSON configuration")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", out, "output directory (overrides output.dir)");
        seed_opts.push_back(sub->add_option("--seed", seed, "seed (overrides solver.seed)"));
        tol_opts.push_back(sub->add_option("--tol", tol, "tolerance (overrides solver.tol)")->check(CLI::PositiveNumber));
        apps.push_back(sub);
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }
    std::string name;
    Overrides ov;
    for (std::size_t i = 0; i < apps.size(); ++i) {
        if (!apps[i]->parsed()) continue;
        name = apps[i]->get_name();
        ov.has_seed = seed_opts[i]->count() > 0;
        ov.has_tol = tol_opts[i]->count() > 0;
    }
    ov.seed = seed;
    ov.tol = tol;
    ov.out = out;
    RunConfig cfg;
    try {
        const fs::path path(config);
        std::ifstream in(path, std::ios::binary);
        std::ostringstream os;
        os << in.rdbuf();
        cfg = parse_config(os.str(), path.parent_path(), ov);
        cfg.threads = threads_from_env();
    } catch (const std::exception& e) {
        std::cerr << "error: " << config << ": " << e.what() << "\n";
        return 1;
    }
    return run(name, cfg, std::cerr);
}

}  // namespace skemb
