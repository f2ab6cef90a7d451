#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "skemb/diagnostics.hpp"
#include "skemb/lattice.hpp"
#include "skemb/tree.hpp"

namespace skemb {

struct ProblemConfig {
    double x_min = -2.0;
    double x_max = 2.0;
    double dx = 1.0;
    double eps_residual = 1e-6;
    int horizon = 0;             // 0 selects K from eps_residual
    std::vector<RealAtom> nu;    // quantized onto the grid
};

struct RewardConfig {
    std::string form = "time";   // time, cave-exp, cave-bowl, cave-table, table
    double t_p = 1.0;
    double a = 0.5;
    double dt_check = 0.01;
    std::vector<double> g;       // cave-table: g(i * dt_check)
    struct Entry {
        int k;
        int level;
        double value;
    };
    std::vector<Entry> table;    // table: missing nodes are 0
};

struct SolverConfig {
    std::string mode = "lp";     // lp, dual-descent, both
    long iters = 50'000;
    double step = 0.0;           // 0 selects the default initial step
    std::string schedule = "inverse-sqrt";
    double tol = 1e-9;
    double gap_tol = 1e-3;       // relative gap accepted from dual descent
    double gamma_tol = 1e-6;
    double check_tol = 0.0;      // cave checks; 0 selects 1e-3 + L dx
    std::uint64_t seed = 1;
};

struct SimulationConfig {
    SimConfig sim;               // seed and threads are filled in by run
    std::string rule = "lp";     // verify-embedding: lp or cave
    double t_end = 1.0;
    long pathwise_paths = 10'000;
};

struct KernelConfig {
    std::string form = "exit-mix";  // exit-mix or csv
    int from = 6;
    int b1 = 2;
    int b2 = 3;
    double w = 0.5;
    std::filesystem::path csv;
};

struct TreeConfig {
    int depth = 10;
    double dx = 0.5;
    double eta = 0.5;
    std::vector<int> prefix_depths{2, 4, 6};
    KernelConfig kernel;
    std::vector<std::string> payoffs{"square", "cos-decay", "time", "call", "tanh"};
};

struct OutputConfig {
    std::filesystem::path dir = "out";
    bool csv = true;
    bool json = true;
};

struct RunConfig {
    ProblemConfig problem;
    RewardConfig reward;
    SolverConfig solver;
    SimulationConfig simulation;
    TreeConfig tree;
    OutputConfig output;
    int threads = 1;
    std::string canonical;       // effective configuration, sorted keys
};

/// Overrides applied on top of the file, as given on the command line.
struct Overrides {
    bool has_seed = false;
    std::uint64_t seed = 0;
    bool has_tol = false;
    double tol = 0.0;
    std::filesystem::path out;
};

/// Parses a JSON configuration. Relative paths resolve against base_dir.
/// Throws InvalidInput with the line and column of a syntax error or the
/// dotted name of the offending field.
RunConfig parse_config(std::string_view text, const std::filesystem::path& base_dir,
                       const Overrides& ov = {});

/// Kernel CSV rows (path_id, index, mass) for every positive mass.
std::string kernel_csv(const TreeKernel& xi);
/// Inverse of kernel_csv on a depth-n tree. Throws InvalidInput naming the
/// line if the rows are not an adapted kernel.
TreeKernel read_kernel_csv(std::string_view text, int depth);

/// Runs one subcommand and writes its artifacts and manifest.json to
/// cfg.output.dir. Returns 0 on pass, 2 on a failed verdict and 1 on error;
/// errors are reported on err.
int run(const std::string& subcommand, const RunConfig& cfg, std::ostream& err);

/// Thread count from SKEMB_THREADS, defaulting to 1.
int threads_from_env();

/// Command-line entry point of the skemb tool.
int cli_main(int argc, char** argv);

}  // namespace skemb
