#pragma once

#include "fracctl/evolution.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

namespace fracctl::cli {

enum ExitCode : int {
    kOk = 0,
    kConfigError = 2,     // bad config file, flag or parameter domain
    kNumericalError = 3,  // solver, eigensolver or quadrature failure
    kIoError = 4,         // unreadable/unwritable files, malformed reports or caches
    kVerifyFailed = 5,    // verify found a mismatch
};

struct RunConfig {
    // [problem]
    double s = 0.75;
    double horizon = 1.0;
    int grid = 1024;  // interior nodes
    int modes = 20;
    std::string region = "1.5:2.5";
    std::string initial = "phi1";  // phi<k> | random | zero | comma-separated coefficients
    std::string target = "none";   // none or the same forms as initial
    // [solver]
    std::optional<double> epsilon;  // unset: 0 for s > 1/2, 1e-10 trace(G)/N otherwise
    double cg_tolerance = 1e-12;
    int cg_max_iterations = 0;  // 0: 10 N
    // [output]
    std::string out = "out";
    std::string cache = "cache";
    std::uint64_t seed = 1;
    int samples = 11;  // time samples in trajectory tables
    long long muntz_max = 10000;
    int probes = 10;
    // [solve]
    double control_amplitude = 0.0;  // constant exterior datum for `solve`
    // [dual]
    std::string dual_points;  // comma-separated exterior points; empty: interval midpoints
};

// Reads key = value pairs under [problem], [solver], [output], [solve], [dual].
// Unknown sections or keys are errors.
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});
void validate(const RunConfig& c);

// Coefficients of an initial/target specification truncated to N modes.
ModalState parse_state(const std::string& spec, int N, std::uint64_t seed);

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace fracctl::cli
