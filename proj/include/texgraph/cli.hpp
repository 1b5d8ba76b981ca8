#pragma once

// Command-line frontend: run configuration, the gradient-check suite and the
// five commands (gen-data, train, eval, gradcheck, inspect).
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

#include <array>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "texgraph/gradcheck.hpp"
#include "texgraph/model.hpp"
#include "texgraph/texdata.hpp"
#include "texgraph/trainer.hpp"

namespace texgraph::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

/// Everything a command can be configured with. Keys are shared between the
/// key=value config file and `--set KEY=VALUE`; dedicated flags override both.
struct RunConfig {
    model::ModelConfig model;
    trainer::TrainConfig train;
    texdata::SyntheticSpec data;
    std::array<double, 3> split{0.8, 0.1, 0.1};

    /// ConfigError for malformed values; unknown keys report the nearest known key.
    void set(std::string_view key, std::string_view value);
    std::vector<std::pair<std::string, std::string>> entries() const;
    std::vector<std::string> keys() const;
    std::string to_text() const;
    void apply_file(const std::filesystem::path& path);
};

// ---------------------------------------------------------------------------
// Gradient-check suite

struct GradCase {
    std::string name;
    double tolerance = 1e-4;
    std::function<GradCheckReport()> run;
};

/// Every differentiable op plus the end-to-end model (16x16 input, K = 4, D_e = 4).
std::vector<GradCase> gradcheck_cases();

inline constexpr double kOpTolerance = 1e-4;
inline constexpr double kModelTolerance = 1e-3;

/// Runs the cases whose name equals `only` (all when empty), printing one row
/// per case. Returns kExitOk iff every case is within tolerance, kExitUsage if
/// `only` matches nothing, kExitRuntime otherwise.
int run_gradcheck(const std::vector<GradCase>& cases, std::string_view only, std::ostream& out, std::ostream& err);

// ---------------------------------------------------------------------------

/// Full command-line entry point.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace texgraph::cli
