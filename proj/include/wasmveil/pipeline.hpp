#pragma once

#include "wasmveil/analysis.hpp"
#include "wasmveil/code_obf.hpp"
#include "wasmveil/data_obf.hpp"
#include "wasmveil/interp.hpp"
#include "wasmveil/module.hpp"
#include "wasmveil/pass.hpp"
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>

namespace wasmveil
{
enum class CollatzMode : std::uint8_t
{
    none,
    o1,
    o2,
};

/// Invalid option combination.
struct ConfigError : std::invalid_argument
{
    using std::invalid_argument::invalid_argument;
};

struct ObfConfig
{
    bool name = false;
    bool exports = false;
    bool memory = false;
    bool rename_imports = false;
    std::optional<std::uint32_t> flatten;  // split count
    std::optional<unsigned> alias_pct;
    CollatzMode collatz = CollatzMode::none;
    std::uint64_t seed = 0;
    std::uint64_t key_seed = 0;
    std::set<std::string> allowlist = default_export_allowlist;

    bool any_pass() const { return name || exports || memory || flatten || alias_pct; }
    /// Throws ConfigError.
    void check() const;
    /// Short option label, e.g. "flatten10+collatz-o1".
    std::string label() const;
};

struct PipelineResult
{
    Module module;
    RenameMap renames;
    PassContext context;
    AliasReport alias;
    std::uint32_t flattened_functions = 0;
    std::map<std::uint32_t, FlattenPlan> flatten_plans;
};

/// Applies the selected passes in the order name, exports, alias, flatten,
/// memory. Throws ConfigError or PassError.
PipelineResult obfuscate(const Module& input, const ObfConfig& cfg);

/// Optional dynamic measurements for the metrics report.
struct StepMeasurement
{
    std::string entry;
    std::uint64_t steps_before = 0;
    std::uint64_t steps_after = 0;
    std::string verdict;  // "equal", "divergent" or "inconclusive"
};

/// JSON report: per-opcode counts, elem length, nesting histograms and byte
/// sizes before/after, plus overhead ratios.
std::string metrics_report(const Module& before, const Module& after, const ObfConfig& cfg,
    const std::optional<StepMeasurement>& steps = std::nullopt, const std::vector<std::string>& notes = {});

/// Writes metrics_report(...) to `path`. Throws std::runtime_error on I/O failure.
void emit_metrics(const Module& before, const Module& after, const std::string& path, const ObfConfig& cfg,
    const std::optional<StepMeasurement>& steps = std::nullopt, const std::vector<std::string>& notes = {});

enum ExitCode : int
{
    exit_ok = 0,
    exit_usage = 1,
    exit_invalid_input = 2,
    exit_pass_refused = 3,
    exit_io = 4,
};

struct OutputPaths
{
    std::string output;
    std::optional<std::string> rename_map;
    std::optional<std::string> metrics;
    /// Export to run on both modules for the step-count ratio.
    std::optional<std::string> probe;
};

/// Reads, obfuscates, re-validates and writes. Diagnostics go to `err`.
int run_pipeline(const std::string& input, const ObfConfig& cfg, const OutputPaths& out, std::ostream& err);
}  // namespace wasmveil

namespace wasmveil
{
/// Seeded argument vector for `type`: a mix of small and full-range values.
std::vector<Value> random_arguments(const FuncType& type, Rng& rng);
}  // namespace wasmveil
