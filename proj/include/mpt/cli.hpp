#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mpt/backends.hpp"
#include "mpt/http_backend.hpp"
#include "mpt/methods.hpp"
#include "mpt/metrics.hpp"
#include "mpt/statistics.hpp"

namespace mpt {

enum ExitCode : int { kExitOk = 0, kExitConfigError = 1, kExitPartialFailure = 2, kExitBackendUnreachable = 3 };

struct DatasetSource {
    std::string kind;  // "bbq", "stereoset" or "instances" (pre-built JSON lines)
    std::filesystem::path path;
    bool check_counts = false;
    bool skip_invalid = false;
};

struct BackendDescriptor {
    std::string kind;  // "openai", "scripted" or "rules"
    bool offline = false;  // replay from the cache only; a miss fails the task
    HttpBackendConfig http;
    nlohmann::json scripts = nlohmann::json::object();  // key -> list of responses
    std::vector<ScriptRule> rules;
};

struct RunConfig {
    std::filesystem::path config_path;
    std::vector<DatasetSource> datasets;
    std::size_t subset_per_category = 0;  // 0 keeps every instance
    bool shuffle_options = false;
    std::vector<MethodSpec> methods;
    MethodOptions options;
    BackendDescriptor backend;
    int concurrency = 4;
    std::filesystem::path cache_dir;  // empty: <output_dir>/cache
    std::filesystem::path output_dir;
    std::uint64_t sampling_seed = 0;
    std::int64_t decoding_seed = 0;
    int replicates = 1;

    std::filesystem::path cache_file() const;
};

/// Parses a JSON run configuration. Relative paths resolve against the
/// config file's directory. Throws Error{ConfigError}.
RunConfig load_run_config(const std::filesystem::path& path);
RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir);
/// Checks invariants and that every referenced input exists. Throws Error{ConfigError}.
void validate_run_config(const RunConfig& config);
nlohmann::json to_json(const RunConfig& config);
MethodOptions method_options_from_json(const nlohmann::json& j);
nlohmann::json to_json(const MethodOptions& options);

struct RunOverrides {
    std::optional<std::vector<std::string>> methods;  // keep specs whose label or method name matches
    std::optional<int> replicates;
    std::optional<int> concurrency;
    std::optional<std::size_t> subset_per_category;
    std::optional<std::uint64_t> seed;
};

void apply_overrides(RunConfig& config, const RunOverrides& overrides);

/// Loads, subsets and shuffles the configured datasets.
std::vector<BiasInstance> prepare_instances(const RunConfig& config);

struct TaskFailure {
    std::string method;
    std::string instance_id;
    int replicate = 0;
    ErrorCode code = ErrorCode::ServerError;
    std::string message;
};

struct RunSummary {
    int exit_code = kExitOk;
    std::size_t tasks = 0;
    std::size_t completed = 0;
    std::size_t backend_calls = 0;  // completions that reached the backend (cache misses)
    std::size_t cached_calls = 0;
    std::vector<TaskFailure> failures;
};

/// Runs every (replicate, method, instance) task and writes config.json,
/// manifest.json, instances.jsonl, transcripts.jsonl and run_stats.json into
/// the output directory. Responses are cached, so a rerun replays from disk.
RunSummary cmd_run(const RunConfig& config, std::ostream& log);

struct ReportOptions {
    std::optional<std::pair<std::string, std::string>> ttest;  // method labels A, B
    bool plots = true;
};

struct MethodReplicates {
    std::string label;
    MethodSpec spec;
    MetricReport pooled;
    std::vector<MetricReport> replicates;  // indexed by replicate number
};

struct TTestSummary {
    std::string a, b;
    std::vector<double> acc_a, acc_b, diffbias_a, diffbias_b;
    stats::Interval acc_ci_a, acc_ci_b, diffbias_ci_a, diffbias_ci_b;
    std::optional<stats::TTestResult> acc, diffbias;
    std::string acc_error, diffbias_error;  // set when the test is undefined (e.g. identical differences)
};

struct ReportResult {
    std::vector<MethodReplicates> methods;
    std::optional<TTestSummary> ttest;
    std::string csv;
    std::string table;
    nlohmann::json json;
};

/// Builds reports from a run directory and writes report.json, report.csv,
/// report.txt and, when the run has the right methods, SVG plots.
/// Throws Error{MissingTranscripts} or Error{IncompatibleRuns}.
ReportResult cmd_report(const std::filesystem::path& run_dir, const ReportOptions& options = {});

/// Pure report construction; used by cmd_report.
ReportResult build_run_report(const std::vector<BiasInstance>& instances, const std::vector<Transcript>& transcripts,
                              const ReportOptions& options = {});

std::string render_csv(const std::vector<MethodReplicates>& methods);
std::string render_table(const std::vector<MethodReplicates>& methods, const std::optional<TTestSummary>& ttest);

std::vector<Transcript> read_transcripts_jsonl(const std::filesystem::path& path);

/// Resolves a run directory, cache directory or cache file to the cache file.
std::filesystem::path resolve_cache_file(const std::filesystem::path& path);

}  // namespace mpt
