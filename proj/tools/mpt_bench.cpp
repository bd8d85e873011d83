#include <CLI11.hpp>

#include <iostream>
#include <sstream>

#include "mpt/cli.hpp"
#include "mpt/response_cache.hpp"

namespace {

std::vector<std::string> split_commas(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    for (std::string item; std::getline(ss, item, ',');) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

int exit_code_for(const mpt::Error& e) {
    switch (e.code()) {
        case mpt::ErrorCode::Unreachable:
        case mpt::ErrorCode::AuthError: return mpt::kExitBackendUnreachable;
        default: return mpt::kExitConfigError;
    }
}

void print_stats(const mpt::CacheFileStats& s) {
    std::cout << "lines " << s.lines << "\nunique keys " << s.unique_keys << "\nduplicate lines " << s.duplicate_lines
              << "\nmalformed lines " << s.malformed_lines << "\nbytes " << s.bytes << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bias-mitigation benchmark harness"};
    app.require_subcommand(1);

    std::string config_path;
    std::string methods, ttest;
    int replicates = 0, concurrency = 0;
    std::size_t subset = 0;
    std::uint64_t seed = 0;

    auto* run = app.add_subcommand("run", "Run every configured method over the configured instances");
    run->add_option("--config", config_path, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
    auto* methods_opt = run->add_option("--methods", methods, "Comma-separated method labels or names to run");
    auto* reps_opt = run->add_option("--replicates", replicates, "Independent replicates")->check(CLI::PositiveNumber);
    auto* conc_opt = run->add_option("--concurrency", concurrency, "Worker threads / in-flight requests")
                         ->check(CLI::PositiveNumber);
    auto* subset_opt = run->add_option("--subset-per-category", subset, "Sample this many instances per category");
    auto* seed_opt = run->add_option("--seed", seed, "Sampling seed");

    std::string run_dir;
    bool no_plots = false;
    auto* report = app.add_subcommand("report", "Compute metrics for a finished run");
    report->add_option("run_dir", run_dir, "Run output directory")->required()->check(CLI::ExistingDirectory);
    report->add_option("--ttest", ttest, "Paired t-test between two method labels, e.g. mpt-r2,mad-a3-r3");
    report->add_flag("--no-plots", no_plots, "Skip SVG plots");

    auto* validate = app.add_subcommand("validate-config", "Check a run configuration without running it");
    validate->add_option("--config", config_path, "Run configuration (JSON)")->required();

    std::string cache_target;
    auto* cache = app.add_subcommand("cache", "Inspect or compact a response cache");
    cache->require_subcommand(1);
    auto* cache_stats = cache->add_subcommand("stats", "Summarize the cache file");
    cache_stats->add_option("path", cache_target, "Run directory, cache directory or cache file")->required();
    auto* cache_gc = cache->add_subcommand("gc", "Drop duplicate and malformed cache lines");
    cache_gc->add_option("path", cache_target, "Run directory, cache directory or cache file")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) {
            auto config = mpt::load_run_config(config_path);
            mpt::RunOverrides o;
            if (*methods_opt) o.methods = split_commas(methods);
            if (*reps_opt) o.replicates = replicates;
            if (*conc_opt) o.concurrency = concurrency;
            if (*subset_opt) o.subset_per_category = subset;
            if (*seed_opt) o.seed = seed;
            mpt::apply_overrides(config, o);
            return mpt::cmd_run(config, std::cerr).exit_code;
        }
        if (*report) {
            mpt::ReportOptions opts;
            opts.plots = !no_plots;
            if (!ttest.empty()) {
                auto pair = split_commas(ttest);
                if (pair.size() != 2) {
                    std::cerr << "--ttest expects two comma-separated method labels\n";
                    return mpt::kExitConfigError;
                }
                opts.ttest = std::make_pair(pair[0], pair[1]);
            }
            std::cout << mpt::cmd_report(run_dir, opts).table;
            return mpt::kExitOk;
        }
        if (*validate) {
            auto config = mpt::load_run_config(config_path);
            mpt::validate_run_config(config);
            auto instances = mpt::prepare_instances(config);
            std::cout << "ok: " << instances.size() << " instances, " << config.methods.size() << " methods, "
                      << config.replicates << " replicate(s)\n";
            std::size_t calls = 0;
            for (const auto& m : config.methods) {
                const int per = mpt::expected_calls(m, config.options);
                calls += static_cast<std::size_t>(per) * instances.size() * static_cast<std::size_t>(config.replicates);
                std::cout << "  " << m.label() << ": " << per << " calls per instance\n";
            }
            std::cout << "total model calls (before caching): " << calls << "\n";
            return mpt::kExitOk;
        }
        if (*cache_stats) {
            print_stats(mpt::inspect_cache_file(mpt::resolve_cache_file(cache_target)));
            return mpt::kExitOk;
        }
        if (*cache_gc) {
            print_stats(mpt::compact_cache_file(mpt::resolve_cache_file(cache_target)));
            return mpt::kExitOk;
        }
    } catch (const mpt::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return mpt::kExitConfigError;
    }
    return mpt::kExitOk;
}
