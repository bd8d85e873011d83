#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mpt/cli.hpp"
#include "mpt/datasets.hpp"
#include "support.hpp"

using namespace mpt;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

template <class F>
ErrorCode code_of(F&& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    return ErrorCode::IoError;
}

class CliTest : public ::testing::Test {
protected:
    void SetUp() override {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        dir_ = fs::temp_directory_path() / (std::string("mpt_cli_") + info->name());
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    fs::path write_instances(const std::vector<BiasInstance>& xs) {
        const auto p = dir_ / "instances.jsonl";
        write_instances_jsonl(p, xs);
        return p;
    }

    json base_config(const std::string& out) const {
        return json{{"datasets", {{{"kind", "instances"}, {"path", "instances.jsonl"}}}},
                    {"methods", json::array()},
                    {"backend", {{"kind", "rules"}, {"rules", {{{"respond", "The answer is a0."}}}}}},
                    {"concurrency", 3},
                    {"output_dir", out},
                    {"seeds", {{"sampling", 1}, {"decoding", 100}}}};
    }

    RunConfig config_from(const json& j) {
        const auto p = dir_ / "config.json";
        std::ofstream(p) << j.dump(2);
        return load_run_config(p);
    }

    fs::path dir_;
};

std::string read(const fs::path& p) { return test::slurp(p); }

}  // namespace

TEST_F(CliTest, MptRunWritesOneTranscriptPerInstance) {
    write_instances(test::synthetic_instances(10));
    auto j = base_config("run");
    j["methods"] = {{{"method", "mpt"}, {"review_rounds", 2}}};
    const auto config = config_from(j);
    std::ostringstream log;
    const auto summary = cmd_run(config, log);
    EXPECT_EQ(summary.exit_code, kExitOk);
    EXPECT_EQ(summary.completed, 10u);
    const auto transcripts = read_transcripts_jsonl(dir_ / "run/transcripts.jsonl");
    ASSERT_EQ(transcripts.size(), 10u);
    for (const auto& t : transcripts) {
        EXPECT_EQ(t.turns.size(), 10u);
        EXPECT_EQ(t.call_count, 10);
        EXPECT_EQ(t.final_answer, OptionLabel(0));
    }
    EXPECT_EQ(summary.backend_calls + summary.cached_calls, 100u);
    for (const char* f : {"manifest.json", "config.json", "instances.jsonl", "run_stats.json"}) {
        EXPECT_TRUE(fs::exists(dir_ / "run" / f)) << f;
    }
    const auto manifest = json::parse(read(dir_ / "run/manifest.json"));
    EXPECT_EQ(manifest.at("expected_calls_per_instance").at("mpt-r2"), 10);
}

TEST_F(CliTest, WarmRerunMakesNoBackendCalls) {
    write_instances(test::synthetic_instances(10));
    auto j = base_config("run");
    j["methods"] = {{{"method", "mpt"}, {"review_rounds", 2}}, {{"method", "direct"}}};
    const auto config = config_from(j);
    std::ostringstream log;
    const auto cold = cmd_run(config, log);
    EXPECT_GT(cold.backend_calls, 0u);
    const auto transcripts = read(dir_ / "run/transcripts.jsonl");
    const auto manifest = read(dir_ / "run/manifest.json");
    const auto warm = cmd_run(config, log);
    EXPECT_EQ(warm.exit_code, kExitOk);
    EXPECT_EQ(warm.backend_calls, 0u);
    EXPECT_EQ(read(dir_ / "run/transcripts.jsonl"), transcripts);
    EXPECT_EQ(read(dir_ / "run/manifest.json"), manifest);
}

TEST_F(CliTest, MissingDatasetIsAConfigError) {
    auto j = base_config("run");
    j["methods"] = {{{"method", "direct"}}};
    j["datasets"] = {{{"kind", "bbq"}, {"path", "no/such/dir"}}};
    const auto config = config_from(j);
    EXPECT_EQ(code_of([&] { validate_run_config(config); }), ErrorCode::ConfigError);
    std::ostringstream log;
    EXPECT_EQ(code_of([&] { cmd_run(config, log); }), ErrorCode::ConfigError);
    EXPECT_EQ(code_of([&] { load_run_config(dir_ / "absent.json"); }), ErrorCode::ConfigError);
}

TEST_F(CliTest, MalformedConfigIsAConfigError) {
    json j = base_config("run");
    j.erase("methods");
    EXPECT_EQ(code_of([&] { config_from(j); }), ErrorCode::ConfigError);
    j = base_config("run");
    j["methods"] = {{{"method", "telepathy"}}};
    EXPECT_EQ(code_of([&] { config_from(j); }), ErrorCode::ConfigError);
}

TEST_F(CliTest, ReportMatchesHandCounts) {
    const auto xs = test::synthetic_instances(24);
    write_instances(xs);
    auto j = base_config("run");
    j["methods"] = {{{"method", "direct"}}};
    std::ostringstream log;
    cmd_run(config_from(j), log);
    const auto report = cmd_report(dir_ / "run", {std::nullopt, false});

    // Every answer is a0, so each instance scores by the role sitting in slot 0.
    double amb = 0, amb_b = 0, amb_c = 0, amb_u = 0, gb = 0, gb_ok = 0, gc = 0, gc_ok = 0;
    for (const auto& x : xs) {
        const auto role = x.options[0].role;
        if (x.condition == Condition::Ambiguous) {
            ++amb;
            amb_b += role == AnswerRole::Biased;
            amb_c += role == AnswerRole::CounterBiased;
            amb_u += role == AnswerRole::Unknown;
        } else if (x.role_of(x.gold) == AnswerRole::Biased) {
            ++gb;
            gb_ok += role == AnswerRole::Biased;
        } else {
            ++gc;
            gc_ok += role == AnswerRole::CounterBiased;
        }
    }
    ASSERT_EQ(report.methods.size(), 1u);
    const auto& m = report.methods[0].pooled.overall;
    EXPECT_DOUBLE_EQ(*m.acc_amb, amb_u / amb);
    EXPECT_DOUBLE_EQ(*m.diffbias_amb, (amb_b - amb_c) / amb);
    EXPECT_DOUBLE_EQ(*m.acc_dis, (gb_ok + gc_ok) / (gb + gc));
    EXPECT_NEAR(*m.diffbias_dis, gb_ok / gb - gc_ok / gc, 1e-12);
    EXPECT_DOUBLE_EQ(report.methods[0].pooled.cost_multiplier, 1.0);
    EXPECT_TRUE(fs::exists(dir_ / "run/report.csv"));
    EXPECT_TRUE(report.csv.starts_with("method,variant,category,split,n,n_invalid,accuracy,diff_bias\n"));
}

TEST_F(CliTest, FiveReplicatePairedTest) {
    const auto xs = test::synthetic_instances(10);
    write_instances(xs);
    json scripts = json::object();
    for (int r = 0; r < 5; ++r) {
        for (std::size_t i = 0; i < xs.size(); ++i) {
            const auto& x = xs[i];
            const std::size_t wrong = (x.gold + 1) % kOptionCount;
            const bool std_ok = static_cast<int>(i) < 3 + r;
            const bool debias_ok = static_cast<int>(i) < 6 + (r % 3);
            scripts["r" + std::to_string(r) + "/direct-standard/" + x.id] = {label_name(std_ok ? x.gold : wrong)};
            scripts["r" + std::to_string(r) + "/direct-debias/" + x.id] = {label_name(debias_ok ? x.gold : wrong)};
        }
    }
    auto j = base_config("run");
    j["backend"] = {{"kind", "scripted"}, {"scripts", scripts}};
    j["methods"] = {{{"method", "direct"}, {"variant", "standard"}}, {{"method", "direct"}, {"variant", "debias"}}};
    j["replicates"] = 5;
    std::ostringstream log;
    const auto summary = cmd_run(config_from(j), log);
    ASSERT_EQ(summary.exit_code, kExitOk);

    ReportOptions opts;
    opts.ttest = std::make_pair(std::string("direct-debias"), std::string("direct-standard"));
    opts.plots = false;
    const auto report = cmd_report(dir_ / "run", opts);
    ASSERT_TRUE(report.ttest);
    ASSERT_TRUE(report.ttest->acc);
    EXPECT_EQ(report.ttest->acc->df, 4);
    EXPECT_GT(report.ttest->acc->t, 0.0);
    EXPECT_EQ(report.ttest->acc_a.size(), 5u);
    EXPECT_NE(report.table.find("df = 4"), std::string::npos) << report.table;
}

TEST_F(CliTest, SingleReplicateCannotBeTested) {
    write_instances(test::synthetic_instances(6));
    auto j = base_config("run");
    j["methods"] = {{{"method", "direct"}}, {{"method", "direct"}, {"variant", "debias"}}};
    std::ostringstream log;
    cmd_run(config_from(j), log);
    ReportOptions opts;
    opts.ttest = std::make_pair(std::string("direct-standard"), std::string("direct-debias"));
    EXPECT_EQ(code_of([&] { cmd_report(dir_ / "run", opts); }), ErrorCode::IncompatibleRuns);
    opts.ttest = std::make_pair(std::string("direct-standard"), std::string("mpt-r2"));
    EXPECT_EQ(code_of([&] { cmd_report(dir_ / "run", opts); }), ErrorCode::IncompatibleRuns);
    EXPECT_EQ(code_of([&] { cmd_report(dir_ / "nowhere"); }), ErrorCode::MissingTranscripts);
}

TEST_F(CliTest, ExhaustedScriptIsAPartialFailure) {
    const auto xs = test::synthetic_instances(4);
    write_instances(xs);
    json scripts = {{"*", {"a0", "a1"}}};
    auto j = base_config("run");
    j["backend"] = {{"kind", "scripted"}, {"scripts", scripts}};
    j["methods"] = {{{"method", "mpt"}, {"review_rounds", 0}}};
    std::ostringstream log;
    const auto summary = cmd_run(config_from(j), log);
    EXPECT_EQ(summary.exit_code, kExitPartialFailure);
    EXPECT_EQ(summary.failures.size(), 4u);
    EXPECT_EQ(summary.failures[0].code, ErrorCode::ScriptExhausted);
    EXPECT_TRUE(fs::exists(dir_ / "run/failures.jsonl"));
}

TEST_F(CliTest, ReportsAreByteIdenticalAcrossRuns) {
    write_instances(test::synthetic_instances(12));
    std::ostringstream log;
    for (const char* out : {"one", "two"}) {
        auto j = base_config(out);
        j["methods"] = {{{"method", "mpt"}, {"review_rounds", 1}}, {{"method", "self_consistency"}, {"samples", 3}}};
        j["cache_dir"] = std::string(out) + "-cache";
        cmd_run(config_from(j), log);
        cmd_report(dir_ / out);
    }
    EXPECT_EQ(read(dir_ / "one/transcripts.jsonl"), read(dir_ / "two/transcripts.jsonl"));
    EXPECT_EQ(read(dir_ / "one/report.csv"), read(dir_ / "two/report.csv"));
    const auto again = cmd_report(dir_ / "one");
    EXPECT_EQ(again.csv, read(dir_ / "one/report.csv"));
}

TEST_F(CliTest, OverridesNarrowTheRun) {
    write_instances(test::synthetic_instances(30));
    auto j = base_config("run");
    j["methods"] = {{{"method", "direct"}}, {{"method", "mpt"}}};
    auto config = config_from(j);
    RunOverrides o;
    o.methods = std::vector<std::string>{"direct-standard"};
    o.replicates = 2;
    o.subset_per_category = 2;
    apply_overrides(config, o);
    ASSERT_EQ(config.methods.size(), 1u);
    EXPECT_EQ(config.replicates, 2);
    EXPECT_EQ(prepare_instances(config).size(), 2u * 3u);
}
