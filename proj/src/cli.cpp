#include "mpt/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include "mpt/datasets.hpp"
#include "mpt/hash.hpp"
#include "mpt/prompts.hpp"
#include "mpt/response_cache.hpp"

namespace mpt {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

[[noreturn]] void config_error(const std::string& message) { throw Error(ErrorCode::ConfigError, message); }

fs::path resolve(const fs::path& base, const std::string& p) {
    fs::path path(p);
    return path.is_absolute() ? path.lexically_normal() : (base / path).lexically_normal();
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
    out << content;
}

json load_json_file(const fs::path& path) {
    auto j = json::parse(read_file(path), nullptr, false);
    if (j.is_discarded()) config_error(path.string() + " is not valid JSON");
    return j;
}

std::vector<ScriptRule> rules_from_json(const json& j) {
    std::vector<ScriptRule> rules;
    for (const auto& r : j) {
        rules.push_back({r.value("system_contains", std::string()), r.value("user_contains", std::string()),
                         r.at("respond").get<std::string>()});
    }
    return rules;
}

}  // namespace

fs::path RunConfig::cache_file() const {
    return (cache_dir.empty() ? output_dir / "cache" : cache_dir) / "responses.jsonl";
}

MethodOptions method_options_from_json(const json& j) {
    MethodOptions o;
    o.label_persona_history = j.value("label_persona_history", o.label_persona_history);
    o.label_agent_history = j.value("label_agent_history", o.label_agent_history);
    o.prefer_unknown_on_tie = j.value("prefer_unknown_on_tie", o.prefer_unknown_on_tie);
    o.mad_judge = j.value("mad_judge", o.mad_judge);
    o.aggregation_includes_question = j.value("aggregation_includes_question", o.aggregation_includes_question);
    if (j.contains("unknown_keywords")) {
        o.extraction.unknown_keywords = j.at("unknown_keywords").get<std::vector<std::string>>();
    }
    return o;
}

json to_json(const MethodOptions& o) {
    return json{{"label_persona_history", o.label_persona_history},
                {"label_agent_history", o.label_agent_history},
                {"prefer_unknown_on_tie", o.prefer_unknown_on_tie},
                {"mad_judge", o.mad_judge},
                {"aggregation_includes_question", o.aggregation_includes_question},
                {"unknown_keywords", o.extraction.unknown_keywords}};
}

RunConfig parse_run_config(const json& j, const fs::path& base_dir) {
    if (!j.is_object()) config_error("configuration must be a JSON object");
    RunConfig c;
    try {
        for (const auto& d : j.at("datasets")) {
            DatasetSource src;
            src.kind = d.at("kind").get<std::string>();
            src.path = resolve(base_dir, d.at("path").get<std::string>());
            src.check_counts = d.value("check_counts", false);
            src.skip_invalid = d.value("skip_invalid", false);
            c.datasets.push_back(std::move(src));
        }
        c.subset_per_category = j.value("subset_per_category", std::size_t{0});
        c.shuffle_options = j.value("shuffle_options", false);
        for (const auto& m : j.at("methods")) c.methods.push_back(method_spec_from_json(m));
        if (j.contains("options")) c.options = method_options_from_json(j.at("options"));

        const json& b = j.at("backend");
        c.backend.kind = b.at("kind").get<std::string>();
        c.backend.offline = b.value("offline", false);
        if (c.backend.kind == "openai") {
            auto& h = c.backend.http;
            h.base_url = b.at("base_url").get<std::string>();
            h.path = b.value("path", h.path);
            h.model = b.at("model").get<std::string>();
            h.auth_env = b.value("auth_env", h.auth_env);
            h.timeout = std::chrono::milliseconds(b.value("timeout_ms", static_cast<std::int64_t>(h.timeout.count())));
            if (b.contains("retry")) {
                const json& r = b.at("retry");
                h.retry.attempts = r.value("attempts", h.retry.attempts);
                h.retry.base_delay = std::chrono::milliseconds(
                    r.value("base_delay_ms", static_cast<std::int64_t>(h.retry.base_delay.count())));
                h.retry.max_delay = std::chrono::milliseconds(
                    r.value("max_delay_ms", static_cast<std::int64_t>(h.retry.max_delay.count())));
                h.retry.jitter = r.value("jitter", h.retry.jitter);
            }
        } else if (c.backend.kind == "scripted") {
            const json& s = b.at("scripts");
            c.backend.scripts = s.is_string() ? load_json_file(resolve(base_dir, s.get<std::string>())) : s;
            if (!c.backend.scripts.is_object()) config_error("scripts must map keys to response lists");
        } else if (c.backend.kind == "rules") {
            const json& r = b.at("rules");
            c.backend.rules = rules_from_json(r.is_string() ? load_json_file(resolve(base_dir, r.get<std::string>())) : r);
        } else {
            config_error("unknown backend kind '" + c.backend.kind + "'");
        }

        c.concurrency = j.value("concurrency", c.concurrency);
        c.backend.http.max_in_flight = c.concurrency;
        if (j.contains("cache_dir")) c.cache_dir = resolve(base_dir, j.at("cache_dir").get<std::string>());
        c.output_dir = resolve(base_dir, j.at("output_dir").get<std::string>());
        if (j.contains("seeds")) {
            const json& s = j.at("seeds");
            c.sampling_seed = s.value("sampling", c.sampling_seed);
            c.decoding_seed = s.value("decoding", c.decoding_seed);
        }
        c.replicates = j.value("replicates", c.replicates);
    } catch (const json::exception& e) {
        config_error(e.what());
    } catch (const Error& e) {
        if (e.code() == ErrorCode::ConfigError) throw;
        config_error(e.what());
    }
    return c;
}

RunConfig load_run_config(const fs::path& path) {
    if (!fs::exists(path)) config_error("config file not found: " + path.string());
    auto c = parse_run_config(load_json_file(path), fs::absolute(path).parent_path());
    c.config_path = fs::absolute(path).lexically_normal();
    return c;
}

void validate_run_config(const RunConfig& c) {
    if (c.datasets.empty()) config_error("no datasets configured");
    for (const auto& d : c.datasets) {
        if (d.kind != "bbq" && d.kind != "stereoset" && d.kind != "instances") {
            config_error("unknown dataset kind '" + d.kind + "'");
        }
        if (!fs::exists(d.path)) config_error("dataset path does not exist: " + d.path.string());
    }
    if (c.methods.empty()) config_error("no methods configured");
    std::set<std::string> labels;
    for (const auto& m : c.methods) {
        try {
            validate_method_spec(m);
        } catch (const Error& e) {
            config_error(e.what());
        }
        if (!labels.insert(m.label()).second) config_error("two methods share the label " + m.label());
    }
    if (c.replicates < 1) config_error("replicates must be at least 1");
    if (c.concurrency < 1) config_error("concurrency must be at least 1");
    if (c.output_dir.empty()) config_error("output_dir is required");
    if (c.backend.kind == "openai") {
        if (c.backend.http.base_url.empty() || c.backend.http.model.empty()) {
            config_error("openai backend needs base_url and model");
        }
        if (c.backend.http.retry.attempts < 1) config_error("retry.attempts must be at least 1");
    }
}

json to_json(const RunConfig& c) {
    json datasets = json::array();
    for (const auto& d : c.datasets) {
        datasets.push_back({{"kind", d.kind}, {"path", d.path.string()}, {"check_counts", d.check_counts},
                            {"skip_invalid", d.skip_invalid}});
    }
    json methods = json::array();
    for (const auto& m : c.methods) methods.push_back(to_json(m));
    json backend{{"kind", c.backend.kind}, {"offline", c.backend.offline}};
    if (c.backend.kind == "openai") {
        const auto& h = c.backend.http;
        backend["base_url"] = h.base_url;
        backend["path"] = h.path;
        backend["model"] = h.model;
        backend["auth_env"] = h.auth_env;
        backend["timeout_ms"] = h.timeout.count();
        backend["retry"] = {{"attempts", h.retry.attempts},
                            {"base_delay_ms", h.retry.base_delay.count()},
                            {"max_delay_ms", h.retry.max_delay.count()},
                            {"jitter", h.retry.jitter}};
    } else if (c.backend.kind == "scripted") {
        backend["scripts"] = c.backend.scripts;
    } else if (c.backend.kind == "rules") {
        json rules = json::array();
        for (const auto& r : c.backend.rules) {
            rules.push_back({{"system_contains", r.system_contains}, {"user_contains", r.user_contains},
                             {"respond", r.respond}});
        }
        backend["rules"] = rules;
    }
    json out{{"datasets", datasets},
             {"subset_per_category", c.subset_per_category},
             {"shuffle_options", c.shuffle_options},
             {"methods", methods},
             {"options", to_json(c.options)},
             {"backend", backend},
             {"concurrency", c.concurrency},
             {"output_dir", c.output_dir.string()},
             {"seeds", {{"sampling", c.sampling_seed}, {"decoding", c.decoding_seed}}},
             {"replicates", c.replicates}};
    if (!c.cache_dir.empty()) out["cache_dir"] = c.cache_dir.string();
    return out;
}

void apply_overrides(RunConfig& c, const RunOverrides& o) {
    if (o.methods) {
        std::vector<MethodSpec> kept;
        for (const auto& m : c.methods) {
            const bool match = std::any_of(o.methods->begin(), o.methods->end(), [&](const std::string& name) {
                return name == m.label() || name == to_string(m.method);
            });
            if (match) kept.push_back(m);
        }
        if (kept.empty()) config_error("--methods matched none of the configured methods");
        c.methods = std::move(kept);
    }
    if (o.replicates) c.replicates = *o.replicates;
    if (o.concurrency) {
        c.concurrency = *o.concurrency;
        c.backend.http.max_in_flight = *o.concurrency;
    }
    if (o.subset_per_category) c.subset_per_category = *o.subset_per_category;
    if (o.seed) c.sampling_seed = *o.seed;
}

std::vector<BiasInstance> prepare_instances(const RunConfig& c) {
    std::vector<BiasInstance> all;
    for (const auto& d : c.datasets) {
        LoadOptions opts;
        opts.skip_invalid = d.skip_invalid;
        std::vector<BiasInstance> loaded;
        if (d.kind == "bbq") {
            loaded = load_bbq(d.path, opts);
            if (d.check_counts) check_counts(loaded, bbq_manifest());
        } else if (d.kind == "stereoset") {
            loaded = adapt_stereoset(d.path, opts);
            if (d.check_counts) check_counts(loaded, stereoset_manifest());
        } else {
            loaded = read_instances_jsonl(d.path);
        }
        if (c.subset_per_category > 0) {
            // Sample within each dataset so StereoSet's word and sentence levels stay apart.
            std::map<Dataset, std::vector<BiasInstance>> by_dataset;
            std::vector<Dataset> order;
            for (auto& inst : loaded) {
                if (!by_dataset.contains(inst.dataset)) order.push_back(inst.dataset);
                by_dataset[inst.dataset].push_back(std::move(inst));
            }
            loaded.clear();
            for (auto ds : order) {
                auto part = sample_subset(by_dataset[ds], c.subset_per_category, c.sampling_seed);
                std::move(part.begin(), part.end(), std::back_inserter(loaded));
            }
        }
        std::move(loaded.begin(), loaded.end(), std::back_inserter(all));
    }
    if (c.shuffle_options) all = shuffle_options(std::move(all), c.sampling_seed);
    std::set<std::string> ids;
    for (const auto& inst : all) {
        if (!ids.insert(inst.id).second) config_error("duplicate instance id " + inst.id);
    }
    return all;
}

namespace {

class TallyingBackend : public ChatBackend {
public:
    TallyingBackend(std::shared_ptr<ChatBackend> inner, std::atomic<std::size_t>& counter)
        : inner_(std::move(inner)), counter_(counter) {}
    ModelResponse complete(const Conversation& c) override {
        ++counter_;
        return inner_->complete(c);
    }
    std::string id() const override { return inner_->id(); }
    std::string model() const override { return inner_->model(); }

private:
    std::shared_ptr<ChatBackend> inner_;
    std::atomic<std::size_t>& counter_;
};

std::vector<std::string> script_for(const json& scripts, int replicate, const std::string& label,
                                    const std::string& instance_id) {
    const std::string keys[] = {"r" + std::to_string(replicate) + "/" + label + "/" + instance_id,
                                label + "/" + instance_id, instance_id, "*"};
    for (const auto& key : keys) {
        if (scripts.contains(key)) return scripts.at(key).get<std::vector<std::string>>();
    }
    return {};
}

bool backend_down(ErrorCode code) { return code == ErrorCode::Unreachable || code == ErrorCode::AuthError; }

}  // namespace

RunSummary cmd_run(const RunConfig& config, std::ostream& log) {
    validate_run_config(config);
    const auto instances = prepare_instances(config);
    if (instances.empty()) config_error("the configured datasets produced no instances");

    const fs::path out = config.output_dir;
    fs::create_directories(out);
    write_file(out / "config.json", to_json(config).dump(2) + "\n");
    write_instances_jsonl(out / "instances.jsonl", instances);

    auto store = std::make_shared<ResponseStore>(config.cache_file());
    std::atomic<std::size_t> backend_calls{0};

    // Stateless backends are shared across workers; scripted ones are built per task.
    std::shared_ptr<ChatBackend> shared_inner;
    std::string backend_id = config.backend.kind;
    std::string model;
    if (config.backend.kind == "openai") {
        auto http = std::make_shared<HttpChatBackend>(config.backend.http);
        backend_id = http->id();
        model = http->model();
        shared_inner = http;
    } else if (config.backend.kind == "rules") {
        shared_inner = std::make_shared<RuleBackend>(config.backend.rules);
        backend_id = shared_inner->id();
    } else {
        backend_id = "scripted";
    }
    if (config.backend.offline) shared_inner.reset();
    std::shared_ptr<CachingBackend> shared_cache;
    if (config.backend.kind != "scripted" || config.backend.offline) {
        shared_cache = std::make_shared<CachingBackend>(
            store, shared_inner ? std::make_shared<TallyingBackend>(shared_inner, backend_calls) : nullptr, backend_id,
            model);
    }

    struct Task {
        std::size_t method;
        std::size_t instance;
        int replicate;
    };
    std::vector<Task> tasks;
    for (int r = 0; r < config.replicates; ++r) {
        for (std::size_t m = 0; m < config.methods.size(); ++m) {
            for (std::size_t i = 0; i < instances.size(); ++i) tasks.push_back({m, i, r});
        }
    }

    std::vector<std::optional<Transcript>> results(tasks.size());
    std::vector<std::optional<TaskFailure>> failures(tasks.size());
    std::atomic<std::size_t> next{0};
    std::atomic<bool> stop{false};
    std::atomic<std::size_t> done{0};
    std::mutex log_mutex;

    auto worker = [&] {
        for (;;) {
            const std::size_t idx = next++;
            if (idx >= tasks.size() || stop.load()) return;
            const Task& task = tasks[idx];
            MethodSpec spec = config.methods[task.method];
            spec.decoding.seed += config.decoding_seed + task.replicate;
            const auto& inst = instances[task.instance];
            try {
                std::shared_ptr<ChatBackend> backend = shared_cache;
                if (!backend) {
                    auto scripted = std::make_shared<ScriptedBackend>(
                        script_for(config.backend.scripts, task.replicate, spec.label(), inst.id));
                    backend = std::make_shared<CachingBackend>(
                        store, std::make_shared<TallyingBackend>(scripted, backend_calls), backend_id, model);
                }
                auto outcome = run_method(inst, spec, *backend, config.options);
                outcome.transcript.replicate = task.replicate;
                results[idx] = std::move(outcome.transcript);
            } catch (const Error& e) {
                failures[idx] = TaskFailure{spec.label(), inst.id, task.replicate, e.code(), e.what()};
                if (backend_down(e.code())) stop = true;
            }
            const std::size_t finished = ++done;
            if (finished % 100 == 0 || finished == tasks.size()) {
                std::lock_guard lock(log_mutex);
                log << "progress " << finished << "/" << tasks.size() << "\n";
            }
        }
    };
    {
        std::vector<std::jthread> pool;
        const int workers = std::min<int>(config.concurrency, static_cast<int>(tasks.size()));
        for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    }

    RunSummary summary;
    summary.tasks = tasks.size();
    std::string transcripts;
    std::size_t total_turns = 0;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        if (results[i]) {
            ++summary.completed;
            total_turns += results[i]->turns.size();
            transcripts += to_json(*results[i]).dump() + "\n";
        } else if (failures[i]) {
            summary.failures.push_back(*failures[i]);
        }
    }
    write_file(out / "transcripts.jsonl", transcripts);
    summary.backend_calls = backend_calls.load();
    summary.cached_calls = total_turns > summary.backend_calls ? total_turns - summary.backend_calls : 0;

    std::string failure_lines;
    for (const auto& f : summary.failures) {
        failure_lines += json{{"method", f.method},
                              {"instance_id", f.instance_id},
                              {"replicate", f.replicate},
                              {"code", to_string(f.code)},
                              {"message", f.message}}
                             .dump() +
                         "\n";
    }
    if (failure_lines.empty()) fs::remove(out / "failures.jsonl");
    else write_file(out / "failures.jsonl", failure_lines);

    json expected = json::object();
    json labels = json::array();
    for (const auto& m : config.methods) {
        labels.push_back(m.label());
        expected[m.label()] = expected_calls(m, config.options);
    }
    json sources = json::array();
    for (const auto& d : config.datasets) sources.push_back({{"kind", d.kind}, {"path", d.path.string()}});
    json manifest{{"tool", "mpt_bench"},
                  {"template_version", prompts::template_version()},
                  {"backend", {{"kind", config.backend.kind}, {"id", backend_id}, {"model", model}}},
                  {"datasets", sources},
                  {"stereoset_adaptation", std::string(kStereoSetAdaptationVersion)},
                  {"instance_count", instances.size()},
                  {"instances_sha256", sha256_hex(read_file(out / "instances.jsonl"))},
                  {"methods", labels},
                  {"expected_calls_per_instance", expected},
                  {"replicates", config.replicates},
                  {"seeds", {{"sampling", config.sampling_seed}, {"decoding", config.decoding_seed}}},
                  {"subset_per_category", config.subset_per_category},
                  {"shuffle_options", config.shuffle_options},
                  {"cache_file", fs::relative(config.cache_file(), out).generic_string()}};
    write_file(out / "manifest.json", manifest.dump(2) + "\n");

    const bool down = std::any_of(summary.failures.begin(), summary.failures.end(),
                                  [](const TaskFailure& f) { return backend_down(f.code); });
    if (down) summary.exit_code = kExitBackendUnreachable;
    else if (summary.completed != summary.tasks) summary.exit_code = kExitPartialFailure;

    write_file(out / "run_stats.json", json{{"tasks", summary.tasks},
                                            {"completed", summary.completed},
                                            {"failed", summary.failures.size()},
                                            {"backend_calls", summary.backend_calls},
                                            {"cached_calls", summary.cached_calls},
                                            {"exit_code", summary.exit_code}}
                                           .dump(2) +
                                           "\n");
    log << "completed " << summary.completed << "/" << summary.tasks << " tasks, " << summary.backend_calls
        << " backend calls, " << summary.cached_calls << " served from cache\n";
    for (const auto& f : summary.failures) {
        log << "failed " << f.method << " " << f.instance_id << " replicate " << f.replicate << ": " << f.message
            << "\n";
    }
    return summary;
}

std::vector<Transcript> read_transcripts_jsonl(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::MissingTranscripts, "no transcripts at " + path.string());
    std::vector<Transcript> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto j = json::parse(line, nullptr, false);
        if (j.is_discarded()) throw Error(ErrorCode::SchemaError, "malformed transcript line in " + path.string());
        out.push_back(transcript_from_json(j));
    }
    return out;
}

namespace {

std::string fixed(const std::optional<double>& v) {
    if (!v) return "";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", *v + 0.0);
    return buf;
}

std::string fixed4(const std::optional<double>& v) {
    if (!v) return "-";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", *v + 0.0);
    return buf;
}

std::string pad(std::string s, std::size_t width) {
    if (s.size() < width) s.append(width - s.size(), ' ');
    return s;
}

void csv_rows(std::string& out, const MethodReplicates& m, const std::string& scope, const SplitMetrics& s) {
    const auto& t = s.counts;
    auto row = [&](const char* split, std::uint64_t n, std::uint64_t invalid, const std::optional<double>& acc,
                   const std::optional<double>& db) {
        out += m.label + "," + std::string(to_string(m.spec.variant)) + "," + scope + "," + split + "," +
               std::to_string(n) + "," + std::to_string(invalid) + "," + fixed(acc) + "," + fixed(db) + "\n";
    };
    if (t.n_a() > 0) row("ambiguous", t.n_a(), t.n_invalid_amb, s.acc_amb, s.diffbias_amb);
    if (t.n_b() + t.n_c() > 0) {
        row("disambiguated", t.n_b() + t.n_c(), t.n_invalid_b + t.n_invalid_c, s.acc_dis, s.diffbias_dis);
    }
    row("average", t.total(), t.n_invalid(), s.acc_avg, s.diffbias_avg);
}

std::string svg_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '&': out += "&amp;"; break;
            default: out.push_back(c);
        }
    }
    return out;
}

struct Series {
    std::string name;
    std::vector<double> values;
};

// Grouped bars or lines over categorical x positions, one panel per series.
std::string svg_chart(const std::string& title, const std::vector<std::string>& xs, const std::vector<Series>& series,
                      bool lines) {
    constexpr int panel_w = 360, panel_h = 240, margin = 50;
    const int width = static_cast<int>(series.size()) * (panel_w + margin) + margin;
    const int height = panel_h + 2 * margin + 20;
    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    svg << "<text x=\"" << margin << "\" y=\"20\" font-size=\"14\">" << svg_escape(title) << "</text>\n";
    for (std::size_t p = 0; p < series.size(); ++p) {
        const auto& s = series[p];
        const int x0 = margin + static_cast<int>(p) * (panel_w + margin);
        const int y0 = margin + 10;
        double hi = 0.0;
        for (double v : s.values) hi = std::max(hi, v);
        hi = hi > 0 ? hi * 1.15 : 1.0;
        svg << "<text x=\"" << x0 << "\" y=\"" << y0 - 8 << "\">" << svg_escape(s.name) << "</text>\n";
        svg << "<line x1=\"" << x0 << "\" y1=\"" << y0 + panel_h << "\" x2=\"" << x0 + panel_w << "\" y2=\""
            << y0 + panel_h << "\" stroke=\"black\"/>\n";
        svg << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x0 << "\" y2=\"" << y0 + panel_h
            << "\" stroke=\"black\"/>\n";
        const double step = static_cast<double>(panel_w) / static_cast<double>(std::max<std::size_t>(xs.size(), 1));
        std::string points;
        for (std::size_t i = 0; i < s.values.size() && i < xs.size(); ++i) {
            const double cx = x0 + step * (static_cast<double>(i) + 0.5);
            const double h = s.values[i] / hi * panel_h;
            const double cy = y0 + panel_h - h;
            char buf[256];
            if (lines) {
                std::snprintf(buf, sizeof buf, "<circle cx=\"%.1f\" cy=\"%.1f\" r=\"3\"/>\n", cx, cy);
                points += std::to_string(cx) + "," + std::to_string(cy) + " ";
            } else {
                std::snprintf(buf, sizeof buf,
                              "<rect x=\"%.1f\" y=\"%.1f\" width=\"%.1f\" height=\"%.1f\" fill=\"steelblue\"/>\n",
                              cx - step * 0.3, cy, step * 0.6, h);
            }
            svg << buf;
            std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">%.4f</text>\n", cx,
                          cy - 6, s.values[i]);
            svg << buf;
            std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%d\" text-anchor=\"middle\">", cx, y0 + panel_h + 16);
            svg << buf << svg_escape(xs[i]) << "</text>\n";
        }
        if (lines && !points.empty()) {
            svg << "<polyline fill=\"none\" stroke=\"steelblue\" points=\"" << points << "\"/>\n";
        }
    }
    svg << "</svg>\n";
    return svg.str();
}

double or_zero(const std::optional<double>& v) { return v.value_or(0.0); }

void write_plots(const fs::path& dir, const std::vector<MethodReplicates>& methods) {
    std::map<int, const MethodReplicates*> sweep;
    for (const auto& m : methods) {
        if (m.spec.method == Method::MPT && m.spec.include_neutral) sweep[m.spec.review_rounds] = &m;
    }
    if (sweep.size() >= 2) {
        std::vector<std::string> xs;
        Series acc{"Average accuracy", {}}, db{"Average diff-bias", {}};
        for (const auto& [r, m] : sweep) {
            xs.push_back("R=" + std::to_string(r));
            acc.values.push_back(or_zero(m->pooled.overall.acc_avg));
            db.values.push_back(or_zero(m->pooled.overall.diffbias_avg));
        }
        write_file(dir / "rounds_sweep.svg", svg_chart("Review rounds sweep", xs, {acc, db}, true));
    }
    for (const auto& sc : methods) {
        if (sc.spec.method != Method::MPTSelfConsistency) continue;
        for (const auto& base : methods) {
            if (base.spec.method != Method::MPT || base.spec.review_rounds != sc.spec.review_rounds ||
                base.spec.include_neutral != sc.spec.include_neutral) {
                continue;
            }
            std::vector<std::string> xs{base.label, sc.label};
            Series acc{"Average accuracy",
                       {or_zero(base.pooled.overall.acc_avg), or_zero(sc.pooled.overall.acc_avg)}};
            Series db{"Average diff-bias",
                      {or_zero(base.pooled.overall.diffbias_avg), or_zero(sc.pooled.overall.diffbias_avg)}};
            write_file(dir / ("sc_composition_" + sc.label + ".svg"),
                       svg_chart("Self-consistency on top of multi-persona reasoning", xs, {acc, db}, false));
        }
    }
}

json interval_json(const stats::Interval& i) { return json{{"mean", i.mean}, {"halfwidth", i.halfwidth}}; }

json ttest_json(const std::optional<stats::TTestResult>& r, const std::string& error) {
    if (!r) return json{{"error", error}};
    return json{{"t", r->t}, {"p", r->p}, {"df", r->df}};
}

}  // namespace

std::string render_csv(const std::vector<MethodReplicates>& methods) {
    std::string out = "method,variant,category,split,n,n_invalid,accuracy,diff_bias\n";
    for (const auto& m : methods) {
        csv_rows(out, m, "ALL", m.pooled.overall);
        for (const auto& [name, s] : m.pooled.per_dataset) csv_rows(out, m, name, s);
        for (const auto& [name, s] : m.pooled.per_category) csv_rows(out, m, name, s);
    }
    return out;
}

std::string render_table(const std::vector<MethodReplicates>& methods, const std::optional<TTestSummary>& ttest) {
    std::size_t w = 8;
    for (const auto& m : methods) w = std::max(w, m.label.size() + 2);
    std::string out = pad("Method", w) + pad("Cost", 8) + pad("Acc_amb", 10) + pad("Acc_dis", 10) + pad("Acc_avg", 10) +
                      pad("DB_amb", 10) + pad("DB_dis", 10) + "DB_avg\n";
    for (const auto& m : methods) {
        const auto& o = m.pooled.overall;
        char cost[32];
        std::snprintf(cost, sizeof cost, "%.2fx", m.pooled.cost_multiplier);
        out += pad(m.label, w) + pad(cost, 8) + pad(fixed4(o.acc_amb), 10) + pad(fixed4(o.acc_dis), 10) +
               pad(fixed4(o.acc_avg), 10) + pad(fixed4(o.diffbias_amb), 10) + pad(fixed4(o.diffbias_dis), 10) +
               fixed4(o.diffbias_avg) + "\n";
    }
    out += "Accuracy higher is better; diff-bias closer to zero is better. Cost = model calls per query.\n";
    if (ttest) {
        char buf[512];
        out += "\nPaired t-test over per-replicate run averages (" + std::to_string(ttest->acc_a.size()) +
               " replicates)\n";
        auto ci = [&](const std::string& label, const stats::Interval& acc, const stats::Interval& db) {
            std::snprintf(buf, sizeof buf, "%s  Avg. Acc %.4f (+/- %.4f)  Avg. Diff-bias %.4f (+/- %.4f)\n",
                          pad(label, w).c_str(), acc.mean, acc.halfwidth, db.mean, db.halfwidth);
            out += buf;
        };
        ci(ttest->a, ttest->acc_ci_a, ttest->diffbias_ci_a);
        ci(ttest->b, ttest->acc_ci_b, ttest->diffbias_ci_b);
        auto line = [&](const char* name, const std::optional<stats::TTestResult>& r, const std::string& err) {
            if (r) std::snprintf(buf, sizeof buf, "%s: t = %.4f, p = %.3g, df = %d\n", name, r->t, r->p, r->df);
            else std::snprintf(buf, sizeof buf, "%s: undefined (%s)\n", name, err.c_str());
            out += buf;
        };
        line("Avg. Acc", ttest->acc, ttest->acc_error);
        line("Avg. Diff-bias", ttest->diffbias, ttest->diffbias_error);
    }
    return out;
}

ReportResult build_run_report(const std::vector<BiasInstance>& instances, const std::vector<Transcript>& transcripts,
                              const ReportOptions& options) {
    if (transcripts.empty()) throw Error(ErrorCode::MissingTranscripts, "run contains no transcripts");
    std::map<std::string, const BiasInstance*> by_id;
    for (const auto& inst : instances) by_id[inst.id] = &inst;

    std::vector<std::string> order;
    std::map<std::string, MethodSpec> specs;
    std::map<std::string, std::map<int, std::vector<EvaluatedAnswer>>> grouped;
    std::map<std::string, std::map<int, std::set<std::string>>> instance_sets;
    for (const auto& t : transcripts) {
        const std::string label = t.method.label();
        if (!specs.contains(label)) {
            order.push_back(label);
            specs[label] = t.method;
        }
        auto it = by_id.find(t.instance_id);
        if (it == by_id.end()) {
            throw Error(ErrorCode::MissingTranscripts, "transcript refers to unknown instance " + t.instance_id);
        }
        grouped[label][t.replicate].push_back({it->second, t.final_answer, t.call_count});
        instance_sets[label][t.replicate].insert(t.instance_id);
    }

    ReportResult result;
    for (const auto& label : order) {
        MethodReplicates m;
        m.label = label;
        m.spec = specs[label];
        const std::string variant(to_string(m.spec.variant));
        std::vector<EvaluatedAnswer> pooled;
        for (const auto& [rep, answers] : grouped[label]) {
            m.replicates.push_back(build_report(label, variant, answers));
            pooled.insert(pooled.end(), answers.begin(), answers.end());
        }
        m.pooled = build_report(label, variant, pooled);
        result.methods.push_back(std::move(m));
    }

    if (options.ttest) {
        const auto& [a, b] = *options.ttest;
        for (const auto& name : {a, b}) {
            if (!grouped.contains(name)) throw Error(ErrorCode::IncompatibleRuns, "no method labelled " + name);
            if (grouped[name].size() < 2) {
                throw Error(ErrorCode::IncompatibleRuns,
                            name + " has " + std::to_string(grouped[name].size()) +
                                " replicate(s); a paired t-test needs at least 2");
            }
        }
        if (instance_sets[a] != instance_sets[b]) {
            throw Error(ErrorCode::IncompatibleRuns, a + " and " + b + " were run on different replicates or instances");
        }
        TTestSummary s;
        s.a = a;
        s.b = b;
        auto collect = [&](const std::string& name, std::vector<double>& acc, std::vector<double>& db) {
            const auto& m = *std::find_if(result.methods.begin(), result.methods.end(),
                                          [&](const MethodReplicates& x) { return x.label == name; });
            for (const auto& rep : m.replicates) {
                if (!rep.overall.acc_avg || !rep.overall.diffbias_avg) {
                    throw Error(ErrorCode::IncompatibleRuns, name + " lacks averaged metrics for a replicate");
                }
                acc.push_back(*rep.overall.acc_avg);
                db.push_back(*rep.overall.diffbias_avg);
            }
        };
        collect(a, s.acc_a, s.diffbias_a);
        collect(b, s.acc_b, s.diffbias_b);
        s.acc_ci_a = stats::confidence_interval(s.acc_a);
        s.acc_ci_b = stats::confidence_interval(s.acc_b);
        s.diffbias_ci_a = stats::confidence_interval(s.diffbias_a);
        s.diffbias_ci_b = stats::confidence_interval(s.diffbias_b);
        try {
            s.acc = stats::paired_t_test(s.acc_a, s.acc_b);
        } catch (const Error& e) {
            s.acc_error = e.what();
        }
        try {
            s.diffbias = stats::paired_t_test(s.diffbias_a, s.diffbias_b);
        } catch (const Error& e) {
            s.diffbias_error = e.what();
        }
        result.ttest = std::move(s);
    }

    result.csv = render_csv(result.methods);
    result.table = render_table(result.methods, result.ttest);

    json methods = json::array();
    for (const auto& m : result.methods) {
        json reps = json::array();
        std::vector<double> acc, db;
        for (const auto& r : m.replicates) {
            reps.push_back(to_json(r.overall));
            if (r.overall.acc_avg) acc.push_back(*r.overall.acc_avg);
            if (r.overall.diffbias_avg) db.push_back(*r.overall.diffbias_avg);
        }
        json entry{{"label", m.label}, {"spec", to_json(m.spec)}, {"pooled", to_json(m.pooled)}, {"replicates", reps}};
        if (acc.size() >= 2) entry["acc_avg_ci95"] = interval_json(stats::confidence_interval(acc));
        if (db.size() >= 2) entry["diffbias_avg_ci95"] = interval_json(stats::confidence_interval(db));
        methods.push_back(entry);
    }
    result.json = json{{"methods", methods}};
    if (result.ttest) {
        const auto& s = *result.ttest;
        result.json["ttest"] = {{"a", s.a},
                                {"b", s.b},
                                {"pairing", "per-replicate run aggregate"},
                                {"acc_avg", {{"a", s.acc_a}, {"b", s.acc_b}, {"ci95_a", interval_json(s.acc_ci_a)},
                                             {"ci95_b", interval_json(s.acc_ci_b)},
                                             {"test", ttest_json(s.acc, s.acc_error)}}},
                                {"diffbias_avg",
                                 {{"a", s.diffbias_a}, {"b", s.diffbias_b}, {"ci95_a", interval_json(s.diffbias_ci_a)},
                                  {"ci95_b", interval_json(s.diffbias_ci_b)},
                                  {"test", ttest_json(s.diffbias, s.diffbias_error)}}}};
    }
    return result;
}

ReportResult cmd_report(const fs::path& run_dir, const ReportOptions& options) {
    const fs::path transcripts_path = run_dir / "transcripts.jsonl";
    if (!fs::exists(transcripts_path) || !fs::exists(run_dir / "instances.jsonl")) {
        throw Error(ErrorCode::MissingTranscripts, run_dir.string() + " has no transcripts.jsonl/instances.jsonl");
    }
    auto result = build_run_report(read_instances_jsonl(run_dir / "instances.jsonl"),
                                   read_transcripts_jsonl(transcripts_path), options);
    write_file(run_dir / "report.json", result.json.dump(2) + "\n");
    write_file(run_dir / "report.csv", result.csv);
    write_file(run_dir / "report.txt", result.table);
    if (options.plots) write_plots(run_dir / "plots", result.methods);
    return result;
}

fs::path resolve_cache_file(const fs::path& path) {
    if (fs::is_regular_file(path)) return path;
    if (fs::exists(path / "responses.jsonl")) return path / "responses.jsonl";
    if (fs::exists(path / "manifest.json")) {
        auto manifest = json::parse(read_file(path / "manifest.json"), nullptr, false);
        if (!manifest.is_discarded() && manifest.contains("cache_file")) {
            return path / manifest.at("cache_file").get<std::string>();
        }
    }
    if (fs::exists(path / "cache" / "responses.jsonl")) return path / "cache" / "responses.jsonl";
    throw Error(ErrorCode::IoError, "no response cache found under " + path.string());
}

}  // namespace mpt
