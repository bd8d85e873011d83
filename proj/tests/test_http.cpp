#include <gtest/gtest.h>

#include <httplib.h>

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <mutex>
#include <thread>

#include "mpt/http_backend.hpp"
#include "mpt/response_cache.hpp"

using namespace mpt;
using nlohmann::json;

namespace {

// Local OpenAI-style endpoint; no traffic leaves the machine.
class FakeServer {
public:
    using Handler = std::function<void(const httplib::Request&, httplib::Response&, int call)>;

    explicit FakeServer(Handler handler) : handler_(std::move(handler)) {
        server_.new_task_queue = [] { return new httplib::ThreadPool(16); };
        server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
            const int call = ++hits_;
            {
                std::lock_guard lock(mutex_);
                bodies_.push_back(req.body);
                auth_.push_back(req.get_header_value("Authorization"));
            }
            handler_(req, res, call);
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~FakeServer() { stop(); }

    void stop() {
        server_.stop();
        if (thread_.joinable()) thread_.join();
    }

    std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }
    int hits() const { return hits_.load(); }
    json body(std::size_t i) const {
        std::lock_guard lock(mutex_);
        return json::parse(bodies_.at(i));
    }
    std::string auth(std::size_t i) const {
        std::lock_guard lock(mutex_);
        return auth_.at(i);
    }

private:
    httplib::Server server_;
    Handler handler_;
    std::thread thread_;
    int port_ = 0;
    std::atomic<int> hits_{0};
    mutable std::mutex mutex_;
    std::vector<std::string> bodies_, auth_;
};

std::string completion(const std::string& content) {
    return json{{"choices", {{{"message", {{"role", "assistant"}, {"content", content}}}}}}}.dump();
}

HttpBackendConfig config_for(const FakeServer& s) {
    HttpBackendConfig c;
    c.base_url = s.url();
    c.model = "test-model";
    c.auth_env = "MPT_TEST_TOKEN";
    c.timeout = std::chrono::milliseconds(2000);
    c.retry.attempts = 3;
    return c;
}

Conversation convo(const std::string& user = "Which option?", int sample = 0) {
    Conversation c;
    c.messages = {{Role::System, "system"}, {Role::User, user}};
    c.decoding.seed = 40;
    c.decoding.max_tokens = 128;
    c.sample_index = sample;
    return c;
}

template <class F>
ErrorCode code_of(F&& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    return ErrorCode::IoError;
}

struct RecordedSleeps {
    std::mutex m;
    std::vector<std::chrono::milliseconds> delays;
    auto sleeper() {
        return [this](std::chrono::milliseconds d) {
            std::lock_guard lock(m);
            delays.push_back(d);
        };
    }
};

}  // namespace

TEST(Http, SendsOpenAiRequestAndParsesReply) {
    ::setenv("MPT_TEST_TOKEN", "secret-token", 1);
    FakeServer server([](const auto&, auto& res, int) { res.set_content(completion("a2"), "application/json"); });
    HttpChatBackend backend(config_for(server));
    const auto r = backend.complete(convo("Which option?", 3));
    EXPECT_EQ(r.text, "a2");
    EXPECT_FALSE(r.from_cache);
    const auto body = server.body(0);
    EXPECT_EQ(body.at("model"), "test-model");
    EXPECT_EQ(body.at("messages").size(), 2u);
    EXPECT_EQ(body.at("messages")[0].at("role"), "system");
    EXPECT_EQ(body.at("messages")[1].at("content"), "Which option?");
    EXPECT_EQ(body.at("max_tokens"), 128);
    EXPECT_EQ(body.at("seed"), 43);
    EXPECT_EQ(server.auth(0), "Bearer secret-token");
    ::unsetenv("MPT_TEST_TOKEN");
}

TEST(Http, AuthFailureIsNotRetried) {
    FakeServer server([](const auto&, auto& res, int) { res.status = 401; });
    HttpChatBackend backend(config_for(server));
    RecordedSleeps sleeps;
    backend.set_sleeper(sleeps.sleeper());
    EXPECT_EQ(code_of([&] { backend.complete(convo()); }), ErrorCode::AuthError);
    EXPECT_EQ(server.hits(), 1);
}

TEST(Http, RateLimitIsRetriedHonouringRetryAfter) {
    FakeServer server([](const auto&, auto& res, int call) {
        if (call <= 2) {
            res.status = 429;
            res.set_header("Retry-After", "7");
            return;
        }
        res.set_content(completion("a1"), "application/json");
    });
    auto cfg = config_for(server);
    cfg.retry.max_delay = std::chrono::milliseconds(60000);
    HttpChatBackend backend(cfg);
    RecordedSleeps sleeps;
    backend.set_sleeper(sleeps.sleeper());
    EXPECT_EQ(backend.complete(convo()).text, "a1");
    EXPECT_EQ(server.hits(), 3);
    ASSERT_EQ(sleeps.delays.size(), 2u);
    for (auto d : sleeps.delays) EXPECT_GE(d, std::chrono::milliseconds(7000));
}

TEST(Http, RateLimitExhaustsIntoRateLimited) {
    FakeServer server([](const auto&, auto& res, int) { res.status = 429; });
    HttpChatBackend backend(config_for(server));
    RecordedSleeps sleeps;
    backend.set_sleeper(sleeps.sleeper());
    EXPECT_EQ(code_of([&] { backend.complete(convo()); }), ErrorCode::RateLimited);
    EXPECT_EQ(server.hits(), 3);
}

TEST(Http, BackoffGrowsExponentiallyWithinCap) {
    RetryPolicy p;
    EXPECT_EQ(p.backoff(0), std::chrono::milliseconds(1000));
    EXPECT_EQ(p.backoff(1), std::chrono::milliseconds(2000));
    EXPECT_EQ(p.backoff(3), std::chrono::milliseconds(8000));
    EXPECT_EQ(p.backoff(10), std::chrono::milliseconds(30000));
    EXPECT_EQ(p.attempts, 5);
}

TEST(Http, ServerErrorsAreRetriedThenReported) {
    FakeServer server([](const auto&, auto& res, int call) {
        if (call == 1) {
            res.status = 503;
            return;
        }
        res.set_content(completion("a0"), "application/json");
    });
    HttpChatBackend backend(config_for(server));
    RecordedSleeps sleeps;
    backend.set_sleeper(sleeps.sleeper());
    EXPECT_EQ(backend.complete(convo()).text, "a0");

    FakeServer broken([](const auto&, auto& res, int) { res.status = 500; });
    HttpChatBackend failing(config_for(broken));
    failing.set_sleeper(sleeps.sleeper());
    EXPECT_EQ(code_of([&] { failing.complete(convo()); }), ErrorCode::ServerError);
    EXPECT_EQ(broken.hits(), 3);
}

TEST(Http, MalformedBodyIsReported) {
    FakeServer server([](const auto&, auto& res, int) { res.set_content("{\"choices\": []}", "application/json"); });
    HttpChatBackend backend(config_for(server));
    EXPECT_EQ(code_of([&] { backend.complete(convo()); }), ErrorCode::MalformedResponse);
    EXPECT_EQ(code_of([] { parse_chat_completion("not json"); }), ErrorCode::MalformedResponse);
}

TEST(Http, UnreachableEndpoint) {
    int port;
    {
        FakeServer probe([](const auto&, auto&, int) {});
        port = std::stoi(probe.url().substr(probe.url().rfind(':') + 1));
    }
    HttpBackendConfig cfg;
    cfg.base_url = "http://127.0.0.1:" + std::to_string(port);
    cfg.model = "m";
    cfg.retry.attempts = 2;
    cfg.timeout = std::chrono::milliseconds(500);
    HttpChatBackend backend(cfg);
    RecordedSleeps sleeps;
    backend.set_sleeper(sleeps.sleeper());
    EXPECT_EQ(code_of([&] { backend.complete(convo()); }), ErrorCode::Unreachable);
}

TEST(Http, SlowServerTimesOut) {
    FakeServer server([](const auto&, auto& res, int) {
        std::this_thread::sleep_for(std::chrono::milliseconds(600));
        res.set_content(completion("a0"), "application/json");
    });
    auto cfg = config_for(server);
    cfg.timeout = std::chrono::milliseconds(150);
    cfg.retry.attempts = 1;
    HttpChatBackend backend(cfg);
    EXPECT_EQ(code_of([&] { backend.complete(convo()); }), ErrorCode::Timeout);
}

TEST(Http, InFlightRequestsStayWithinLimit) {
    std::atomic<int> current{0}, peak{0};
    FakeServer server([&](const auto&, auto& res, int) {
        const int now = ++current;
        int seen = peak.load();
        while (now > seen && !peak.compare_exchange_weak(seen, now)) {
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
        --current;
        res.set_content(completion("a0"), "application/json");
    });
    auto cfg = config_for(server);
    cfg.max_in_flight = 2;
    HttpChatBackend backend(cfg);
    {
        std::vector<std::jthread> threads;
        for (int t = 0; t < 8; ++t) {
            threads.emplace_back([&, t] {
                for (int i = 0; i < 3; ++i) backend.complete(convo("q" + std::to_string(t * 10 + i)));
            });
        }
    }
    EXPECT_EQ(server.hits(), 24);
    EXPECT_LE(peak.load(), 2);
    EXPECT_LE(backend.peak_in_flight(), 2);
}

TEST(Http, CachedRunReplaysWithZeroNetworkCalls) {
    auto store = std::make_shared<ResponseStore>();
    std::string id, model;
    {
        FakeServer server([](const httplib::Request& req, auto& res, int) {
            const auto body = json::parse(req.body);
            res.set_content(completion("echo " + body.at("messages")[1].at("content").get<std::string>()),
                            "application/json");
        });
        auto http = std::make_shared<HttpChatBackend>(config_for(server));
        id = http->id();
        model = http->model();
        CachingBackend live(store, http);
        for (int i = 0; i < 5; ++i) live.complete(convo("q" + std::to_string(i)));
        EXPECT_EQ(server.hits(), 5);
        server.stop();
    }
    CachingBackend offline(store, nullptr, id, model);
    for (int i = 0; i < 5; ++i) {
        const auto r = offline.complete(convo("q" + std::to_string(i)));
        EXPECT_TRUE(r.from_cache);
        EXPECT_EQ(r.text, "echo q" + std::to_string(i));
    }
    EXPECT_EQ(offline.misses(), 0u);
}
