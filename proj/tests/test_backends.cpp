#include <gtest/gtest.h>

#include <unistd.h>

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <thread>

#include "mpt/backends.hpp"
#include "mpt/response_cache.hpp"

using namespace mpt;
namespace fs = std::filesystem;

namespace {

Conversation convo(std::string user = "Which option?", int sample = 0, double temperature = 0.0) {
    Conversation c;
    c.messages = {{Role::System, "system"}, {Role::User, std::move(user)}};
    c.decoding.temperature = temperature;
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

fs::path temp_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("mpt_backends_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST(Scripted, EchoesScriptInOrder) {
    ScriptedBackend b({"a2", "a0"});
    EXPECT_EQ(b.complete(convo()).text, "a2");
    EXPECT_EQ(b.complete(convo()).text, "a0");
    EXPECT_EQ(b.calls(), 2u);
    EXPECT_EQ(b.remaining(), 0u);
}

TEST(Scripted, ExhaustionIsAnError) {
    ScriptedBackend b({"a2"});
    b.complete(convo());
    EXPECT_EQ(code_of([&] { b.complete(convo()); }), ErrorCode::ScriptExhausted);
}

TEST(Rules, FirstMatchingRuleAnswers) {
    RuleBackend b({{"", "grandson", "a1"}, {"", "", "a2"}});
    EXPECT_EQ(b.complete(convo("about the grandson")).text, "a1");
    EXPECT_EQ(b.complete(convo("other")).text, "a2");
    RuleBackend none({{"nope", "", "x"}});
    EXPECT_EQ(code_of([&] { none.complete(convo()); }), ErrorCode::NoRuleMatched);
}

TEST(Conversation, ShapeIsValidated) {
    Conversation c;
    EXPECT_EQ(code_of([&] { validate_conversation(c); }), ErrorCode::InvalidConversation);
    c.messages = {{Role::User, "no system"}};
    EXPECT_EQ(code_of([&] { validate_conversation(c); }), ErrorCode::InvalidConversation);
    c.messages = {{Role::System, "s"}, {Role::User, "u"}, {Role::User, "u"}};
    EXPECT_EQ(code_of([&] { validate_conversation(c); }), ErrorCode::InvalidConversation);
    c.messages = {{Role::System, "s"}, {Role::User, "u"}, {Role::Assistant, "a"}};
    EXPECT_EQ(code_of([&] { validate_conversation(c); }), ErrorCode::InvalidConversation);
    c.messages.push_back({Role::User, "u2"});
    EXPECT_NO_THROW(validate_conversation(c));
}

TEST(CacheKey, DeterministicAndFieldSensitive) {
    const auto base = cache_key(convo(), "b", "m");
    EXPECT_EQ(base, cache_key(convo(), "b", "m"));
    EXPECT_EQ(base.size(), 64u);
    EXPECT_NE(base, cache_key(convo("Which option?", 1), "b", "m"));
    EXPECT_NE(base, cache_key(convo("Which option?", 0, 0.7), "b", "m"));
    EXPECT_NE(base, cache_key(convo("Other?"), "b", "m"));
    EXPECT_NE(base, cache_key(convo(), "other-backend", "m"));
    EXPECT_NE(base, cache_key(convo(), "b", "other-model"));
    auto c = convo();
    c.decoding.max_tokens = 128;
    EXPECT_NE(base, cache_key(c, "b", "m"));
    c = convo();
    c.decoding.seed = 9;
    EXPECT_NE(base, cache_key(c, "b", "m"));
    c = convo();
    c.messages[0].role = Role::System;
    c.messages[0].text = "system ";
    EXPECT_NE(base, cache_key(c, "b", "m"));
}

TEST(Caching, SecondIdenticalCallIsServedFromCache) {
    auto inner = std::make_shared<CountingBackend>(std::make_shared<ScriptedBackend>(std::vector<std::string>{"a1"}));
    auto store = std::make_shared<ResponseStore>();
    CachingBackend cache(store, inner);
    const auto first = cache.complete(convo());
    const auto second = cache.complete(convo());
    EXPECT_FALSE(first.from_cache);
    EXPECT_TRUE(second.from_cache);
    EXPECT_EQ(first.text, second.text);
    EXPECT_EQ(inner->count(), 1u);
    EXPECT_EQ(cache.hits(), 1u);
    EXPECT_EQ(cache.misses(), 1u);
}

TEST(Caching, PersistsAcrossStoresAndReplaysOffline) {
    const auto dir = temp_dir("persist");
    const auto file = dir / "responses.jsonl";
    {
        auto store = std::make_shared<ResponseStore>(file);
        CachingBackend cache(store, std::make_shared<ScriptedBackend>(std::vector<std::string>{"a0", "a2"}), "x", "m");
        cache.complete(convo("q1"));
        cache.complete(convo("q2"));
    }
    auto store = std::make_shared<ResponseStore>(file);
    EXPECT_EQ(store->size(), 2u);
    CachingBackend replay(store, nullptr, "x", "m");
    EXPECT_EQ(replay.complete(convo("q2")).text, "a2");
    EXPECT_EQ(replay.complete(convo("q1")).text, "a0");
    EXPECT_EQ(code_of([&] { replay.complete(convo("q3")); }), ErrorCode::CacheMiss);
    fs::remove_all(dir);
}

TEST(Caching, MalformedLinesAreSkippedAndCompacted) {
    const auto dir = temp_dir("malformed");
    const auto file = dir / "responses.jsonl";
    {
        auto store = std::make_shared<ResponseStore>(file);
        CachingBackend cache(store, std::make_shared<ScriptedBackend>(std::vector<std::string>{"a0"}), "x", "m");
        cache.complete(convo("q1"));
    }
    {
        std::ofstream out(file, std::ios::app);
        out << "{not json\n";
    }
    ResponseStore reloaded(file);
    EXPECT_EQ(reloaded.size(), 1u);
    EXPECT_EQ(reloaded.skipped_lines(), 1u);
    const auto before = inspect_cache_file(file);
    EXPECT_EQ(before.malformed_lines, 1u);
    const auto after = compact_cache_file(file);
    EXPECT_EQ(after.malformed_lines, 0u);
    EXPECT_EQ(after.unique_keys, 1u);
    fs::remove_all(dir);
}

TEST(Caching, ConcurrentMissesOnOneKeyShareACall) {
    std::atomic<int> calls{0};
    auto slow = std::make_shared<FunctionBackend>([&](const Conversation&) {
        ++calls;
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
        return std::string("a2");
    });
    CachingBackend cache(std::make_shared<ResponseStore>(), slow);
    std::vector<std::jthread> threads;
    for (int i = 0; i < 8; ++i) threads.emplace_back([&] { EXPECT_EQ(cache.complete(convo()).text, "a2"); });
    threads.clear();
    EXPECT_EQ(calls.load(), 1);
}

TEST(Concurrency, InFlightNeverExceedsTheLimit) {
    std::atomic<int> current{0}, peak{0};
    auto fake = std::make_shared<FunctionBackend>([&](const Conversation&) {
        const int now = ++current;
        int seen = peak.load();
        while (now > seen && !peak.compare_exchange_weak(seen, now)) {
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
        --current;
        return std::string("a0");
    });
    auto limiter = std::make_shared<InFlightLimiter>(3);
    ConcurrencyLimitedBackend limited(fake, limiter);
    {
        std::vector<std::jthread> threads;
        for (int t = 0; t < 12; ++t) {
            threads.emplace_back([&] {
                for (int i = 0; i < 10; ++i) limited.complete(convo());
            });
        }
    }
    EXPECT_LE(peak.load(), 3);
    EXPECT_LE(limiter->peak(), 3);
    EXPECT_GE(peak.load(), 2);
}
