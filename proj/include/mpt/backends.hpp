#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <semaphore>
#include <string>
#include <string_view>
#include <vector>

#include "mpt/core.hpp"

namespace mpt {

struct Conversation {
    std::vector<Message> messages;
    DecodingParams decoding;
    int sample_index = 0;
};

/// System first, then strictly alternating user/assistant turns ending on a user turn.
/// Throws Error{InvalidConversation}.
void validate_conversation(const Conversation& conversation);

struct ModelResponse {
    std::string text;
    std::string backend_id;
    std::int64_t latency_ms = 0;
    bool from_cache = false;
};

class ChatBackend {
public:
    virtual ~ChatBackend() = default;

    virtual ModelResponse complete(const Conversation& conversation) = 0;

    /// Identifies the backend in cache keys and run manifests.
    virtual std::string id() const = 0;
    virtual std::string model() const { return {}; }
};

/// SHA-256 over a canonical JSON encoding of every field that can change the
/// completion: backend id, model, messages, temperature, max_tokens, seed, sample index.
std::string cache_key(const Conversation& conversation, std::string_view backend_id, std::string_view model = {});

/// Returns its script entries one per call, strictly in call order.
class ScriptedBackend : public ChatBackend {
public:
    explicit ScriptedBackend(std::vector<std::string> script, std::string id = "scripted");

    ModelResponse complete(const Conversation& conversation) override;
    std::string id() const override { return id_; }

    std::size_t calls() const;
    std::size_t remaining() const;
    std::vector<Conversation> received() const;

private:
    std::string id_;
    std::vector<std::string> script_;
    mutable std::mutex mutex_;
    std::size_t next_ = 0;
    std::vector<Conversation> received_;
};

/// Answers from the first rule whose substrings all occur in the system prompt
/// and in the latest user message. An empty pattern matches anything.
struct ScriptRule {
    std::string system_contains;
    std::string user_contains;
    std::string respond;
};

class RuleBackend : public ChatBackend {
public:
    explicit RuleBackend(std::vector<ScriptRule> rules, std::string id = "rules");

    ModelResponse complete(const Conversation& conversation) override;
    std::string id() const override { return id_; }

private:
    std::string id_;
    std::vector<ScriptRule> rules_;
};

/// Responses computed by a callable; the most flexible scripted double for tests.
class FunctionBackend : public ChatBackend {
public:
    using Responder = std::function<std::string(const Conversation&)>;

    explicit FunctionBackend(Responder responder, std::string id = "function")
        : id_(std::move(id)), responder_(std::move(responder)) {}

    ModelResponse complete(const Conversation& conversation) override;
    std::string id() const override { return id_; }

private:
    std::string id_;
    Responder responder_;
};

/// Decorator counting completions that reach the wrapped backend.
class CountingBackend : public ChatBackend {
public:
    explicit CountingBackend(std::shared_ptr<ChatBackend> inner) : inner_(std::move(inner)) {}

    ModelResponse complete(const Conversation& conversation) override;
    std::string id() const override { return inner_->id(); }
    std::string model() const override { return inner_->model(); }

    std::size_t count() const { return count_.load(); }

private:
    std::shared_ptr<ChatBackend> inner_;
    std::atomic<std::size_t> count_{0};
};

/// Bounds concurrent in-flight operations and records the observed peak.
class InFlightLimiter {
public:
    explicit InFlightLimiter(int limit);

    class Permit {
    public:
        explicit Permit(InFlightLimiter& owner);
        ~Permit();
        Permit(const Permit&) = delete;
        Permit& operator=(const Permit&) = delete;

    private:
        InFlightLimiter& owner_;
    };

    int limit() const { return limit_; }
    int peak() const { return peak_.load(); }

private:
    int limit_;
    std::counting_semaphore<> slots_;
    std::atomic<int> current_{0};
    std::atomic<int> peak_{0};
};

class ConcurrencyLimitedBackend : public ChatBackend {
public:
    ConcurrencyLimitedBackend(std::shared_ptr<ChatBackend> inner, std::shared_ptr<InFlightLimiter> limiter)
        : inner_(std::move(inner)), limiter_(std::move(limiter)) {}

    ModelResponse complete(const Conversation& conversation) override;
    std::string id() const override { return inner_->id(); }
    std::string model() const override { return inner_->model(); }

private:
    std::shared_ptr<ChatBackend> inner_;
    std::shared_ptr<InFlightLimiter> limiter_;
};

}  // namespace mpt
