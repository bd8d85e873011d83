#pragma once

#include <chrono>
#include <functional>
#include <memory>
#include <string>

#include "mpt/backends.hpp"

namespace mpt {

struct RetryPolicy {
    int attempts = 5;
    std::chrono::milliseconds base_delay{1000};
    std::chrono::milliseconds max_delay{30000};
    double jitter = 0.5;  // fraction of each delay drawn uniformly at random

    /// Delay before retry number `retry` (0-based), before jitter.
    std::chrono::milliseconds backoff(int retry) const;
};

struct HttpBackendConfig {
    std::string base_url;                       // scheme://host[:port]
    std::string path = "/v1/chat/completions";
    std::string model;
    std::string auth_env = "OPENAI_API_KEY";    // bearer token variable; unset means no header
    std::chrono::milliseconds timeout{120000};
    RetryPolicy retry;
    int max_in_flight = 8;
};

/// OpenAI-compatible chat-completions client.
///
/// Transport failures, timeouts, 429 and 5xx responses are retried with
/// jittered exponential backoff (honouring Retry-After when present); 401/403
/// fail immediately with AuthError. The seed sent on the wire is
/// decoding.seed + sample_index so self-consistency samples differ on seeded
/// servers.
class HttpChatBackend : public ChatBackend {
public:
    explicit HttpChatBackend(HttpBackendConfig config);

    ModelResponse complete(const Conversation& conversation) override;
    std::string id() const override;
    std::string model() const override { return config_.model; }

    /// Request body for `conversation`; exposed for wire-format tests.
    nlohmann::json request_body(const Conversation& conversation) const;

    /// Replaces the sleep used between retries (tests).
    void set_sleeper(std::function<void(std::chrono::milliseconds)> sleeper) { sleeper_ = std::move(sleeper); }

    int peak_in_flight() const { return limiter_->peak(); }

private:
    HttpBackendConfig config_;
    std::shared_ptr<InFlightLimiter> limiter_;
    std::function<void(std::chrono::milliseconds)> sleeper_;
};

/// Extracts choices[0].message.content; throws Error{MalformedResponse}.
std::string parse_chat_completion(const std::string& body);

}  // namespace mpt
