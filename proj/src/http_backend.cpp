#include "mpt/http_backend.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <random>
#include <thread>

#include <httplib.h>

namespace mpt {

using nlohmann::json;

std::chrono::milliseconds RetryPolicy::backoff(int retry) const {
    const double scaled = static_cast<double>(base_delay.count()) * std::pow(2.0, retry);
    return std::chrono::milliseconds(
        static_cast<std::int64_t>(std::min(scaled, static_cast<double>(max_delay.count()))));
}

HttpChatBackend::HttpChatBackend(HttpBackendConfig config)
    : config_(std::move(config)),
      limiter_(std::make_shared<InFlightLimiter>(config_.max_in_flight)),
      sleeper_([](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }) {
    if (config_.base_url.empty()) throw Error(ErrorCode::ConfigError, "HTTP backend needs a base URL");
    if (config_.model.empty()) throw Error(ErrorCode::ConfigError, "HTTP backend needs a model name");
    if (config_.retry.attempts < 1) throw Error(ErrorCode::ConfigError, "retry attempts must be >= 1");
}

std::string HttpChatBackend::id() const { return "openai-compatible:" + config_.base_url + config_.path; }

json HttpChatBackend::request_body(const Conversation& conversation) const {
    return json{
        {"model", config_.model},
        {"messages", to_json(conversation.messages)},
        {"temperature", conversation.decoding.temperature},
        {"max_tokens", conversation.decoding.max_tokens},
        {"seed", conversation.decoding.seed + conversation.sample_index},
    };
}

std::string parse_chat_completion(const std::string& body) {
    auto j = json::parse(body, nullptr, false);
    if (j.is_discarded()) throw Error(ErrorCode::MalformedResponse, "response body is not JSON");
    try {
        const auto& content = j.at("choices").at(0).at("message").at("content");
        if (!content.is_string()) throw Error(ErrorCode::MalformedResponse, "message content is not a string");
        return content.get<std::string>();
    } catch (const json::exception& e) {
        throw Error(ErrorCode::MalformedResponse, std::string("unexpected response shape: ") + e.what());
    }
}

ModelResponse HttpChatBackend::complete(const Conversation& conversation) {
    validate_conversation(conversation);
    const std::string body = request_body(conversation).dump();

    httplib::Headers headers;
    if (const char* token = std::getenv(config_.auth_env.c_str()); token && *token) {
        headers.emplace("Authorization", std::string("Bearer ") + token);
    }

    thread_local std::mt19937_64 jitter_rng{std::random_device{}()};
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    Error last(ErrorCode::Unreachable, "no attempt made");
    for (int attempt = 0; attempt < config_.retry.attempts; ++attempt) {
        std::chrono::milliseconds server_hint{0};
        const auto started = std::chrono::steady_clock::now();
        {
            InFlightLimiter::Permit permit(*limiter_);
            httplib::Client client(config_.base_url);
            const auto seconds = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout);
            const auto micros = std::chrono::duration_cast<std::chrono::microseconds>(config_.timeout - seconds);
            client.set_connection_timeout(seconds.count(), micros.count());
            client.set_read_timeout(seconds.count(), micros.count());
            client.set_write_timeout(seconds.count(), micros.count());

            auto result = client.Post(config_.path, headers, body, "application/json");
            if (!result) {
                const auto err = result.error();
                last = (err == httplib::Error::Read || err == httplib::Error::Write ||
                        err == httplib::Error::ConnectionTimeout)
                           ? Error(ErrorCode::Timeout, "request timed out: " + httplib::to_string(err))
                           : Error(ErrorCode::Unreachable, "transport failure: " + httplib::to_string(err));
            } else if (result->status == 401 || result->status == 403) {
                throw Error(ErrorCode::AuthError, "endpoint rejected credentials (HTTP " +
                                                      std::to_string(result->status) + ")");
            } else if (result->status == 429) {
                last = Error(ErrorCode::RateLimited, "HTTP 429 after " + std::to_string(attempt + 1) + " attempts");
                if (result->has_header("Retry-After")) {
                    try {
                        server_hint = std::chrono::seconds(std::stoi(result->get_header_value("Retry-After")));
                    } catch (const std::exception&) {
                    }
                }
            } else if (result->status >= 500) {
                last = Error(ErrorCode::ServerError, "HTTP " + std::to_string(result->status));
            } else if (result->status != 200) {
                throw Error(ErrorCode::ServerError,
                            "HTTP " + std::to_string(result->status) + ": " + result->body.substr(0, 200));
            } else {
                const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
                    std::chrono::steady_clock::now() - started);
                return ModelResponse{parse_chat_completion(result->body), id(), elapsed.count(), false};
            }
        }
        if (attempt + 1 < config_.retry.attempts) {
            auto delay = config_.retry.backoff(attempt);
            delay += std::chrono::milliseconds(
                static_cast<std::int64_t>(static_cast<double>(delay.count()) * config_.retry.jitter * unit(jitter_rng)));
            sleeper_(std::min(std::max(delay, server_hint), config_.retry.max_delay));
        }
    }
    throw last;
}

}  // namespace mpt
