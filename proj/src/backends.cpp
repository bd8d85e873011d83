#include "mpt/backends.hpp"

#include <chrono>

#include "mpt/hash.hpp"

namespace mpt {

void validate_conversation(const Conversation& conversation) {
    const auto& messages = conversation.messages;
    if (messages.empty() || messages.front().role != Role::System) {
        throw Error(ErrorCode::InvalidConversation, "conversation must start with a system message");
    }
    if (messages.size() < 2) throw Error(ErrorCode::InvalidConversation, "conversation has no user turn");
    for (std::size_t i = 1; i < messages.size(); ++i) {
        const Role expected = (i % 2 == 1) ? Role::User : Role::Assistant;
        if (messages[i].role != expected) {
            throw Error(ErrorCode::InvalidConversation,
                        "message " + std::to_string(i) + " should have role " + std::string(to_string(expected)));
        }
    }
    if (messages.back().role != Role::User) {
        throw Error(ErrorCode::InvalidConversation, "conversation must end with a user message");
    }
    if (conversation.sample_index < 0) throw Error(ErrorCode::InvalidConversation, "negative sample index");
    if (conversation.decoding.max_tokens <= 0) throw Error(ErrorCode::InvalidConversation, "max_tokens <= 0");
}

std::string cache_key(const Conversation& conversation, std::string_view backend_id, std::string_view model) {
    nlohmann::json canonical{
        {"backend_id", backend_id},
        {"model", model},
        {"messages", to_json(conversation.messages)},
        {"temperature", conversation.decoding.temperature},
        {"max_tokens", conversation.decoding.max_tokens},
        {"seed", conversation.decoding.seed},
        {"sample_index", conversation.sample_index},
    };
    // nlohmann::json objects serialize with sorted keys, so dump() is canonical.
    return sha256_hex(canonical.dump());
}

ScriptedBackend::ScriptedBackend(std::vector<std::string> script, std::string id)
    : id_(std::move(id)), script_(std::move(script)) {}

ModelResponse ScriptedBackend::complete(const Conversation& conversation) {
    validate_conversation(conversation);
    std::lock_guard lock(mutex_);
    if (next_ >= script_.size()) {
        throw Error(ErrorCode::ScriptExhausted,
                    "script of length " + std::to_string(script_.size()) + " exhausted");
    }
    received_.push_back(conversation);
    return ModelResponse{script_[next_++], id_, 0, false};
}

std::size_t ScriptedBackend::calls() const {
    std::lock_guard lock(mutex_);
    return next_;
}

std::size_t ScriptedBackend::remaining() const {
    std::lock_guard lock(mutex_);
    return script_.size() - next_;
}

std::vector<Conversation> ScriptedBackend::received() const {
    std::lock_guard lock(mutex_);
    return received_;
}

RuleBackend::RuleBackend(std::vector<ScriptRule> rules, std::string id)
    : id_(std::move(id)), rules_(std::move(rules)) {}

ModelResponse RuleBackend::complete(const Conversation& conversation) {
    validate_conversation(conversation);
    const std::string& system = conversation.messages.front().text;
    const std::string& user = conversation.messages.back().text;
    for (const auto& rule : rules_) {
        if (system.find(rule.system_contains) != std::string::npos &&
            user.find(rule.user_contains) != std::string::npos) {
            return ModelResponse{rule.respond, id_, 0, false};
        }
    }
    throw Error(ErrorCode::NoRuleMatched, "no scripted rule matches the conversation");
}

ModelResponse FunctionBackend::complete(const Conversation& conversation) {
    validate_conversation(conversation);
    return ModelResponse{responder_(conversation), id_, 0, false};
}

ModelResponse CountingBackend::complete(const Conversation& conversation) {
    ++count_;
    return inner_->complete(conversation);
}

InFlightLimiter::InFlightLimiter(int limit) : limit_(limit), slots_(limit) {
    if (limit < 1) throw Error(ErrorCode::InvalidArgument, "in-flight limit must be >= 1");
}

InFlightLimiter::Permit::Permit(InFlightLimiter& owner) : owner_(owner) {
    owner_.slots_.acquire();
    const int now = ++owner_.current_;
    int peak = owner_.peak_.load();
    while (now > peak && !owner_.peak_.compare_exchange_weak(peak, now)) {
    }
}

InFlightLimiter::Permit::~Permit() {
    --owner_.current_;
    owner_.slots_.release();
}

ModelResponse ConcurrencyLimitedBackend::complete(const Conversation& conversation) {
    InFlightLimiter::Permit permit(*limiter_);
    return inner_->complete(conversation);
}

}  // namespace mpt
