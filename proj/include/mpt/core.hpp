#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace mpt {

enum class ErrorCode {
    MissingRole,
    GoldRoleMismatch,
    EmptyGroup,
    EmptyDescriptor,
    EmptyHistory,
    InvalidArgument,
    InvalidConversation,
    ScriptExhausted,
    NoRuleMatched,
    AuthError,
    RateLimited,
    Timeout,
    MalformedResponse,
    Unreachable,
    ServerError,
    CacheMiss,
    SchemaError,
    RoleDerivationError,
    CountMismatch,
    InsufficientCategory,
    EmptySplit,
    TooFewSamples,
    LengthMismatch,
    DegenerateVariance,
    ConfigError,
    MissingTranscripts,
    IncompatibleRuns,
    IoError,
};

std::string_view to_string(ErrorCode code);

/// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

enum class AnswerRole { Biased, CounterBiased, Unknown };
enum class Dataset { BBQ, StereoSetWord, StereoSetSentence };
enum class Condition { Ambiguous, Disambiguated };

std::string_view to_string(AnswerRole role);
std::string_view to_string(Dataset dataset);
std::string_view to_string(Condition condition);
AnswerRole answer_role_from_string(std::string_view text);
Dataset dataset_from_string(std::string_view text);
Condition condition_from_string(std::string_view text);

inline constexpr std::size_t kOptionCount = 3;

/// Predicted or gold option index; std::nullopt encodes an Invalid answer.
using OptionLabel = std::optional<std::size_t>;

std::string label_name(OptionLabel label);  // "a0".."a2" or "invalid"

struct AnswerOption {
    std::string text;
    AnswerRole role = AnswerRole::Unknown;

    bool operator==(const AnswerOption&) const = default;
};

struct BiasInstance {
    std::string id;
    Dataset dataset = Dataset::BBQ;
    std::string category;
    Condition condition = Condition::Ambiguous;
    std::string context;
    std::string question;
    std::array<AnswerOption, kOptionCount> options;
    std::size_t gold = 0;
    std::string target_group;
    std::string counter_target_group;

    /// Index of the option carrying `role`. Valid instances always have one.
    std::size_t index_of(AnswerRole role) const;
    AnswerRole role_of(std::size_t option) const { return options.at(option).role; }

    bool operator==(const BiasInstance&) const = default;
};

/// Checks every BiasInstance invariant and returns the instance unchanged.
/// Throws Error{MissingRole | GoldRoleMismatch | EmptyGroup | InvalidArgument}.
BiasInstance validate_instance(BiasInstance candidate);

enum class PersonaKind { Target, CounterTarget, Neutral, None };

std::string_view to_string(PersonaKind kind);
PersonaKind persona_kind_from_string(std::string_view text);

inline constexpr std::string_view kNeutralDescriptor = "neutral general public";

struct Persona {
    PersonaKind kind = PersonaKind::None;
    std::string descriptor;

    static Persona none() { return {}; }
    static Persona neutral() { return {PersonaKind::Neutral, std::string(kNeutralDescriptor)}; }

    bool operator==(const Persona&) const = default;
};

enum class Role { System, User, Assistant };

std::string_view to_string(Role role);
Role role_from_string(std::string_view text);

struct Message {
    Role role = Role::User;
    std::string text;

    bool operator==(const Message&) const = default;
};

struct DecodingParams {
    double temperature = 0.0;
    int max_tokens = 512;
    std::int64_t seed = 0;

    bool operator==(const DecodingParams&) const = default;
};

inline constexpr int kOpenModelMaxTokens = 512;
inline constexpr int kHostedModelMaxTokens = 128;

struct TurnRecord {
    Persona persona;
    std::optional<int> agent;  // MAD agent number (1-based)
    int round = 0;
    int sample_index = 0;
    std::vector<Message> prompt_messages;
    std::string raw_response;
    OptionLabel extracted;

    bool operator==(const TurnRecord&) const = default;
};

enum class Method { Direct, SelfConsistency, RePrompting, MAD, MPT, MPTSelfConsistency };
enum class Variant { Standard, Debias, Persona, NA };

std::string_view to_string(Method method);
std::string_view to_string(Variant variant);
Method method_from_string(std::string_view text);
Variant variant_from_string(std::string_view text);

struct MethodSpec {
    Method method = Method::Direct;
    Variant variant = Variant::Standard;
    int review_rounds = 2;  // MPT R: review rounds after the initial generation
    bool include_neutral = true;
    int samples = 1;        // SC k
    int agents = 3;
    int debate_rounds = 3;
    DecodingParams decoding;

    /// Stable identifier used in transcripts and reports, e.g. "mpt-r2".
    std::string label() const;

    bool operator==(const MethodSpec&) const = default;
};

/// Throws Error{InvalidArgument} when the spec violates its invariants.
void validate_method_spec(const MethodSpec& spec);

struct Transcript {
    std::string instance_id;
    MethodSpec method;
    int replicate = 0;
    std::vector<TurnRecord> turns;
    OptionLabel final_answer;
    int call_count = 0;

    bool operator==(const Transcript&) const = default;
};

// JSON serialization. Field names are stable; instance records carry a schema version.
inline constexpr int kInstanceSchemaVersion = 1;

nlohmann::json to_json(const BiasInstance& instance);
BiasInstance instance_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Persona& persona);
Persona persona_from_json(const nlohmann::json& j);
nlohmann::json to_json(const MethodSpec& spec);
MethodSpec method_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const DecodingParams& params);
DecodingParams decoding_from_json(const nlohmann::json& j, const DecodingParams& defaults = {});
nlohmann::json to_json(const TurnRecord& turn);
TurnRecord turn_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Transcript& transcript);
Transcript transcript_from_json(const nlohmann::json& j);
nlohmann::json to_json(const std::vector<Message>& messages);
std::vector<Message> messages_from_json(const nlohmann::json& j);

}  // namespace mpt
