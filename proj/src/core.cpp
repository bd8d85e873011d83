#include "mpt/core.hpp"

#include <algorithm>

namespace mpt {

using nlohmann::json;

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::MissingRole: return "MissingRole";
        case ErrorCode::GoldRoleMismatch: return "GoldRoleMismatch";
        case ErrorCode::EmptyGroup: return "EmptyGroup";
        case ErrorCode::EmptyDescriptor: return "EmptyDescriptor";
        case ErrorCode::EmptyHistory: return "EmptyHistory";
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::InvalidConversation: return "InvalidConversation";
        case ErrorCode::ScriptExhausted: return "ScriptExhausted";
        case ErrorCode::NoRuleMatched: return "NoRuleMatched";
        case ErrorCode::AuthError: return "AuthError";
        case ErrorCode::RateLimited: return "RateLimited";
        case ErrorCode::Timeout: return "Timeout";
        case ErrorCode::MalformedResponse: return "MalformedResponse";
        case ErrorCode::Unreachable: return "Unreachable";
        case ErrorCode::ServerError: return "ServerError";
        case ErrorCode::CacheMiss: return "CacheMiss";
        case ErrorCode::SchemaError: return "SchemaError";
        case ErrorCode::RoleDerivationError: return "RoleDerivationError";
        case ErrorCode::CountMismatch: return "CountMismatch";
        case ErrorCode::InsufficientCategory: return "InsufficientCategory";
        case ErrorCode::EmptySplit: return "EmptySplit";
        case ErrorCode::TooFewSamples: return "TooFewSamples";
        case ErrorCode::LengthMismatch: return "LengthMismatch";
        case ErrorCode::DegenerateVariance: return "DegenerateVariance";
        case ErrorCode::ConfigError: return "ConfigError";
        case ErrorCode::MissingTranscripts: return "MissingTranscripts";
        case ErrorCode::IncompatibleRuns: return "IncompatibleRuns";
        case ErrorCode::IoError: return "IoError";
    }
    return "Unknown";
}

namespace {

template <typename Enum, std::size_t N>
Enum parse_enum(std::string_view text, const std::array<std::pair<std::string_view, Enum>, N>& table,
                std::string_view what) {
    for (const auto& [name, value] : table) {
        if (name == text) return value;
    }
    throw Error(ErrorCode::SchemaError, "unknown " + std::string(what) + " '" + std::string(text) + "'");
}

constexpr std::array<std::pair<std::string_view, AnswerRole>, 3> kRoles{{
    {"biased", AnswerRole::Biased},
    {"counter_biased", AnswerRole::CounterBiased},
    {"unknown", AnswerRole::Unknown},
}};

constexpr std::array<std::pair<std::string_view, Dataset>, 3> kDatasets{{
    {"bbq", Dataset::BBQ},
    {"stereoset_word", Dataset::StereoSetWord},
    {"stereoset_sentence", Dataset::StereoSetSentence},
}};

constexpr std::array<std::pair<std::string_view, Condition>, 2> kConditions{{
    {"ambiguous", Condition::Ambiguous},
    {"disambiguated", Condition::Disambiguated},
}};

constexpr std::array<std::pair<std::string_view, PersonaKind>, 4> kPersonaKinds{{
    {"target", PersonaKind::Target},
    {"counter_target", PersonaKind::CounterTarget},
    {"neutral", PersonaKind::Neutral},
    {"none", PersonaKind::None},
}};

constexpr std::array<std::pair<std::string_view, Role>, 3> kMessageRoles{{
    {"system", Role::System},
    {"user", Role::User},
    {"assistant", Role::Assistant},
}};

constexpr std::array<std::pair<std::string_view, Method>, 6> kMethods{{
    {"direct", Method::Direct},
    {"self_consistency", Method::SelfConsistency},
    {"reprompting", Method::RePrompting},
    {"mad", Method::MAD},
    {"mpt", Method::MPT},
    {"mpt_self_consistency", Method::MPTSelfConsistency},
}};

constexpr std::array<std::pair<std::string_view, Variant>, 4> kVariants{{
    {"standard", Variant::Standard},
    {"debias", Variant::Debias},
    {"persona", Variant::Persona},
    {"na", Variant::NA},
}};

template <typename Enum, std::size_t N>
std::string_view enum_name(Enum value, const std::array<std::pair<std::string_view, Enum>, N>& table) {
    for (const auto& [name, v] : table) {
        if (v == value) return name;
    }
    return "?";
}

const json& require(const json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) {
        throw Error(ErrorCode::SchemaError, std::string("missing field '") + key + "'");
    }
    return *it;
}

}  // namespace

std::string_view to_string(AnswerRole role) { return enum_name(role, kRoles); }
std::string_view to_string(Dataset dataset) { return enum_name(dataset, kDatasets); }
std::string_view to_string(Condition condition) { return enum_name(condition, kConditions); }
std::string_view to_string(PersonaKind kind) { return enum_name(kind, kPersonaKinds); }
std::string_view to_string(Role role) { return enum_name(role, kMessageRoles); }
std::string_view to_string(Method method) { return enum_name(method, kMethods); }
std::string_view to_string(Variant variant) { return enum_name(variant, kVariants); }

AnswerRole answer_role_from_string(std::string_view text) { return parse_enum(text, kRoles, "answer role"); }
Dataset dataset_from_string(std::string_view text) { return parse_enum(text, kDatasets, "dataset"); }
Condition condition_from_string(std::string_view text) { return parse_enum(text, kConditions, "condition"); }
PersonaKind persona_kind_from_string(std::string_view text) {
    return parse_enum(text, kPersonaKinds, "persona kind");
}
Role role_from_string(std::string_view text) { return parse_enum(text, kMessageRoles, "message role"); }
Method method_from_string(std::string_view text) { return parse_enum(text, kMethods, "method"); }
Variant variant_from_string(std::string_view text) { return parse_enum(text, kVariants, "variant"); }

std::string label_name(OptionLabel label) {
    if (!label) return "invalid";
    return "a" + std::to_string(*label);
}

std::size_t BiasInstance::index_of(AnswerRole role) const {
    for (std::size_t i = 0; i < options.size(); ++i) {
        if (options[i].role == role) return i;
    }
    throw Error(ErrorCode::MissingRole, "instance '" + id + "' has no " + std::string(to_string(role)) + " option");
}

BiasInstance validate_instance(BiasInstance candidate) {
    for (AnswerRole role : {AnswerRole::Biased, AnswerRole::CounterBiased, AnswerRole::Unknown}) {
        auto n = std::count_if(candidate.options.begin(), candidate.options.end(),
                               [role](const AnswerOption& o) { return o.role == role; });
        if (n != 1) {
            throw Error(ErrorCode::MissingRole, "instance '" + candidate.id + "': role " +
                                                    std::string(to_string(role)) + " appears " +
                                                    std::to_string(n) + " times");
        }
    }
    if (candidate.gold >= kOptionCount) {
        throw Error(ErrorCode::InvalidArgument, "instance '" + candidate.id + "': gold index out of range");
    }
    const AnswerRole gold_role = candidate.options[candidate.gold].role;
    if (candidate.condition == Condition::Ambiguous && gold_role != AnswerRole::Unknown) {
        throw Error(ErrorCode::GoldRoleMismatch,
                    "instance '" + candidate.id + "': ambiguous item must have the Unknown option as gold");
    }
    if (candidate.condition == Condition::Disambiguated && gold_role == AnswerRole::Unknown) {
        throw Error(ErrorCode::GoldRoleMismatch,
                    "instance '" + candidate.id + "': disambiguated item cannot have the Unknown option as gold");
    }
    if (candidate.target_group.empty() || candidate.counter_target_group.empty()) {
        throw Error(ErrorCode::EmptyGroup, "instance '" + candidate.id + "': group names must be non-empty");
    }
    if (candidate.target_group == candidate.counter_target_group) {
        throw Error(ErrorCode::EmptyGroup,
                    "instance '" + candidate.id + "': target and counter-target groups must differ");
    }
    return candidate;
}

std::string MethodSpec::label() const {
    const std::string neutral = include_neutral ? "" : "-noneutral";
    switch (method) {
        case Method::Direct: return "direct-" + std::string(to_string(variant));
        case Method::SelfConsistency:
            return "sc-" + std::string(to_string(variant)) + "-k" + std::to_string(samples);
        case Method::RePrompting: return "reprompt-" + std::string(to_string(variant));
        case Method::MAD: return "mad-a" + std::to_string(agents) + "-r" + std::to_string(debate_rounds);
        case Method::MPT: return "mpt-r" + std::to_string(review_rounds) + neutral;
        case Method::MPTSelfConsistency:
            return "mpt-sc-r" + std::to_string(review_rounds) + "-k" + std::to_string(samples) + neutral;
    }
    return "unknown";
}

void validate_method_spec(const MethodSpec& spec) {
    auto fail = [&](const std::string& why) {
        throw Error(ErrorCode::InvalidArgument, spec.label() + ": " + why);
    };
    if (spec.samples < 1) fail("k must be >= 1");
    if (spec.review_rounds < 0) fail("R must be >= 0");
    if (spec.decoding.max_tokens <= 0) fail("max_tokens must be positive");
    if (spec.decoding.temperature < 0.0) fail("temperature must be non-negative");
    if (spec.method == Method::MAD && (spec.agents < 2 || spec.debate_rounds < 1)) {
        fail("MAD needs at least 2 agents and 1 round");
    }
    switch (spec.method) {
        case Method::Direct:
        case Method::SelfConsistency:
            if (spec.variant == Variant::NA) fail("direct prompting needs a variant");
            break;
        case Method::RePrompting:
            if (spec.variant != Variant::Debias && spec.variant != Variant::Persona) {
                fail("re-prompting variant must be debias or persona");
            }
            break;
        default: break;
    }
}

json to_json(const BiasInstance& instance) {
    json options = json::array();
    for (const auto& o : instance.options) {
        options.push_back({{"text", o.text}, {"role", to_string(o.role)}});
    }
    return json{
        {"schema", kInstanceSchemaVersion},
        {"id", instance.id},
        {"dataset", to_string(instance.dataset)},
        {"category", instance.category},
        {"condition", to_string(instance.condition)},
        {"context", instance.context},
        {"question", instance.question},
        {"options", options},
        {"gold", instance.gold},
        {"target_group", instance.target_group},
        {"counter_target_group", instance.counter_target_group},
    };
}

BiasInstance instance_from_json(const json& j) {
    try {
        if (j.contains("schema") && j.at("schema").get<int>() != kInstanceSchemaVersion) {
            throw Error(ErrorCode::SchemaError, "unsupported instance schema version");
        }
        BiasInstance out;
        out.id = require(j, "id").get<std::string>();
        out.dataset = dataset_from_string(require(j, "dataset").get<std::string>());
        out.category = require(j, "category").get<std::string>();
        out.condition = condition_from_string(require(j, "condition").get<std::string>());
        out.context = require(j, "context").get<std::string>();
        out.question = require(j, "question").get<std::string>();
        const auto& options = require(j, "options");
        if (!options.is_array() || options.size() != kOptionCount) {
            throw Error(ErrorCode::SchemaError, "instance '" + out.id + "' must have exactly 3 options");
        }
        for (std::size_t i = 0; i < kOptionCount; ++i) {
            out.options[i].text = require(options[i], "text").get<std::string>();
            out.options[i].role = answer_role_from_string(require(options[i], "role").get<std::string>());
        }
        out.gold = require(j, "gold").get<std::size_t>();
        out.target_group = require(j, "target_group").get<std::string>();
        out.counter_target_group = require(j, "counter_target_group").get<std::string>();
        return out;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::SchemaError, e.what());
    }
}

json to_json(const Persona& persona) {
    return json{{"kind", to_string(persona.kind)}, {"descriptor", persona.descriptor}};
}

Persona persona_from_json(const json& j) {
    return Persona{persona_kind_from_string(require(j, "kind").get<std::string>()),
                   require(j, "descriptor").get<std::string>()};
}

json to_json(const DecodingParams& params) {
    return json{{"temperature", params.temperature}, {"max_tokens", params.max_tokens}, {"seed", params.seed}};
}

DecodingParams decoding_from_json(const json& j, const DecodingParams& defaults) {
    DecodingParams out = defaults;
    out.temperature = j.value("temperature", defaults.temperature);
    out.max_tokens = j.value("max_tokens", defaults.max_tokens);
    out.seed = j.value("seed", defaults.seed);
    return out;
}

json to_json(const MethodSpec& spec) {
    return json{
        {"method", to_string(spec.method)},
        {"variant", to_string(spec.variant)},
        {"review_rounds", spec.review_rounds},
        {"include_neutral", spec.include_neutral},
        {"samples", spec.samples},
        {"agents", spec.agents},
        {"debate_rounds", spec.debate_rounds},
        {"decoding", to_json(spec.decoding)},
    };
}

MethodSpec method_spec_from_json(const json& j) {
    MethodSpec out;
    out.method = method_from_string(require(j, "method").get<std::string>());
    switch (out.method) {
        case Method::RePrompting: out.variant = Variant::Debias; break;
        case Method::MAD:
        case Method::MPT:
        case Method::MPTSelfConsistency: out.variant = Variant::NA; break;
        default: break;
    }
    if (out.method == Method::SelfConsistency || out.method == Method::MPTSelfConsistency) {
        out.samples = 5;
        out.decoding.temperature = 0.7;  // stochastic decoding for sampled methods
    }
    if (j.contains("variant")) out.variant = variant_from_string(j.at("variant").get<std::string>());
    out.review_rounds = j.value("review_rounds", out.review_rounds);
    out.include_neutral = j.value("include_neutral", out.include_neutral);
    out.samples = j.value("samples", out.samples);
    out.agents = j.value("agents", out.agents);
    out.debate_rounds = j.value("debate_rounds", out.debate_rounds);
    if (j.contains("decoding")) out.decoding = decoding_from_json(j.at("decoding"), out.decoding);
    return out;
}

json to_json(const std::vector<Message>& messages) {
    json out = json::array();
    for (const auto& m : messages) out.push_back({{"role", to_string(m.role)}, {"content", m.text}});
    return out;
}

std::vector<Message> messages_from_json(const json& j) {
    std::vector<Message> out;
    for (const auto& m : j) {
        out.push_back({role_from_string(require(m, "role").get<std::string>()),
                       require(m, "content").get<std::string>()});
    }
    return out;
}

namespace {

json label_to_json(OptionLabel label) { return label ? json(*label) : json(nullptr); }

OptionLabel label_from_json(const json& j) {
    if (j.is_null()) return std::nullopt;
    return j.get<std::size_t>();
}

}  // namespace

json to_json(const TurnRecord& turn) {
    json out{
        {"persona", to_json(turn.persona)},
        {"round", turn.round},
        {"sample_index", turn.sample_index},
        {"prompt_messages", to_json(turn.prompt_messages)},
        {"raw_response", turn.raw_response},
        {"extracted", label_to_json(turn.extracted)},
    };
    out["agent"] = turn.agent ? json(*turn.agent) : json(nullptr);
    return out;
}

TurnRecord turn_from_json(const json& j) {
    TurnRecord out;
    out.persona = persona_from_json(require(j, "persona"));
    if (j.contains("agent") && !j.at("agent").is_null()) out.agent = j.at("agent").get<int>();
    out.round = require(j, "round").get<int>();
    out.sample_index = j.value("sample_index", 0);
    out.prompt_messages = messages_from_json(require(j, "prompt_messages"));
    out.raw_response = require(j, "raw_response").get<std::string>();
    out.extracted = label_from_json(j.at("extracted"));
    return out;
}

json to_json(const Transcript& transcript) {
    json turns = json::array();
    for (const auto& t : transcript.turns) turns.push_back(to_json(t));
    return json{
        {"instance_id", transcript.instance_id},
        {"method_label", transcript.method.label()},
        {"method", to_json(transcript.method)},
        {"replicate", transcript.replicate},
        {"final_answer", label_to_json(transcript.final_answer)},
        {"call_count", transcript.call_count},
        {"turns", turns},
    };
}

Transcript transcript_from_json(const json& j) {
    try {
        Transcript out;
        out.instance_id = require(j, "instance_id").get<std::string>();
        out.method = method_spec_from_json(require(j, "method"));
        out.replicate = j.value("replicate", 0);
        out.final_answer = label_from_json(j.at("final_answer"));
        out.call_count = require(j, "call_count").get<int>();
        for (const auto& t : require(j, "turns")) out.turns.push_back(turn_from_json(t));
        return out;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::SchemaError, e.what());
    }
}

}  // namespace mpt
