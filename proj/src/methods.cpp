#include "mpt/methods.hpp"

#include <algorithm>
#include <array>

#include "mpt/prompts.hpp"

namespace mpt {

namespace {

struct Session {
    const BiasInstance& instance;
    ChatBackend& backend;
    const MethodOptions& options;
    DecodingParams decoding;
    std::vector<TurnRecord> turns;

    TurnRecord& call(std::vector<Message> messages, Persona persona, std::optional<int> agent, int round,
                     int sample_index) {
        Conversation conversation{messages, decoding, sample_index};
        ModelResponse response = backend.complete(conversation);
        TurnRecord turn;
        turn.persona = std::move(persona);
        turn.agent = agent;
        turn.round = round;
        turn.sample_index = sample_index;
        turn.prompt_messages = std::move(messages);
        turn.extracted = extract_answer(response.text, instance, options.extraction).label;
        turn.raw_response = std::move(response.text);
        turns.push_back(std::move(turn));
        return turns.back();
    }
};

std::string user_prompt(const BiasInstance& instance, Variant variant) {
    std::string prompt = prompts::render_question(instance);
    switch (variant) {
        case Variant::Standard: break;
        case Variant::Debias: prompt += "\n" + prompts::render_debias(prompts::DebiasVariant::Explicit); break;
        case Variant::Persona:
            prompt += "\n" + prompts::render_debias(prompts::DebiasVariant::Persona, instance.target_group,
                                                    instance.counter_target_group);
            break;
        case Variant::NA: throw Error(ErrorCode::InvalidArgument, "direct prompting needs a variant");
    }
    return prompt;
}

std::string debias_followup(const BiasInstance& instance, Variant variant) {
    if (variant == Variant::Debias) return prompts::render_debias(prompts::DebiasVariant::Explicit);
    if (variant == Variant::Persona) {
        return prompts::render_debias(prompts::DebiasVariant::Persona, instance.target_group,
                                      instance.counter_target_group);
    }
    throw Error(ErrorCode::InvalidArgument, "re-prompting variant must be debias or persona");
}

MethodOutcome finish(Session& session, const MethodSpec& spec, OptionLabel final_answer) {
    MethodOutcome outcome;
    outcome.transcript.instance_id = session.instance.id;
    outcome.transcript.method = spec;
    outcome.transcript.turns = std::move(session.turns);
    outcome.transcript.final_answer = final_answer;
    outcome.transcript.call_count = static_cast<int>(outcome.transcript.turns.size());
    outcome.final_answer = final_answer;
    outcome.calls_used = outcome.transcript.call_count;
    return outcome;
}

OptionLabel vote(const std::vector<OptionLabel>& answers, const BiasInstance& instance, const MethodOptions& options) {
    return majority_vote(answers, instance, options.prefer_unknown_on_tie);
}

std::optional<std::size_t> unknown_index(const BiasInstance& instance) {
    for (std::size_t i = 0; i < kOptionCount; ++i) {
        if (instance.options[i].role == AnswerRole::Unknown) return i;
    }
    return std::nullopt;
}

// One MPT pass on sample stream `stream`; appends its turns to the session and returns y*.
OptionLabel mpt_pass(Session& session, const std::vector<Persona>& personas, int review_rounds, int stream) {
    const BiasInstance& instance = session.instance;
    const std::string question = prompts::render_question(instance);

    std::vector<std::vector<Message>> histories;
    std::vector<std::string> previous;
    for (const auto& persona : personas) {
        std::vector<Message> messages{{Role::System, prompts::render_system(persona)}, {Role::User, question}};
        previous.push_back(session.call(messages, persona, std::nullopt, 0, stream).raw_response);
        messages.push_back({Role::Assistant, previous.back()});
        histories.push_back(std::move(messages));
    }

    auto history_entries = [&](const std::vector<std::string>& responses) {
        std::vector<prompts::HistoryEntry> entries;
        for (std::size_t i = 0; i < personas.size(); ++i) {
            entries.push_back({session.options.label_persona_history ? personas[i].descriptor : std::string{},
                               responses[i]});
        }
        return entries;
    };

    for (int round = 1; round <= review_rounds; ++round) {
        // Every round-(t-1) response exists before any round-t prompt is built.
        const auto entries = history_entries(previous);
        const std::string review = prompts::render_review(entries);
        std::vector<std::string> current;
        for (std::size_t i = 0; i < personas.size(); ++i) {
            histories[i].push_back({Role::User, review});
            current.push_back(session.call(histories[i], personas[i], std::nullopt, round, stream).raw_response);
            histories[i].push_back({Role::Assistant, current.back()});
        }
        previous = std::move(current);
    }

    const auto entries = history_entries(previous);
    std::string aggregation = prompts::render_review(entries);
    if (session.options.aggregation_includes_question) aggregation = question + "\n\n" + aggregation;
    std::vector<Message> messages{{Role::System, prompts::render_system(Persona::none())},
                                  {Role::User, aggregation}};
    return session.call(messages, Persona::none(), std::nullopt, review_rounds + 1, stream).extracted;
}

MethodOutcome direct_impl(const BiasInstance& instance, const MethodSpec& spec, ChatBackend& backend,
                          const MethodOptions& options) {
    Session session{instance, backend, options, spec.decoding, {}};
    std::vector<Message> messages{{Role::System, prompts::render_system(Persona::none())},
                                  {Role::User, user_prompt(instance, spec.variant)}};
    const OptionLabel answer = session.call(messages, Persona::none(), std::nullopt, 0, 0).extracted;
    return finish(session, spec, answer);
}

MethodOutcome sc_impl(const BiasInstance& instance, const MethodSpec& spec, ChatBackend& backend,
                      const MethodOptions& options) {
    Session session{instance, backend, options, spec.decoding, {}};
    const std::string prompt = user_prompt(instance, spec.variant);
    std::vector<OptionLabel> answers;
    for (int i = 0; i < spec.samples; ++i) {
        std::vector<Message> messages{{Role::System, prompts::render_system(Persona::none())}, {Role::User, prompt}};
        answers.push_back(session.call(messages, Persona::none(), std::nullopt, 0, i).extracted);
    }
    return finish(session, spec, vote(answers, instance, options));
}

MethodOutcome reprompt_impl(const BiasInstance& instance, const MethodSpec& spec, ChatBackend& backend,
                            const MethodOptions& options) {
    Session session{instance, backend, options, spec.decoding, {}};
    const std::string followup = debias_followup(instance, spec.variant);
    std::vector<Message> messages{{Role::System, prompts::render_system(Persona::none())},
                                  {Role::User, prompts::render_question(instance)}};
    const std::string first = session.call(messages, Persona::none(), std::nullopt, 0, 0).raw_response;
    messages.push_back({Role::Assistant, first});
    messages.push_back({Role::User, followup});
    // No fallback to the first answer: an unparseable revision scores as Invalid.
    const OptionLabel answer = session.call(messages, Persona::none(), std::nullopt, 1, 0).extracted;
    return finish(session, spec, answer);
}

MethodOutcome mad_impl(const BiasInstance& instance, const MethodSpec& spec, ChatBackend& backend,
                       const MethodOptions& options) {
    Session session{instance, backend, options, spec.decoding, {}};
    const std::string question = prompts::render_question(instance);
    const std::string system = prompts::render_system(Persona::none());
    const int agents = spec.agents;

    std::vector<std::vector<Message>> histories;
    std::vector<std::string> previous;
    std::vector<OptionLabel> last_answers;
    for (int a = 0; a < agents; ++a) {
        std::vector<Message> messages{{Role::System, system}, {Role::User, question}};
        const TurnRecord& turn = session.call(messages, Persona::none(), a + 1, 0, a);
        previous.push_back(turn.raw_response);
        last_answers.push_back(turn.extracted);
        messages.push_back({Role::Assistant, previous.back()});
        histories.push_back(std::move(messages));
    }

    auto history_entries = [&](const std::vector<std::string>& responses) {
        std::vector<prompts::HistoryEntry> entries;
        for (int a = 0; a < agents; ++a) {
            entries.push_back({options.label_agent_history ? "Agent " + std::to_string(a + 1) : std::string{},
                               responses[static_cast<std::size_t>(a)]});
        }
        return entries;
    };

    for (int round = 1; round < spec.debate_rounds; ++round) {
        const auto entries = history_entries(previous);
        const std::string review = prompts::render_review(entries);
        std::vector<std::string> current;
        last_answers.clear();
        for (int a = 0; a < agents; ++a) {
            auto& messages = histories[static_cast<std::size_t>(a)];
            messages.push_back({Role::User, review});
            const TurnRecord& turn = session.call(messages, Persona::none(), a + 1, round, a);
            current.push_back(turn.raw_response);
            last_answers.push_back(turn.extracted);
            messages.push_back({Role::Assistant, current.back()});
        }
        previous = std::move(current);
    }

    if (options.mad_judge) {
        const auto entries = history_entries(previous);
        std::vector<Message> messages{{Role::System, system},
                                      {Role::User, question + "\n\n" + prompts::render_review(entries)}};
        const OptionLabel answer =
            session.call(messages, Persona::none(), std::nullopt, spec.debate_rounds, 0).extracted;
        return finish(session, spec, answer);
    }
    return finish(session, spec, vote(last_answers, instance, options));
}

MethodOutcome mpt_impl(const BiasInstance& instance, const MethodSpec& spec, ChatBackend& backend,
                       const MethodOptions& options) {
    const auto personas = build_personas(instance, spec.include_neutral);
    Session session{instance, backend, options, spec.decoding, {}};
    const OptionLabel answer = mpt_pass(session, personas, spec.review_rounds, 0);
    return finish(session, spec, answer);
}

MethodOutcome mpt_sc_impl(const BiasInstance& instance, const MethodSpec& spec, ChatBackend& backend,
                          const MethodOptions& options) {
    const auto personas = build_personas(instance, spec.include_neutral);
    Session session{instance, backend, options, spec.decoding, {}};
    std::vector<OptionLabel> finals;
    for (int stream = 0; stream < spec.samples; ++stream) {
        finals.push_back(mpt_pass(session, personas, spec.review_rounds, stream));
    }
    return finish(session, spec, vote(finals, instance, options));
}

MethodSpec make_spec(Method method, Variant variant, const MethodConfig& config) {
    MethodSpec spec;
    spec.method = method;
    spec.variant = variant;
    spec.decoding = config.decoding.value_or(default_decoding(method));
    return spec;
}

}  // namespace

DecodingParams default_decoding(Method method) {
    DecodingParams params;
    if (method == Method::SelfConsistency || method == Method::MPTSelfConsistency) {
        params.temperature = kDefaultSamplingTemperature;
    }
    return params;
}

std::vector<Persona> build_personas(const BiasInstance& instance, bool include_neutral) {
    if (instance.target_group.empty() || instance.counter_target_group.empty()) {
        throw Error(ErrorCode::EmptyGroup, "instance '" + instance.id + "' lacks a group name for its personas");
    }
    std::vector<Persona> personas{{PersonaKind::Target, instance.target_group},
                                  {PersonaKind::CounterTarget, instance.counter_target_group}};
    if (include_neutral) personas.push_back(Persona::neutral());
    return personas;
}

OptionLabel majority_vote(std::span<const OptionLabel> answers, std::optional<std::size_t> unknown_option) {
    std::array<int, kOptionCount> counts{};
    for (const auto& a : answers) {
        if (a && *a < kOptionCount) ++counts[*a];
    }
    const int best = *std::max_element(counts.begin(), counts.end());
    if (best == 0) return std::nullopt;
    if (unknown_option && *unknown_option < kOptionCount && counts[*unknown_option] == best) return unknown_option;
    for (std::size_t i = 0; i < kOptionCount; ++i) {
        if (counts[i] == best) return i;
    }
    return std::nullopt;
}

OptionLabel majority_vote(std::span<const OptionLabel> answers, const BiasInstance& instance, bool prefer_unknown) {
    return majority_vote(answers, prefer_unknown ? unknown_index(instance) : std::nullopt);
}

int expected_calls(const MethodSpec& spec, const MethodOptions& options) {
    const int personas = spec.include_neutral ? 3 : 2;
    const int mpt = personas * (spec.review_rounds + 1) + 1;
    switch (spec.method) {
        case Method::Direct: return 1;
        case Method::SelfConsistency: return spec.samples;
        case Method::RePrompting: return 2;
        case Method::MAD: return spec.agents * spec.debate_rounds + (options.mad_judge ? 1 : 0);
        case Method::MPT: return mpt;
        case Method::MPTSelfConsistency: return spec.samples * mpt;
    }
    return 0;
}

MethodOutcome run_method(const BiasInstance& instance, const MethodSpec& spec, ChatBackend& backend,
                         const MethodOptions& options) {
    validate_method_spec(spec);
    switch (spec.method) {
        case Method::Direct: return direct_impl(instance, spec, backend, options);
        case Method::SelfConsistency: return sc_impl(instance, spec, backend, options);
        case Method::RePrompting: return reprompt_impl(instance, spec, backend, options);
        case Method::MAD: return mad_impl(instance, spec, backend, options);
        case Method::MPT: return mpt_impl(instance, spec, backend, options);
        case Method::MPTSelfConsistency: return mpt_sc_impl(instance, spec, backend, options);
    }
    throw Error(ErrorCode::InvalidArgument, "unknown method");
}

MethodOutcome run_direct(const BiasInstance& instance, Variant variant, ChatBackend& backend,
                         const MethodConfig& config) {
    return run_method(instance, make_spec(Method::Direct, variant, config), backend, config.options);
}

MethodOutcome run_self_consistency(const BiasInstance& instance, Variant variant, int k, ChatBackend& backend,
                                   const MethodConfig& config) {
    MethodSpec spec = make_spec(Method::SelfConsistency, variant, config);
    spec.samples = k;
    return run_method(instance, spec, backend, config.options);
}

MethodOutcome run_reprompting(const BiasInstance& instance, Variant variant, ChatBackend& backend,
                              const MethodConfig& config) {
    return run_method(instance, make_spec(Method::RePrompting, variant, config), backend, config.options);
}

MethodOutcome run_mad(const BiasInstance& instance, int agents, int rounds, ChatBackend& backend,
                      const MethodConfig& config) {
    MethodSpec spec = make_spec(Method::MAD, Variant::NA, config);
    spec.agents = agents;
    spec.debate_rounds = rounds;
    return run_method(instance, spec, backend, config.options);
}

MethodOutcome run_mpt(const BiasInstance& instance, int review_rounds, bool include_neutral, ChatBackend& backend,
                      const MethodConfig& config) {
    MethodSpec spec = make_spec(Method::MPT, Variant::NA, config);
    spec.review_rounds = review_rounds;
    spec.include_neutral = include_neutral;
    return run_method(instance, spec, backend, config.options);
}

MethodOutcome run_mpt_sc(const BiasInstance& instance, int review_rounds, bool include_neutral, int k,
                         ChatBackend& backend, const MethodConfig& config) {
    MethodSpec spec = make_spec(Method::MPTSelfConsistency, Variant::NA, config);
    spec.review_rounds = review_rounds;
    spec.include_neutral = include_neutral;
    spec.samples = k;
    return run_method(instance, spec, backend, config.options);
}

}  // namespace mpt
