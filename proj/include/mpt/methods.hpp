#pragma once

#include <optional>
#include <span>
#include <vector>

#include "mpt/backends.hpp"
#include "mpt/core.hpp"
#include "mpt/extract.hpp"

namespace mpt {

inline constexpr double kDefaultSamplingTemperature = 0.7;

struct MethodOptions {
    bool label_persona_history = true;   // "[male]: ..." blocks in MPT review prompts
    bool label_agent_history = true;     // "[Agent 1]: ..." blocks in MAD review prompts
    bool prefer_unknown_on_tie = true;
    bool mad_judge = false;              // replace MAD's final vote with one persona-free judge call
    bool aggregation_includes_question = true;
    ExtractionOptions extraction;
};

struct MethodConfig {
    /// Unset: temperature 0 for single-answer methods, kDefaultSamplingTemperature for sampling methods.
    std::optional<DecodingParams> decoding;
    MethodOptions options;
};

struct MethodOutcome {
    Transcript transcript;
    OptionLabel final_answer;
    int calls_used = 0;
};

/// [Target, CounterTarget] plus Neutral when requested. Throws Error{EmptyGroup}.
std::vector<Persona> build_personas(const BiasInstance& instance, bool include_neutral);

/// Invalid votes are dropped; ties prefer `unknown_option` when it is tied,
/// otherwise the lowest option index. All-Invalid yields Invalid.
OptionLabel majority_vote(std::span<const OptionLabel> answers, std::optional<std::size_t> unknown_option);
OptionLabel majority_vote(std::span<const OptionLabel> answers, const BiasInstance& instance,
                          bool prefer_unknown = true);

/// Closed-form number of completions for `spec` with `personas` MPT personas.
int expected_calls(const MethodSpec& spec, const MethodOptions& options = {});

MethodOutcome run_direct(const BiasInstance& instance, Variant variant, ChatBackend& backend,
                         const MethodConfig& config = {});
MethodOutcome run_self_consistency(const BiasInstance& instance, Variant variant, int k, ChatBackend& backend,
                                   const MethodConfig& config = {});
MethodOutcome run_reprompting(const BiasInstance& instance, Variant variant, ChatBackend& backend,
                              const MethodConfig& config = {});
MethodOutcome run_mad(const BiasInstance& instance, int agents, int rounds, ChatBackend& backend,
                      const MethodConfig& config = {});
MethodOutcome run_mpt(const BiasInstance& instance, int review_rounds, bool include_neutral, ChatBackend& backend,
                      const MethodConfig& config = {});
MethodOutcome run_mpt_sc(const BiasInstance& instance, int review_rounds, bool include_neutral, int k,
                         ChatBackend& backend, const MethodConfig& config = {});

/// Dispatches on spec.method using spec.decoding.
MethodOutcome run_method(const BiasInstance& instance, const MethodSpec& spec, ChatBackend& backend,
                         const MethodOptions& options = {});

/// Default decoding for a method: temperature 0, or kDefaultSamplingTemperature for SC variants.
DecodingParams default_decoding(Method method);

}  // namespace mpt
