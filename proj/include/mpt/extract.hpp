#pragma once

#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mpt/core.hpp"

namespace mpt {

enum class MatchKind { ExplicitIndex, OptionText, Keyword, None };

std::string_view to_string(MatchKind kind);

struct ExtractionResult {
    OptionLabel label;
    MatchKind matched_by = MatchKind::None;
    std::pair<std::size_t, std::size_t> matched_span{0, 0};  // byte offsets into the input text

    bool operator==(const ExtractionResult&) const = default;
};

/// Phrasings that map to the Unknown-role option.
std::vector<std::string> default_unknown_keywords();

struct ExtractionOptions {
    std::vector<std::string> unknown_keywords = default_unknown_keywords();
};

/// Maps free-form model output onto one of the three options.
///
/// Explicit index tokens (a0/a1/a2, (a)/(b)/(c), option 1/2/3) take priority;
/// otherwise option display texts and unknown keywords compete, longest span
/// first. A re-listing of all three options is ignored, as is any mention
/// directly negated ("not a0", "rather than the grandson"). Among the
/// surviving mentions the one introduced by the last answer cue ("the answer
/// is") wins unless a later revision cue points elsewhere; without a cue the
/// mention closest to the end wins. Hedges that join two labels ("a0 or a1")
/// yield Invalid.
ExtractionResult extract_answer(std::string_view text, std::span<const AnswerOption, kOptionCount> options,
                                const ExtractionOptions& extraction = {});

inline ExtractionResult extract_answer(std::string_view text, const BiasInstance& instance,
                                       const ExtractionOptions& extraction = {}) {
    return extract_answer(text, std::span<const AnswerOption, kOptionCount>(instance.options), extraction);
}

}  // namespace mpt
