#include "mpt/extract.hpp"

#include <algorithm>
#include <cctype>
#include <optional>
#include <regex>

namespace mpt {

std::string_view to_string(MatchKind kind) {
    switch (kind) {
        case MatchKind::ExplicitIndex: return "explicit_index";
        case MatchKind::OptionText: return "option_text";
        case MatchKind::Keyword: return "keyword";
        case MatchKind::None: return "none";
    }
    return "?";
}

std::vector<std::string> default_unknown_keywords() {
    return {
        "can't be determined",  "cannot be determined",   "can not be determined", "can't determine",
        "cannot determine",     "can't be known",         "cannot be known",       "cannot answer",
        "can't answer",         "cannot be answered",     "can't be answered",     "not enough information",
        "not enough info",      "insufficient information", "not enough context",  "undetermined",
        "unknown",              "not known",              "can't tell",            "cannot tell",
        "impossible to tell",   "impossible to determine", "not answerable",       "unanswerable",
        "undeterminable",       "cannot be inferred",     "can't be inferred",     "not possible to determine",
    };
}

namespace {

struct Normalized {
    std::string text;
    std::vector<std::size_t> offset;  // offset[i]: source byte of text[i]; one extra entry for the end
};

Normalized normalize(std::string_view source) {
    Normalized out;
    out.text.reserve(source.size());
    out.offset.reserve(source.size() + 1);
    for (std::size_t i = 0; i < source.size(); ++i) {
        const auto c = static_cast<unsigned char>(source[i]);
        // U+2018/2019 and U+201C/201D to ASCII quotes.
        if (c == 0xE2 && i + 2 < source.size() && static_cast<unsigned char>(source[i + 1]) == 0x80) {
            const auto d = static_cast<unsigned char>(source[i + 2]);
            if (d == 0x98 || d == 0x99 || d == 0x9C || d == 0x9D) {
                out.text.push_back((d == 0x98 || d == 0x99) ? '\'' : '"');
                out.offset.push_back(i);
                i += 2;
                continue;
            }
        }
        out.text.push_back(static_cast<char>(std::tolower(c)));
        out.offset.push_back(i);
    }
    out.offset.push_back(source.size());
    return out;
}

std::string normalize_plain(std::string_view s) { return normalize(s).text; }

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

struct Mention {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t label = 0;
    MatchKind kind = MatchKind::None;
};

// All word-bounded occurrences of `needle` in `hay`.
std::vector<std::size_t> find_bounded(const std::string& hay, const std::string& needle) {
    std::vector<std::size_t> out;
    if (needle.empty()) return out;
    std::size_t pos = 0;
    while ((pos = hay.find(needle, pos)) != std::string::npos) {
        const std::size_t end = pos + needle.size();
        const bool left_ok = !is_word_char(needle.front()) || pos == 0 || !is_word_char(hay[pos - 1]);
        const bool right_ok = !is_word_char(needle.back()) || end == hay.size() || !is_word_char(hay[end]);
        if (left_ok && right_ok) out.push_back(pos);
        ++pos;
    }
    return out;
}

// Option display text reduced to its matchable core: lowercase, no trailing punctuation.
std::string option_core(std::string_view display) {
    std::string core = normalize_plain(display);
    while (!core.empty() && (std::isspace(static_cast<unsigned char>(core.back())) || core.back() == '.' ||
                             core.back() == '!' || core.back() == '?')) {
        core.pop_back();
    }
    std::size_t start = 0;
    while (start < core.size() && std::isspace(static_cast<unsigned char>(core[start]))) ++start;
    return core.substr(start);
}

std::vector<std::string> option_variants(std::string_view display) {
    std::vector<std::string> out;
    std::string core = option_core(display);
    if (core.empty()) return out;
    out.push_back(core);
    for (std::string_view article : {"the ", "a ", "an "}) {
        if (core.starts_with(article) && core.size() - article.size() >= 3) {
            out.push_back(core.substr(article.size()));
        }
    }
    return out;
}

// Spans covered by a re-listing of all three options ("a0: x\na1: y\na2: z").
std::vector<std::pair<std::size_t, std::size_t>> listing_spans(const std::string& text,
                                                               const std::array<std::string, kOptionCount>& cores) {
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    auto entry_at = [&](std::size_t pos, std::size_t k) -> std::optional<std::size_t> {
        const std::string tag = "a" + std::to_string(k);
        if (text.compare(pos, tag.size(), tag) != 0) return std::nullopt;
        pos += tag.size();
        while (pos < text.size() && (text[pos] == ' ' || text[pos] == ':' || text[pos] == ')' || text[pos] == '.' ||
                                     text[pos] == '-' || text[pos] == '*')) {
            ++pos;
        }
        if (cores[k].empty() || text.compare(pos, cores[k].size(), cores[k]) != 0) return std::nullopt;
        pos += cores[k].size();
        while (pos < text.size() && (std::isspace(static_cast<unsigned char>(text[pos])) || text[pos] == ',' ||
                                     text[pos] == ';' || text[pos] == '.' || text[pos] == '*' || text[pos] == '|')) {
            ++pos;
        }
        return pos;
    };
    std::size_t pos = 0;
    while ((pos = text.find("a0", pos)) != std::string::npos) {
        if (pos > 0 && is_word_char(text[pos - 1])) {
            ++pos;
            continue;
        }
        std::optional<std::size_t> cursor = pos;
        for (std::size_t k = 0; k < kOptionCount && cursor; ++k) cursor = entry_at(*cursor, k);
        if (cursor) {
            spans.emplace_back(pos, *cursor);
            pos = *cursor;
        } else {
            ++pos;
        }
    }
    return spans;
}

const std::regex& negation_cue() {
    static const std::regex re(
        R"((?:\bnot|n't|\bcannot|\brather than|\binstead of|\bthan|\brule out|\bruling out|\beliminate|\bexcept|\bexcluding|\bunlike|\bnor|\bneither|\bover)\s+(?:be\s+|is\s+)?(?:the\s+|option\s+|answer\s+|choice\s+)?$)");
    return re;
}

bool is_negated(const std::string& text, std::size_t begin) {
    const std::size_t window_start = begin > 40 ? begin - 40 : 0;
    std::string prefix = text.substr(window_start, begin - window_start);
    const auto clause = prefix.find_last_of(".!?;:\n");
    if (clause != std::string::npos) prefix = prefix.substr(clause + 1);
    return std::regex_search(prefix, negation_cue());
}

const std::regex& answer_cue() {
    static const std::regex re(
        R"(\b(?:answer|option|choice|response)\b[*\s]*(?:is|would be|will be|should be|remains|:|-)|\b(?:i|i'd|i would|i will|i'll|i must|we)\s+(?:choose|select|pick|go with|say|conclude|answer)\b|\b(?:therefore|thus|hence|in conclusion|to conclude|consequently)\b)");
    return re;
}

const std::regex& revision_cue() {
    static const std::regex re(
        R"(\b(?:actually|wait|on (?:second|further) thought|on reflection|upon reflection|however|but|instead|correction|reconsider|revise|revised|changing|change my)\b)");
    return re;
}

bool joined_by_hedge(const std::string& text, const Mention& a, const Mention& b) {
    const Mention& first = a.begin < b.begin ? a : b;
    const Mention& second = a.begin < b.begin ? b : a;
    if (first.end > second.begin) return false;
    std::string gap = text.substr(first.end, second.begin - first.end);
    std::string words;
    for (char c : gap) {
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '/') words.push_back(c);
        else if (!words.empty() && words.back() != ' ') words.push_back(' ');
    }
    while (!words.empty() && words.back() == ' ') words.pop_back();
    static const std::vector<std::string> hedges{"", "or", "and", "/", "nor", "vs", "versus", "and or", "or maybe",
                                                 "or perhaps", "or possibly"};
    return std::find(hedges.begin(), hedges.end(), words) != hedges.end() && gap.size() <= 16;
}

ExtractionResult to_result(const Mention& m, const Normalized& norm) {
    return ExtractionResult{m.label, m.kind, {norm.offset[m.begin], norm.offset[m.end]}};
}

}  // namespace

ExtractionResult extract_answer(std::string_view source, std::span<const AnswerOption, kOptionCount> options,
                                const ExtractionOptions& extraction) {
    const Normalized norm = normalize(source);
    const std::string& text = norm.text;

    std::array<std::string, kOptionCount> cores;
    std::optional<std::size_t> unknown_index;
    for (std::size_t k = 0; k < kOptionCount; ++k) {
        cores[k] = option_core(options[k].text);
        if (options[k].role == AnswerRole::Unknown) unknown_index = k;
    }
    const auto masked = listing_spans(text, cores);
    auto in_mask = [&](std::size_t pos) {
        return std::any_of(masked.begin(), masked.end(),
                           [pos](const auto& span) { return pos >= span.first && pos < span.second; });
    };
    auto admissible = [&](const Mention& m) { return !in_mask(m.begin) && !is_negated(text, m.begin); };

    std::vector<Mention> mentions;

    static const std::regex explicit_a(R"(\ba([0-2])\b)");
    static const std::regex explicit_paren(R"(\(([abc])\))");
    static const std::regex explicit_option(R"(\boption\s*#?\s*([123])\b)");
    auto scan = [&](const std::regex& re, auto to_label) {
        for (auto it = std::sregex_iterator(text.begin(), text.end(), re); it != std::sregex_iterator(); ++it) {
            Mention m{static_cast<std::size_t>(it->position(0)),
                      static_cast<std::size_t>(it->position(0) + it->length(0)), to_label(it->str(1)[0]),
                      MatchKind::ExplicitIndex};
            if (admissible(m)) mentions.push_back(m);
        }
    };
    scan(explicit_a, [](char c) { return static_cast<std::size_t>(c - '0'); });
    scan(explicit_paren, [](char c) { return static_cast<std::size_t>(c - 'a'); });
    scan(explicit_option, [](char c) { return static_cast<std::size_t>(c - '1'); });

    if (mentions.empty()) {
        std::vector<Mention> raw;
        for (std::size_t k = 0; k < kOptionCount; ++k) {
            for (const auto& variant : option_variants(options[k].text)) {
                for (auto pos : find_bounded(text, variant)) {
                    raw.push_back({pos, pos + variant.size(), k, MatchKind::OptionText});
                }
            }
        }
        if (unknown_index) {
            for (const auto& keyword : extraction.unknown_keywords) {
                const std::string needle = normalize_plain(keyword);
                for (auto pos : find_bounded(text, needle)) {
                    raw.push_back({pos, pos + needle.size(), *unknown_index, MatchKind::Keyword});
                }
            }
        }
        // Longest span wins where mentions overlap; option text outranks a keyword of equal length.
        std::stable_sort(raw.begin(), raw.end(), [](const Mention& a, const Mention& b) {
            const auto la = a.end - a.begin;
            const auto lb = b.end - b.begin;
            if (la != lb) return la > lb;
            return a.kind == MatchKind::OptionText && b.kind != MatchKind::OptionText;
        });
        std::vector<Mention> kept;
        for (const auto& m : raw) {
            const bool overlaps = std::any_of(kept.begin(), kept.end(), [&](const Mention& k) {
                return m.begin < k.end && k.begin < m.end;
            });
            if (!overlaps) kept.push_back(m);
        }
        for (const auto& m : kept) {
            if (admissible(m)) mentions.push_back(m);
        }
    }

    if (mentions.empty()) return ExtractionResult{};
    std::sort(mentions.begin(), mentions.end(), [](const Mention& a, const Mention& b) { return a.begin < b.begin; });

    const Mention& closest_to_end = mentions.back();
    std::optional<Mention> after_cue;
    std::vector<std::size_t> cue_ends;
    for (auto it = std::sregex_iterator(text.begin(), text.end(), answer_cue()); it != std::sregex_iterator(); ++it) {
        cue_ends.push_back(static_cast<std::size_t>(it->position(0) + it->length(0)));
    }
    for (auto cue = cue_ends.rbegin(); cue != cue_ends.rend() && !after_cue; ++cue) {
        for (const auto& m : mentions) {
            if (m.begin >= *cue) {
                after_cue = m;
                break;
            }
        }
    }

    Mention chosen = closest_to_end;
    if (after_cue && after_cue->label != closest_to_end.label) {
        const std::string between = text.substr(after_cue->end, closest_to_end.begin - after_cue->end);
        if (std::regex_search(between, revision_cue())) return ExtractionResult{};
        chosen = *after_cue;
    } else if (after_cue) {
        chosen = *after_cue;
    }

    for (const auto& other : mentions) {
        if (other.label != chosen.label && joined_by_hedge(text, chosen, other)) return ExtractionResult{};
    }
    return to_result(chosen, norm);
}

}  // namespace mpt
