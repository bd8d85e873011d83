#include "mpt/prompts.hpp"

#include <algorithm>
#include <array>

#include "mpt/hash.hpp"
#include "mpt/templates_embedded.hpp"

namespace mpt::prompts {

namespace {

constexpr std::array<PromptTemplate, 6> kTemplates{{
    {TemplateName::SystemStandard, embedded::system_standard},
    {TemplateName::SystemPersona, embedded::system_persona},
    {TemplateName::Question, embedded::question},
    {TemplateName::DebiasExplicit, embedded::debias_explicit},
    {TemplateName::DebiasPersona, embedded::debias_persona},
    {TemplateName::Review, embedded::review},
}};

bool is_name_char(char c) { return (c >= 'a' && c <= 'z') || c == '_'; }

// Finds "{name}" starting at `pos`; returns npos when none remain.
std::size_t find_placeholder(std::string_view text, std::size_t pos, std::string_view& name) {
    while ((pos = text.find('{', pos)) != std::string_view::npos) {
        std::size_t end = pos + 1;
        while (end < text.size() && is_name_char(text[end])) ++end;
        if (end < text.size() && text[end] == '}' && end > pos + 1) {
            name = text.substr(pos + 1, end - pos - 1);
            return pos;
        }
        ++pos;
    }
    return std::string_view::npos;
}

}  // namespace

std::string_view to_string(TemplateName name) {
    switch (name) {
        case TemplateName::SystemStandard: return "system_standard";
        case TemplateName::SystemPersona: return "system_persona";
        case TemplateName::Question: return "question";
        case TemplateName::DebiasExplicit: return "debias_explicit";
        case TemplateName::DebiasPersona: return "debias_persona";
        case TemplateName::Review: return "review";
    }
    return "?";
}

std::vector<std::string> PromptTemplate::placeholders() const {
    std::vector<std::string> out;
    std::string_view name;
    std::size_t pos = 0;
    while ((pos = find_placeholder(text, pos, name)) != std::string_view::npos) {
        if (std::find(out.begin(), out.end(), name) == out.end()) out.emplace_back(name);
        pos += name.size() + 2;
    }
    return out;
}

const PromptTemplate& get_template(TemplateName name) {
    return kTemplates.at(static_cast<std::size_t>(name));
}

std::span<const PromptTemplate> all_templates() { return kTemplates; }

std::string render(const PromptTemplate& tmpl, const std::map<std::string, std::string>& values) {
    auto expected = tmpl.placeholders();
    std::sort(expected.begin(), expected.end());
    std::vector<std::string> given;
    for (const auto& [key, _] : values) given.push_back(key);
    if (expected != given) {
        throw Error(ErrorCode::InvalidArgument,
                    "placeholder set mismatch for template " + std::string(to_string(tmpl.name)));
    }

    const std::string_view text = tmpl.text;
    std::string out;
    out.reserve(text.size() + 256);
    std::string_view name;
    std::size_t cursor = 0;
    std::size_t pos = 0;
    while ((pos = find_placeholder(text, cursor, name)) != std::string_view::npos) {
        out.append(text.substr(cursor, pos - cursor));
        const std::string& value = values.at(std::string(name));
        cursor = pos + name.size() + 2;
        if (value.empty()) {
            // Collapse the join: drop the space that would follow (or precede, at the end).
            if (cursor < text.size() && text[cursor] == ' ' && (out.empty() || out.back() == ' ')) {
                ++cursor;
            } else if (cursor == text.size() && !out.empty() && out.back() == ' ') {
                out.pop_back();
            }
        } else {
            out.append(value);
        }
    }
    out.append(text.substr(cursor));
    return out;
}

std::string render_system(const Persona& persona) {
    if (persona.kind == PersonaKind::None) {
        if (!persona.descriptor.empty()) {
            throw Error(ErrorCode::InvalidArgument, "persona-free system prompt takes no descriptor");
        }
        return std::string(get_template(TemplateName::SystemStandard).text);
    }
    if (persona.descriptor.empty()) {
        throw Error(ErrorCode::EmptyDescriptor,
                    "persona of kind " + std::string(mpt::to_string(persona.kind)) + " has no descriptor");
    }
    return render(get_template(TemplateName::SystemPersona), {{"persona", persona.descriptor}});
}

std::string render_options(const BiasInstance& instance) {
    std::string out;
    for (std::size_t i = 0; i < instance.options.size(); ++i) {
        if (i) out.push_back('\n');
        out += "a" + std::to_string(i) + ": " + instance.options[i].text;
    }
    return out;
}

std::string render_question(const BiasInstance& instance) {
    return render(get_template(TemplateName::Question), {
                                                            {"context", instance.context},
                                                            {"question", instance.question},
                                                            {"options", render_options(instance)},
                                                        });
}

std::string render_debias(DebiasVariant variant, std::string_view target, std::string_view counter) {
    if (variant == DebiasVariant::Explicit) {
        return std::string(get_template(TemplateName::DebiasExplicit).text);
    }
    if (target.empty() || counter.empty()) {
        throw Error(ErrorCode::EmptyGroup, "persona-based debiasing needs both group names");
    }
    return render(get_template(TemplateName::DebiasPersona),
                  {{"target", std::string(target)}, {"counter_target", std::string(counter)}});
}

std::string render_review(std::span<const HistoryEntry> history) {
    if (history.empty()) throw Error(ErrorCode::EmptyHistory, "review prompt needs at least one response");
    std::string block;
    for (std::size_t i = 0; i < history.size(); ++i) {
        if (i) block += "\n\n";
        if (!history[i].descriptor.empty()) block += "[" + history[i].descriptor + "]: ";
        block += history[i].response;
    }
    return render(get_template(TemplateName::Review), {{"response_history", block}});
}

std::string template_version() {
    std::string all;
    for (const auto& t : kTemplates) {
        all += to_string(t.name);
        all.push_back('\0');
        all += t.text;
        all.push_back('\0');
    }
    return sha256_hex(all).substr(0, 16);
}

}  // namespace mpt::prompts
