#pragma once

#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mpt/core.hpp"

namespace mpt::prompts {

enum class TemplateName { SystemStandard, SystemPersona, Question, DebiasExplicit, DebiasPersona, Review };

std::string_view to_string(TemplateName name);

struct PromptTemplate {
    TemplateName name;
    std::string_view text;

    /// Placeholder names in order of first appearance, without braces.
    std::vector<std::string> placeholders() const;
};

const PromptTemplate& get_template(TemplateName name);
std::span<const PromptTemplate> all_templates();

/// Substitutes every "{name}" in `tmpl`. The value map must cover exactly the
/// template's placeholder set. An empty value swallows one adjacent space so
/// joins never produce doubled spaces.
std::string render(const PromptTemplate& tmpl, const std::map<std::string, std::string>& values);

/// Standard system prompt for Persona::none(), persona-assigning prompt otherwise.
std::string render_system(const Persona& persona);

/// "a0: <text>\na1: <text>\na2: <text>" in stored option order.
std::string render_options(const BiasInstance& instance);
std::string render_question(const BiasInstance& instance);

enum class DebiasVariant { Explicit, Persona };

std::string render_debias(DebiasVariant variant, std::string_view target = {}, std::string_view counter = {});

struct HistoryEntry {
    std::string descriptor;  // empty: response is inserted without a "[label]: " prefix
    std::string response;
};

/// Review prompt over `history`; entries are "[descriptor]: response" blocks
/// separated by blank lines, in input order.
std::string render_review(std::span<const HistoryEntry> history);

/// Content hash over every template body; recorded in run manifests.
std::string template_version();

}  // namespace mpt::prompts
