#include "mpt/datasets.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>

#include "mpt/hash.hpp"

namespace mpt {

using nlohmann::json;

namespace {

std::string alnum_lower(std::string_view s) {
    std::string out;
    for (char c : s) {
        if (std::isalnum(static_cast<unsigned char>(c))) out.push_back(static_cast<char>(std::tolower(c)));
    }
    return out;
}

double unit_double(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::vector<std::string> split_words(const std::string& s) {
    std::vector<std::string> words;
    std::istringstream in(s);
    for (std::string w; in >> w;) words.push_back(w);
    return words;
}

// Readable persona descriptor for a BBQ answer: lowercase answer names such as
// "grandfather" are used as-is, proper names fall back to the group tag.
std::string humanize_tag(const std::string& tag) {
    static const std::map<std::string, std::string> known{
        {"F", "woman"},
        {"M", "man"},
        {"trans_F", "transgender woman"},
        {"trans_M", "transgender man"},
        {"trans", "transgender person"},
        {"nonTrans", "cisgender person"},
        {"nonTrans_F", "cisgender woman"},
        {"nonTrans_M", "cisgender man"},
        {"lowSES", "low SES person"},
        {"highSES", "high SES person"},
        {"old", "older person"},
        {"nonOld", "younger person"},
        {"disabled", "disabled person"},
        {"nonDisabled", "non-disabled person"},
    };
    if (auto it = known.find(tag); it != known.end()) return it->second;
    if (auto dash = tag.find('-'); dash != std::string::npos) {
        const std::string head = tag.substr(0, dash);
        const std::string rest = tag.substr(dash + 1);
        if (head == "F") return rest + " woman";
        if (head == "M") return rest + " man";
        if (head == "lowSES") return "low SES " + rest + " person";
        if (head == "highSES") return "high SES " + rest + " person";
    }
    std::string out = tag;
    std::replace(out.begin(), out.end(), '_', ' ');
    return out;
}

std::string persona_descriptor(const std::string& name, const std::string& tag) {
    if (!name.empty() && std::islower(static_cast<unsigned char>(name.front()))) return name;
    if (!tag.empty()) return humanize_tag(tag);
    return name;
}

bool group_matches(const std::string& label, const std::vector<std::string>& groups, bool allow_containment) {
    const std::string norm = alnum_lower(label);
    if (norm.empty()) return false;
    for (const auto& g : groups) {
        const std::string gn = alnum_lower(g);
        if (gn.empty()) continue;
        if (norm == gn) return true;
        if (allow_containment) {
            const bool negated = norm.starts_with("non") && !gn.starts_with("non");
            if (!negated && (norm.find(gn) != std::string::npos || gn.find(norm) != std::string::npos)) return true;
        }
    }
    return false;
}

const json& field(const json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) throw Error(ErrorCode::SchemaError, std::string("missing field '") + key + "'");
    return *it;
}

std::vector<std::filesystem::path> jsonl_files(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw Error(ErrorCode::IoError, "no such path: " + path.string());
    std::vector<std::filesystem::path> files;
    if (std::filesystem::is_directory(path)) {
        for (const auto& entry : std::filesystem::directory_iterator(path)) {
            if (entry.is_regular_file() && entry.path().extension() == ".jsonl") files.push_back(entry.path());
        }
        std::sort(files.begin(), files.end());
    } else {
        files.push_back(path);
    }
    return files;
}

}  // namespace

std::size_t DatasetManifest::expected_total() const {
    std::size_t total = 0;
    for (const auto& c : categories) total += c.expected;
    return total;
}

DatasetManifest bbq_manifest() {
    DatasetManifest m;
    m.name = "bbq";
    m.categories = {
        {Dataset::BBQ, "Age", "age", 3680},
        {Dataset::BBQ, "Disability_status", "disability status", 1556},
        {Dataset::BBQ, "Gender_identity", "gender identity", 5672},
        {Dataset::BBQ, "Nationality", "nationality", 3080},
        {Dataset::BBQ, "Physical_appearance", "physical appearance", 1576},
        {Dataset::BBQ, "Race_ethnicity", "race/ethnicity", 6880},
        {Dataset::BBQ, "Religion", "religion", 1200},
        {Dataset::BBQ, "Sexual_orientation", "sexual orientation", 864},
        {Dataset::BBQ, "SES", "socio-economic status", 6864},
        {Dataset::BBQ, "Race_x_gender", "race by gender", 15960},
        {Dataset::BBQ, "Race_x_SES", "race by SES", 11160},
    };
    return m;
}

DatasetManifest stereoset_manifest() {
    DatasetManifest m;
    m.name = "stereoset";
    m.adaptation_version = std::string(kStereoSetAdaptationVersion);
    m.categories = {
        {Dataset::StereoSetWord, "gender", "word-level gender", 771},
        {Dataset::StereoSetWord, "race", "word-level race", 2976},
        {Dataset::StereoSetWord, "religion", "word-level religion", 247},
        {Dataset::StereoSetWord, "profession", "word-level profession", 2398},
        {Dataset::StereoSetSentence, "gender", "sentence-level gender", 751},
        {Dataset::StereoSetSentence, "race", "sentence-level race", 2947},
        {Dataset::StereoSetSentence, "religion", "sentence-level religion", 241},
        {Dataset::StereoSetSentence, "profession", "sentence-level profession", 2435},
    };
    return m;
}

void check_counts(const std::vector<BiasInstance>& instances, const DatasetManifest& manifest) {
    std::map<std::pair<Dataset, std::string>, std::size_t> actual;
    for (const auto& inst : instances) ++actual[{inst.dataset, inst.category}];
    std::string problems;
    std::set<std::pair<Dataset, std::string>> expected_keys;
    for (const auto& c : manifest.categories) {
        expected_keys.insert({c.dataset, c.category});
        const std::size_t got = actual[{c.dataset, c.category}];
        if (got != c.expected) {
            problems += " " + c.display_name + ": expected " + std::to_string(c.expected) + ", got " +
                        std::to_string(got) + ";";
        }
    }
    for (const auto& [key, n] : actual) {
        if (!expected_keys.contains(key) && n > 0) {
            problems += " unexpected category " + key.second + " (" + std::to_string(n) + ");";
        }
    }
    if (!problems.empty()) throw Error(ErrorCode::CountMismatch, manifest.name + ":" + problems);
}

BiasInstance bbq_record_to_instance(const json& record, const LoadOptions& options) {
    try {
        BiasInstance inst;
        inst.dataset = Dataset::BBQ;
        inst.category = field(record, "category").get<std::string>();
        inst.id = inst.category + ":" + std::to_string(field(record, "example_id").get<long long>());
        const std::string condition = field(record, "context_condition").get<std::string>();
        if (condition == "ambig") inst.condition = Condition::Ambiguous;
        else if (condition == "disambig") inst.condition = Condition::Disambiguated;
        else throw Error(ErrorCode::SchemaError, "unknown context_condition '" + condition + "'");
        inst.context = field(record, "context").get<std::string>();
        inst.question = field(record, "question").get<std::string>();
        inst.gold = field(record, "label").get<std::size_t>();
        const bool negative = record.value("question_polarity", std::string("neg")) != "nonneg";

        const json& info = field(record, "answer_info");
        const json& meta = field(record, "additional_metadata");
        std::vector<std::string> groups;
        for (const auto& g : field(meta, "stereotyped_groups")) groups.push_back(g.get<std::string>());

        std::array<std::string, kOptionCount> names, tags;
        std::optional<std::size_t> unknown;
        for (std::size_t k = 0; k < kOptionCount; ++k) {
            const std::string key = "ans" + std::to_string(k);
            inst.options[k].text = field(record, key.c_str()).get<std::string>();
            const json& entry = field(info, key.c_str());
            if (!entry.is_array() || entry.size() < 2) {
                throw Error(ErrorCode::RoleDerivationError, inst.id + ": answer_info." + key + " lacks a group tag");
            }
            names[k] = entry[0].get<std::string>();
            tags[k] = entry[1].get<std::string>();
            if (alnum_lower(tags[k]) == "unknown") {
                if (unknown) throw Error(ErrorCode::RoleDerivationError, inst.id + ": two unknown answers");
                unknown = k;
            }
        }
        if (!unknown) throw Error(ErrorCode::RoleDerivationError, inst.id + ": no answer annotated as unknown");

        std::vector<std::size_t> group_answers;
        for (std::size_t k = 0; k < kOptionCount; ++k) {
            if (k != *unknown) group_answers.push_back(k);
        }
        std::optional<std::size_t> target;
        for (bool containment : {false, true}) {
            std::vector<std::size_t> hits;
            for (auto k : group_answers) {
                if (group_matches(tags[k], groups, containment) || group_matches(names[k], groups, containment)) {
                    hits.push_back(k);
                }
            }
            if (hits.size() == 1) {
                target = hits.front();
                break;
            }
            if (hits.size() > 1) break;
        }
        if (!target) {
            throw Error(ErrorCode::RoleDerivationError,
                        inst.id + ": cannot tell which answer belongs to the stereotyped group");
        }
        const std::size_t counter = group_answers[0] == *target ? group_answers[1] : group_answers[0];

        const bool target_is_biased = !options.polarity_aware_roles || negative;
        inst.options[*unknown].role = AnswerRole::Unknown;
        inst.options[*target].role = target_is_biased ? AnswerRole::Biased : AnswerRole::CounterBiased;
        inst.options[counter].role = target_is_biased ? AnswerRole::CounterBiased : AnswerRole::Biased;

        inst.target_group = persona_descriptor(names[*target], tags[*target]);
        inst.counter_target_group = persona_descriptor(names[counter], tags[counter]);
        if (inst.target_group == inst.counter_target_group) {
            inst.target_group = names[*target];
            inst.counter_target_group = names[counter];
        }
        if (inst.target_group == inst.counter_target_group) {
            throw Error(ErrorCode::RoleDerivationError, inst.id + ": both answers describe the same group");
        }
        return validate_instance(std::move(inst));
    } catch (const json::exception& e) {
        throw Error(ErrorCode::SchemaError, e.what());
    }
}

std::vector<BiasInstance> load_bbq(const std::filesystem::path& path, const LoadOptions& options, LoadStats* stats) {
    std::vector<BiasInstance> out;
    LoadStats local;
    for (const auto& file : jsonl_files(path)) {
        std::ifstream in(file);
        if (!in) throw Error(ErrorCode::IoError, "cannot open " + file.string());
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            ++local.records;
            auto record = json::parse(line, nullptr, false);
            try {
                if (record.is_discarded()) throw Error(ErrorCode::SchemaError, "line is not JSON");
                out.push_back(bbq_record_to_instance(record, options));
            } catch (const Error& e) {
                const std::string where = file.filename().string() + ":" + std::to_string(line_no) + ": ";
                if (!options.skip_invalid) throw Error(e.code(), where + e.what());
                ++local.skipped;
                local.problems.push_back(where + e.what());
            }
        }
    }
    if (stats) *stats = std::move(local);
    return out;
}

const std::vector<std::string>& unknown_option_pool() {
    static const std::vector<std::string> pool{"Not enough information", "Cannot answer.", "Unknown"};
    return pool;
}

std::string counterpart_group(const std::string& target, const std::string& bias_type) {
    static const std::map<std::string, std::string> swaps = [] {
        std::map<std::string, std::string> m;
        const std::vector<std::pair<std::string, std::string>> pairs{
            {"male", "female"},         {"man", "woman"},       {"men", "women"},
            {"boy", "girl"},            {"boys", "girls"},      {"he", "she"},
            {"him", "her"},             {"his", "hers"},        {"himself", "herself"},
            {"father", "mother"},       {"fathers", "mothers"}, {"son", "daughter"},
            {"sons", "daughters"},      {"brother", "sister"},  {"brothers", "sisters"},
            {"husband", "wife"},        {"husbands", "wives"},  {"gentleman", "lady"},
            {"gentlemen", "ladies"},    {"grandfather", "grandmother"},
            {"schoolboy", "schoolgirl"}, {"daddy", "mommy"},    {"dad", "mom"},
            {"sir", "madam"},           {"groom", "bride"},     {"king", "queen"},
            {"uncle", "aunt"},          {"nephew", "niece"},    {"boyfriend", "girlfriend"},
            {"stepfather", "stepmother"}, {"males", "females"},
        };
        for (const auto& [a, b] : pairs) {
            m[a] = b;
            m[b] = a;
        }
        return m;
    }();
    if (bias_type == "gender") {
        bool swapped = false;
        std::string out;
        for (const auto& word : split_words(target)) {
            std::string lower = word;
            std::transform(lower.begin(), lower.end(), lower.begin(),
                           [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
            std::string replacement = word;
            if (auto it = swaps.find(lower); it != swaps.end()) {
                replacement = it->second;
                if (std::isupper(static_cast<unsigned char>(word.front()))) {
                    replacement[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(replacement[0])));
                }
                swapped = true;
            }
            if (!out.empty()) out.push_back(' ');
            out += replacement;
        }
        if (swapped) return out;
    }
    return "people not belonging to " + target;
}

namespace {

// The word a StereoSet intrasentence candidate puts into the BLANK.
std::string fill_word(const std::string& context, const std::string& sentence) {
    std::size_t prefix = 0;
    while (prefix < context.size() && prefix < sentence.size() &&
           std::tolower(static_cast<unsigned char>(context[prefix])) ==
               std::tolower(static_cast<unsigned char>(sentence[prefix]))) {
        ++prefix;
    }
    std::size_t suffix = 0;
    while (suffix < context.size() - prefix && suffix < sentence.size() - prefix &&
           std::tolower(static_cast<unsigned char>(context[context.size() - 1 - suffix])) ==
               std::tolower(static_cast<unsigned char>(sentence[sentence.size() - 1 - suffix]))) {
        ++suffix;
    }
    // Back off to word boundaries in case the filled word shares letters with BLANK's neighbours.
    while (prefix > 0 && std::isalnum(static_cast<unsigned char>(sentence[prefix - 1]))) --prefix;
    std::size_t end = sentence.size() - suffix;
    while (end < sentence.size() && std::isalnum(static_cast<unsigned char>(sentence[end]))) ++end;
    std::string word = sentence.substr(prefix, end - prefix);
    auto first = word.find_first_not_of(" \t");
    auto last = word.find_last_not_of(" \t.,!?;:");
    if (first == std::string::npos || last == std::string::npos || last < first) return sentence;
    return word.substr(first, last - first + 1);
}

}  // namespace

BiasInstance stereoset_item_to_instance(const json& item, Dataset level) {
    try {
        BiasInstance inst;
        inst.dataset = level;
        const std::string raw_id = field(item, "id").get<std::string>();
        inst.id = std::string(level == Dataset::StereoSetWord ? "stereoset-word:" : "stereoset-sentence:") + raw_id;
        inst.category = field(item, "bias_type").get<std::string>();
        inst.condition = Condition::Ambiguous;
        inst.context = field(item, "context").get<std::string>();
        inst.question = std::string(level == Dataset::StereoSetWord ? kWordLevelQuestion : kSentenceLevelQuestion);

        const json& sentences = field(item, "sentences");
        if (!sentences.is_array() || sentences.size() != kOptionCount) {
            throw Error(ErrorCode::SchemaError, inst.id + ": expected three candidate sentences");
        }
        std::set<std::string> seen;
        const auto& pool = unknown_option_pool();
        for (std::size_t k = 0; k < kOptionCount; ++k) {
            const std::string label = field(sentences[k], "gold_label").get<std::string>();
            const std::string sentence = field(sentences[k], "sentence").get<std::string>();
            if (!seen.insert(label).second) throw Error(ErrorCode::SchemaError, inst.id + ": repeated " + label);
            if (label == "stereotype") {
                inst.options[k].role = AnswerRole::Biased;
            } else if (label == "anti-stereotype") {
                inst.options[k].role = AnswerRole::CounterBiased;
            } else if (label == "unrelated") {
                inst.options[k].role = AnswerRole::Unknown;
                inst.options[k].text = pool[fnv1a64(raw_id) % pool.size()];
                inst.gold = k;
                continue;
            } else {
                throw Error(ErrorCode::SchemaError, inst.id + ": unknown gold_label '" + label + "'");
            }
            inst.options[k].text = level == Dataset::StereoSetWord ? fill_word(inst.context, sentence) : sentence;
        }
        const std::string target = field(item, "target").get<std::string>();
        inst.target_group = target;
        inst.counter_target_group = counterpart_group(target, inst.category);
        return validate_instance(std::move(inst));
    } catch (const json::exception& e) {
        throw Error(ErrorCode::SchemaError, e.what());
    }
}

std::vector<BiasInstance> adapt_stereoset(const std::filesystem::path& path, const LoadOptions& options,
                                          LoadStats* stats) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
    json root = json::parse(in, nullptr, false);
    if (root.is_discarded()) throw Error(ErrorCode::SchemaError, path.string() + " is not JSON");
    const json& data = root.contains("data") ? root.at("data") : root;

    std::vector<BiasInstance> out;
    LoadStats local;
    for (const auto& [key, level] : {std::pair<const char*, Dataset>{"intrasentence", Dataset::StereoSetWord},
                                     std::pair<const char*, Dataset>{"intersentence", Dataset::StereoSetSentence}}) {
        if (!data.contains(key)) continue;
        for (const auto& item : data.at(key)) {
            ++local.records;
            try {
                out.push_back(stereoset_item_to_instance(item, level));
            } catch (const Error& e) {
                if (!options.skip_invalid) throw;
                ++local.skipped;
                local.problems.push_back(e.what());
            }
        }
    }
    if (stats) *stats = std::move(local);
    return out;
}

std::vector<BiasInstance> sample_subset(const std::vector<BiasInstance>& instances, std::size_t per_category,
                                        std::uint64_t seed) {
    std::vector<std::string> order;
    std::map<std::string, std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < instances.size(); ++i) {
        auto [it, inserted] = members.try_emplace(instances[i].category);
        if (inserted) order.push_back(instances[i].category);
        it->second.push_back(i);
    }
    std::mt19937_64 rng(seed);
    std::vector<BiasInstance> out;
    out.reserve(order.size() * per_category);
    for (const auto& category : order) {
        const auto& idx = members[category];
        if (idx.size() < per_category) {
            throw Error(ErrorCode::InsufficientCategory, "category '" + category + "' has " +
                                                             std::to_string(idx.size()) + " instances, need " +
                                                             std::to_string(per_category));
        }
        // Selection sampling: each item is taken with probability needed / remaining.
        std::size_t needed = per_category;
        for (std::size_t i = 0; i < idx.size() && needed > 0; ++i) {
            const std::size_t remaining = idx.size() - i;
            if (static_cast<double>(remaining) * unit_double(rng) < static_cast<double>(needed)) {
                out.push_back(instances[idx[i]]);
                --needed;
            }
        }
    }
    return out;
}

std::vector<BiasInstance> shuffle_options(std::vector<BiasInstance> instances, std::uint64_t seed) {
    for (auto& inst : instances) {
        std::mt19937_64 rng(seed ^ fnv1a64(inst.id));
        std::array<std::size_t, kOptionCount> perm{0, 1, 2};
        for (std::size_t i = kOptionCount - 1; i > 0; --i) {
            const auto j = static_cast<std::size_t>(unit_double(rng) * static_cast<double>(i + 1));
            std::swap(perm[i], perm[std::min(j, i)]);
        }
        std::array<AnswerOption, kOptionCount> options;
        std::size_t gold = 0;
        for (std::size_t k = 0; k < kOptionCount; ++k) {
            options[k] = inst.options[perm[k]];
            if (perm[k] == inst.gold) gold = k;
        }
        inst.options = options;
        inst.gold = gold;
    }
    return instances;
}

void write_instances_jsonl(const std::filesystem::path& path, const std::vector<BiasInstance>& instances) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
    for (const auto& inst : instances) out << to_json(inst).dump() << '\n';
}

std::vector<BiasInstance> read_instances_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
    std::vector<BiasInstance> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto j = json::parse(line, nullptr, false);
        if (j.is_discarded()) {
            throw Error(ErrorCode::SchemaError, path.filename().string() + ":" + std::to_string(line_no) + ": not JSON");
        }
        out.push_back(validate_instance(instance_from_json(j)));
    }
    return out;
}

}  // namespace mpt
