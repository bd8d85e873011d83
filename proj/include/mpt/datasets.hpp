#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mpt/core.hpp"

namespace mpt {

struct CategoryCount {
    Dataset dataset;
    std::string category;       // category string as it appears in the source files
    std::string display_name;
    std::size_t expected = 0;
};

struct DatasetManifest {
    std::string name;
    std::vector<CategoryCount> categories;
    std::vector<std::filesystem::path> sources;
    std::string adaptation_version;
    std::uint64_t sampling_seed = 0;

    std::size_t expected_total() const;
};

/// Published per-category sizes of the official BBQ release (58,492 items).
DatasetManifest bbq_manifest();
/// Sizes after adapting the StereoSet test split (12,766 items).
DatasetManifest stereoset_manifest();

/// Throws Error{CountMismatch} listing every category whose count differs.
void check_counts(const std::vector<BiasInstance>& instances, const DatasetManifest& manifest);

struct LoadOptions {
    bool skip_invalid = false;        // drop records that fail role derivation instead of throwing
    bool polarity_aware_roles = true; // non-negative BBQ questions make the non-stereotyped answer the biased one
};

struct LoadStats {
    std::size_t records = 0;
    std::size_t skipped = 0;
    std::vector<std::string> problems;
};

/// Loads BBQ's per-category JSON-lines files. `path` is a single file or a
/// directory whose *.jsonl files are read in name order.
std::vector<BiasInstance> load_bbq(const std::filesystem::path& path, const LoadOptions& options = {},
                                   LoadStats* stats = nullptr);

/// Converts one BBQ record; exposed for tests.
BiasInstance bbq_record_to_instance(const nlohmann::json& record, const LoadOptions& options = {});

inline constexpr std::string_view kStereoSetAdaptationVersion = "unknown-replaces-unrelated/v1";
inline constexpr std::string_view kWordLevelQuestion = "Which is the most appropriate word for the BLANK ?";
inline constexpr std::string_view kSentenceLevelQuestion = "Which is the most appropriate word for the context?";

/// Phrasings used for the option that replaces StereoSet's unrelated candidate.
const std::vector<std::string>& unknown_option_pool();

/// Reads StereoSet's nested JSON ({"data": {"intrasentence": [...], "intersentence": [...]}})
/// and rewrites every item as an ambiguous three-option instance whose gold is
/// an unknown option placed where the unrelated candidate was.
std::vector<BiasInstance> adapt_stereoset(const std::filesystem::path& path, const LoadOptions& options = {},
                                          LoadStats* stats = nullptr);

/// Converts one StereoSet item; exposed for tests.
BiasInstance stereoset_item_to_instance(const nlohmann::json& item, Dataset level);

/// Counterpart group for a StereoSet target term.
std::string counterpart_group(const std::string& target, const std::string& bias_type);

/// Uniform sample without replacement of `per_category` items per category,
/// categories in first-appearance order, items in source order. Deterministic
/// for a given seed on every platform. Throws Error{InsufficientCategory}.
std::vector<BiasInstance> sample_subset(const std::vector<BiasInstance>& instances, std::size_t per_category,
                                        std::uint64_t seed);

/// Seeded per-instance permutation of option order (gold index follows its option).
std::vector<BiasInstance> shuffle_options(std::vector<BiasInstance> instances, std::uint64_t seed);

void write_instances_jsonl(const std::filesystem::path& path, const std::vector<BiasInstance>& instances);
std::vector<BiasInstance> read_instances_jsonl(const std::filesystem::path& path);

}  // namespace mpt
