#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mpt/core.hpp"

namespace mpt {

/// Counts of predicted roles per gold row. Invalid answers get their own counters.
struct CountTable {
    std::uint64_t n_ab = 0, n_ac = 0, n_au = 0;  // ambiguous
    std::uint64_t n_bb = 0, n_bc = 0, n_bu = 0;  // disambiguated, gold Biased
    std::uint64_t n_cb = 0, n_cc = 0, n_cu = 0;  // disambiguated, gold CounterBiased
    std::uint64_t n_invalid_amb = 0, n_invalid_b = 0, n_invalid_c = 0;

    std::uint64_t n_a() const { return n_ab + n_ac + n_au + n_invalid_amb; }
    std::uint64_t n_b() const { return n_bb + n_bc + n_bu + n_invalid_b; }
    std::uint64_t n_c() const { return n_cb + n_cc + n_cu + n_invalid_c; }
    std::uint64_t n_invalid() const { return n_invalid_amb + n_invalid_b + n_invalid_c; }
    std::uint64_t total() const { return n_a() + n_b() + n_c(); }

    CountTable& operator+=(const CountTable& other);
    bool operator==(const CountTable&) const = default;
};

/// One scored prediction. `predicted` is empty for an Invalid answer.
struct ScoredRecord {
    Condition condition = Condition::Ambiguous;
    AnswerRole gold_role = AnswerRole::Unknown;
    std::optional<AnswerRole> predicted;
};

ScoredRecord score(const BiasInstance& instance, OptionLabel answer);

/// Routes each record into exactly one cell.
CountTable tally(std::span<const ScoredRecord> records);
void tally_into(CountTable& table, const ScoredRecord& record);

// Strict forms: throw Error{EmptySplit} when the denominator they need is zero.
double accuracy_ambiguous(const CountTable& t);
double accuracy_disambiguated(const CountTable& t);
double diff_bias_ambiguous(const CountTable& t);
double diff_bias_disambiguated(const CountTable& t);

/// Split metrics. A split absent from the table leaves its fields empty
/// (adapted StereoSet has no disambiguated items).
struct SplitMetrics {
    CountTable counts;
    std::optional<double> acc_amb, acc_dis, acc_avg;
    std::optional<double> diffbias_amb, diffbias_dis, diffbias_avg;
};

/// Throws Error{EmptySplit} for an empty table.
SplitMetrics compute_metrics(const CountTable& table);

/// Pooled accuracy when both splits hold the same number of instances,
/// otherwise the mean of the split accuracies.
double average_accuracy(const CountTable& t);
double mean_of_splits(double amb, double dis);
double mean_magnitude(double diffbias_amb, double diffbias_dis);

struct MetricReport {
    std::string method;   // MethodSpec label
    std::string variant;
    SplitMetrics overall;
    std::map<std::string, SplitMetrics> per_category;  // keyed "<dataset>/<category>"
    std::map<std::string, SplitMetrics> per_dataset;
    std::uint64_t queries = 0;
    std::uint64_t calls_total = 0;
    double cost_multiplier = 0.0;  // calls per query
};

struct EvaluatedAnswer {
    const BiasInstance* instance = nullptr;
    OptionLabel answer;
    int calls = 0;
};

MetricReport build_report(std::string method, std::string variant, std::span<const EvaluatedAnswer> answers);

nlohmann::json to_json(const CountTable& table);
nlohmann::json to_json(const SplitMetrics& metrics);
nlohmann::json to_json(const MetricReport& report);

}  // namespace mpt
