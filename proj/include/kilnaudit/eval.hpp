#ifndef KILNAUDIT_EVAL_HPP
#define KILNAUDIT_EVAL_HPP

#include "kilnaudit/obb.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace kilnaudit::eval {

struct Counts {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;

    Counts& operator+=(const Counts& o)
    {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        return *this;
    }
    friend bool operator==(const Counts&, const Counts&) = default;
};

struct MatchPair {
    std::string detection_id;
    std::string truth_id;
    double iou = 0.0;
};

struct MatchResult {
    std::array<Counts, 3> per_class{};
    std::vector<MatchPair> pairs;
    // Per class, the match flag of each detection in ranked order.
    std::array<std::vector<bool>, 3> ranked{};
    std::array<std::size_t, 3> truth_count{};

    Counts total() const;
};

/// Greedy matching: detections in descending confidence (ties by id) each
/// claim the unmatched same-class truth of highest IoU >= threshold (ties by
/// truth id). Throws ValidationError when frames differ.
MatchResult match(const std::vector<obb::Detection>& detections, const std::vector<obb::Detection>& truths,
                  double iou_threshold = 0.5);

struct PrecisionRecall {
    std::optional<double> precision;
    std::optional<double> recall;
};

PrecisionRecall precision_recall(const Counts& c);

/// All-points interpolated AP over match flags sorted by confidence. Absent
/// when there are no truths.
std::optional<double> average_precision(const std::vector<bool>& ranked_flags, std::size_t truth_count);

/// Weights proportional to 1/n_c over classes with n_c > 0 (zero elsewhere).
/// Throws ValidationError when every count is zero.
std::vector<double> inverse_count_weights(const std::vector<std::size_t>& counts);

/// Sum of w_c * AP_c with inverse-count weights.
double weighted_map(const std::vector<double>& aps, const std::vector<std::size_t>& counts);

struct ClassReport {
    obb::KilnClass cls = obb::KilnClass::CFCBK;
    std::optional<double> ap;
    Counts counts;
    PrecisionRecall pr;
};

struct EvalReport {
    std::array<ClassReport, 3> classes;
    Counts total;
    PrecisionRecall total_pr;
    std::optional<double> weighted_map;

    nlohmann::json to_json() const;
    std::string to_table() const;
};

EvalReport evaluate(const std::vector<obb::Detection>& detections, const std::vector<obb::Detection>& truths,
                    double iou_threshold = 0.5);

/// Per-class proportional split with largest-remainder rounding (remainder
/// ties go to the earlier subset). Items of each class are shuffled with a
/// seeded Fisher-Yates before allocation. Returns sorted item indices.
std::array<std::vector<std::size_t>, 3> stratified_split(const std::vector<int>& labels,
                                                         const std::array<double, 3>& ratios = {0.8, 0.1, 0.1},
                                                         std::uint64_t seed = 0);

/// Largest-remainder allocation of n items to the given ratios.
std::array<std::size_t, 3> allocate(std::size_t n, const std::array<double, 3>& ratios);

} // namespace kilnaudit::eval

#endif
