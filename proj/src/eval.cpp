#include "kilnaudit/eval.hpp"

#include "kilnaudit/error.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace kilnaudit::eval {

Counts MatchResult::total() const
{
    Counts t;
    for (const auto& c : per_class) t += c;
    return t;
}

namespace {

double circumradius(const obb::OrientedBox& b) { return 0.5 * std::hypot(b.w, b.h); }

} // namespace

MatchResult match(const std::vector<obb::Detection>& detections, const std::vector<obb::Detection>& truths,
                  double iou_threshold)
{
    std::optional<obb::Frame> frame;
    for (const auto* set : {&detections, &truths}) {
        for (const auto& d : *set) {
            if (frame && *frame != d.box.frame) throw ValidationError("detections and truths must share one frame");
            frame = d.box.frame;
        }
    }

    std::vector<std::size_t> order(detections.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const auto& da = detections[a];
        const auto& db = detections[b];
        if (da.confidence != db.confidence) return da.confidence > db.confidence;
        return da.id < db.id;
    });

    MatchResult r;
    for (const auto& t : truths) ++r.truth_count[static_cast<std::size_t>(obb::index_of(t.cls))];
    std::vector<bool> used(truths.size(), false);
    for (std::size_t i : order) {
        const auto& d = detections[i];
        const auto k = static_cast<std::size_t>(obb::index_of(d.cls));
        std::optional<std::size_t> best;
        double best_iou = 0.0;
        for (std::size_t j = 0; j < truths.size(); ++j) {
            const auto& t = truths[j];
            if (used[j] || t.cls != d.cls) continue;
            if ((t.box.center - d.box.center).norm() > circumradius(t.box) + circumradius(d.box)) continue;
            const double iou = obb::obb_iou(d.box, t.box);
            if (iou < iou_threshold) continue;
            if (!best || iou > best_iou || (iou == best_iou && t.id < truths[*best].id)) {
                best = j;
                best_iou = iou;
            }
        }
        if (best) {
            used[*best] = true;
            ++r.per_class[k].tp;
            r.pairs.push_back({d.id, truths[*best].id, best_iou});
        } else {
            ++r.per_class[k].fp;
        }
        r.ranked[k].push_back(best.has_value());
    }
    for (std::size_t k = 0; k < 3; ++k) r.per_class[k].fn = r.truth_count[k] - r.per_class[k].tp;
    return r;
}

PrecisionRecall precision_recall(const Counts& c)
{
    PrecisionRecall pr;
    if (c.tp + c.fp > 0) pr.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
    if (c.tp + c.fn > 0) pr.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
    return pr;
}

std::optional<double> average_precision(const std::vector<bool>& ranked_flags, std::size_t truth_count)
{
    if (truth_count == 0) return std::nullopt;
    const std::size_t n = ranked_flags.size();
    std::vector<double> precision(n), recall(n);
    std::size_t tp = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (ranked_flags[i]) ++tp;
        precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
        recall[i] = static_cast<double>(tp) / static_cast<double>(truth_count);
    }
    // Precision envelope: best precision at this or any higher recall.
    for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
    double ap = 0.0;
    double prev_recall = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        ap += (recall[i] - prev_recall) * precision[i];
        prev_recall = recall[i];
    }
    return ap;
}

std::vector<double> inverse_count_weights(const std::vector<std::size_t>& counts)
{
    std::vector<double> w(counts.size(), 0.0);
    double sum = 0.0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
        if (counts[i] > 0) {
            w[i] = 1.0 / static_cast<double>(counts[i]);
            sum += w[i];
        }
    }
    if (sum == 0.0) throw ValidationError("weighted mAP needs at least one class with a positive count");
    for (auto& x : w) x /= sum;
    return w;
}

double weighted_map(const std::vector<double>& aps, const std::vector<std::size_t>& counts)
{
    if (aps.size() != counts.size()) throw ValidationError("one AP per class count is required");
    const auto w = inverse_count_weights(counts);
    double m = 0.0;
    for (std::size_t i = 0; i < aps.size(); ++i) {
        if (w[i] > 0.0) m += w[i] * aps[i];
    }
    return m;
}

EvalReport evaluate(const std::vector<obb::Detection>& detections, const std::vector<obb::Detection>& truths,
                    double iou_threshold)
{
    const auto m = match(detections, truths, iou_threshold);
    EvalReport rep;
    std::vector<double> aps;
    std::vector<std::size_t> counts;
    for (std::size_t k = 0; k < 3; ++k) {
        auto& c = rep.classes[k];
        c.cls = obb::kAllClasses[k];
        c.counts = m.per_class[k];
        c.pr = precision_recall(c.counts);
        c.ap = average_precision(m.ranked[k], m.truth_count[k]);
        if (c.ap) {
            aps.push_back(*c.ap);
            counts.push_back(m.truth_count[k]);
        }
    }
    rep.total = m.total();
    rep.total_pr = precision_recall(rep.total);
    if (!counts.empty()) rep.weighted_map = weighted_map(aps, counts);
    return rep;
}

namespace {

nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

std::string cell(const std::optional<double>& v) { return v ? fmt::format("{:.2f}", *v) : std::string("-"); }

} // namespace

nlohmann::json EvalReport::to_json() const
{
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& c : classes) {
        rows.push_back({{"class", std::string(obb::to_string(c.cls))},
                        {"ap", opt(c.ap)},
                        {"tp", c.counts.tp},
                        {"fp", c.counts.fp},
                        {"fn", c.counts.fn},
                        {"precision", opt(c.pr.precision)},
                        {"recall", opt(c.pr.recall)}});
    }
    return {{"classes", rows},
            {"total",
             {{"tp", total.tp},
              {"fp", total.fp},
              {"fn", total.fn},
              {"precision", opt(total_pr.precision)},
              {"recall", opt(total_pr.recall)}}},
            {"weighted_map", opt(weighted_map)}};
}

std::string EvalReport::to_table() const
{
    std::string out = fmt::format("{:<8} {:>6} {:>6} {:>6} {:>6} {:>9} {:>6}\n", "class", "ap", "tp", "fp", "fn",
                                  "precision", "recall");
    for (const auto& c : classes) {
        out += fmt::format("{:<8} {:>6} {:>6} {:>6} {:>6} {:>9} {:>6}\n", obb::to_string(c.cls), cell(c.ap),
                           c.counts.tp, c.counts.fp, c.counts.fn, cell(c.pr.precision), cell(c.pr.recall));
    }
    out += fmt::format("{:<8} {:>6} {:>6} {:>6} {:>6} {:>9} {:>6}\n", "total", "", total.tp, total.fp, total.fn,
                       cell(total_pr.precision), cell(total_pr.recall));
    out += fmt::format("weighted mAP50: {}\n", cell(weighted_map));
    return out;
}

std::array<std::size_t, 3> allocate(std::size_t n, const std::array<double, 3>& ratios)
{
    const double sum = ratios[0] + ratios[1] + ratios[2];
    for (double r : ratios) {
        if (!(r >= 0.0)) throw ValidationError("split ratios must be non-negative");
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ValidationError(fmt::format("split ratios sum to {}, not 1", sum));

    std::array<std::size_t, 3> out{};
    std::array<double, 3> rem{};
    std::size_t given = 0;
    for (std::size_t k = 0; k < 3; ++k) {
        const double exact = static_cast<double>(n) * ratios[k];
        out[k] = static_cast<std::size_t>(std::floor(exact + 1e-9));
        rem[k] = exact - static_cast<double>(out[k]);
        given += out[k];
    }
    std::array<std::size_t, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b] + 1e-12; });
    for (std::size_t i = 0; given < n; ++i, ++given) ++out[order[i % 3]];
    return out;
}

std::array<std::vector<std::size_t>, 3> stratified_split(const std::vector<int>& labels,
                                                         const std::array<double, 3>& ratios, std::uint64_t seed)
{
    std::vector<int> classes(labels);
    std::sort(classes.begin(), classes.end());
    classes.erase(std::unique(classes.begin(), classes.end()), classes.end());

    std::mt19937_64 rng(seed);
    std::array<std::vector<std::size_t>, 3> out;
    for (int c : classes) {
        std::vector<std::size_t> items;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] == c) items.push_back(i);
        }
        // Own Fisher-Yates: std::shuffle's sequence differs across standard libraries.
        for (std::size_t i = items.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(rng() % i);
            std::swap(items[i - 1], items[j]);
        }
        const auto quota = allocate(items.size(), ratios);
        std::size_t pos = 0;
        for (std::size_t k = 0; k < 3; ++k) {
            for (std::size_t q = 0; q < quota[k]; ++q) out[k].push_back(items[pos++]);
        }
    }
    for (auto& s : out) std::sort(s.begin(), s.end());
    return out;
}

} // namespace kilnaudit::eval
