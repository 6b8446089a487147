#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "error.hpp"
#include "geometry.hpp"
#include "postproc.hpp"

namespace detkit {

struct GroundTruthInstance {
    std::string image_id;
    int class_id{0};
    Box box;
    bool difficult{false};

    friend bool operator==(const GroundTruthInstance&, const GroundTruthInstance&) = default;
};

// ---------------------------------------------------------------------------
// Detection / ground-truth matching
// ---------------------------------------------------------------------------

enum class MatchLabel : unsigned char { TruePositive, FalsePositive, Ignored };

struct MatchOptions {
    bool class_aware{true};
    // Difficult ground truths never count as misses and never absorb a match;
    // detections landing on them are ignored.
    bool ignore_difficult{true};
};

struct MatchResult {
    std::vector<std::size_t> order;        // detection indices in processing order
    std::vector<MatchLabel> labels;        // by detection index
    std::vector<long> matched_gt;          // by detection index, -1 when none
    std::vector<char> gt_matched;          // by ground-truth index
};

namespace detail {
    inline std::unordered_map<std::string, std::vector<std::size_t>>
    index_by_image(const std::vector<GroundTruthInstance>& gts) {
        std::unordered_map<std::string, std::vector<std::size_t>> by_image;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            by_image[gts[g].image_id].push_back(g);
        }
        return by_image;
    }

    inline std::vector<std::size_t> detection_order(const std::vector<Detection>& dets) {
        std::vector<std::size_t> order(dets.size());
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(),
                  [&](std::size_t a, std::size_t b) { return detection_before(dets[a], dets[b]); });
        return order;
    }
} // namespace detail

/// Greedy matching in descending score order. Each detection takes the
/// highest-IoU ground truth that is still unmatched, in the same image and
/// (when class aware) of the same class; it is a true positive when that IoU
/// reaches `iou_thr`. Every ground truth is matched at most once.
inline MatchResult match_detections(const std::vector<Detection>& dets, const std::vector<GroundTruthInstance>& gts,
                                    double iou_thr, const MatchOptions& opts = {}) {
    MatchResult r;
    r.order = detail::detection_order(dets);
    r.labels.assign(dets.size(), MatchLabel::FalsePositive);
    r.matched_gt.assign(dets.size(), -1);
    r.gt_matched.assign(gts.size(), 0);
    const auto by_image = detail::index_by_image(gts);

    for (std::size_t d : r.order) {
        const Detection& det = dets[d];
        const auto it = by_image.find(det.image_id);
        if (it == by_image.end()) {
            continue;
        }
        double best = -1.0;
        long best_g = -1;
        double best_difficult = -1.0;
        for (std::size_t g : it->second) {
            const auto& gt = gts[g];
            if (opts.class_aware && gt.class_id != det.class_id) {
                continue;
            }
            const double v = iou(det.box, gt.box);
            if (opts.ignore_difficult && gt.difficult) {
                best_difficult = std::max(best_difficult, v);
                continue;
            }
            if (!r.gt_matched[g] && v > best) {
                best = v;
                best_g = static_cast<long>(g);
            }
        }
        if (best_g >= 0 && best >= iou_thr) {
            r.labels[d] = MatchLabel::TruePositive;
            r.matched_gt[d] = best_g;
            r.gt_matched[static_cast<std::size_t>(best_g)] = 1;
        } else if (best_difficult >= iou_thr) {
            r.labels[d] = MatchLabel::Ignored;
        }
    }
    return r;
}

// ---------------------------------------------------------------------------
// Scalar metrics
// ---------------------------------------------------------------------------

struct PrecisionRecallF1 {
    double precision{0.0};
    double recall{0.0};
    double f1{0.0};
};

/// Harmonic mean of precision and recall; 0 when both are 0.
inline double f1_score(double precision, double recall) noexcept {
    const double s = precision + recall;
    return s > 0.0 ? 2.0 * precision * recall / s : 0.0;
}

inline PrecisionRecallF1 precision_recall_f1(std::size_t tp, std::size_t fp, std::size_t fn) noexcept {
    PrecisionRecallF1 out;
    const auto t = static_cast<double>(tp);
    if (tp + fp > 0) {
        out.precision = t / static_cast<double>(tp + fp);
    }
    if (tp + fn > 0) {
        out.recall = t / static_cast<double>(tp + fn);
    }
    out.f1 = f1_score(out.precision, out.recall);
    return out;
}

enum class ApInterpolation {
    Coco101,  // recall grid 0, 0.01, ..., 1
    Voc11,    // recall grid 0, 0.1, ..., 1
};

/// Interpolated average precision of one class. `is_tp` lists the class's
/// scored detections in descending score order (ignored ones removed). The
/// precision at grid recall r is the best precision reached at any cut-off
/// whose recall is at least r, or 0 if recall never gets there; AP is the mean
/// over the grid. Returns nullopt when the class has no ground truth.
inline std::optional<double> average_precision(std::span<const char> is_tp, std::size_t num_gt,
                                               ApInterpolation mode = ApInterpolation::Coco101) {
    if (num_gt == 0) {
        return std::nullopt;
    }
    const std::size_t n = is_tp.size();
    std::vector<std::size_t> cum_tp(n);
    std::vector<double> precision(n);
    std::size_t tp = 0;
    for (std::size_t k = 0; k < n; ++k) {
        tp += is_tp[k] ? 1 : 0;
        cum_tp[k] = tp;
        precision[k] = static_cast<double>(tp) / static_cast<double>(k + 1);
    }
    // running maximum from the right
    for (std::size_t k = n; k-- > 1;) {
        precision[k - 1] = std::max(precision[k - 1], precision[k]);
    }
    const std::size_t steps = mode == ApInterpolation::Coco101 ? 100 : 10;
    double sum = 0.0;
    std::size_t k = 0;
    for (std::size_t s = 0; s <= steps; ++s) {
        // recall >= s/steps  <=>  cum_tp * steps >= s * num_gt, exact in integers
        while (k < n && cum_tp[k] * steps < s * num_gt) {
            ++k;
        }
        if (k == n) {
            break;
        }
        sum += precision[k];
    }
    return sum / static_cast<double>(steps + 1);
}

inline std::vector<double> coco_iou_thresholds() {
    std::vector<double> t;
    for (int k = 0; k < 10; ++k) {
        t.push_back(static_cast<double>(50 + 5 * k) / 100.0);
    }
    return t;
}

// ---------------------------------------------------------------------------
// Confusion matrix
// ---------------------------------------------------------------------------

/// (C + 1) x (C + 1) counts. Rows are ground-truth classes, columns predicted
/// classes; index C is background in both directions.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(std::size_t num_classes = 0)
        : classes_(num_classes), counts_((num_classes + 1) * (num_classes + 1), 0) {}

    std::size_t num_classes() const noexcept { return classes_; }
    std::size_t background() const noexcept { return classes_; }
    std::size_t at(std::size_t gt_row, std::size_t pred_col) const { return counts_.at(gt_row * (classes_ + 1) + pred_col); }
    void add(std::size_t gt_row, std::size_t pred_col) { ++counts_.at(gt_row * (classes_ + 1) + pred_col); }

    std::size_t total() const noexcept { return std::accumulate(counts_.begin(), counts_.end(), std::size_t{0}); }

    friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

private:
    std::size_t classes_;
    std::vector<std::size_t> counts_;
};

struct ConfusionOptions {
    bool class_agnostic{true};
    bool ignore_difficult{true};
};

/// Matched pairs count at (gt class, predicted class), missed ground truths at
/// (gt class, background), unmatched detections at (background, predicted
/// class). Only detections scoring at least `conf_thr` take part.
inline ConfusionMatrix confusion_matrix(const std::vector<Detection>& dets, const std::vector<GroundTruthInstance>& gts,
                                        double iou_thr, double conf_thr, std::size_t num_classes,
                                        const ConfusionOptions& opts = {}) {
    auto check = [num_classes](int c) {
        detail::require(c >= 0 && static_cast<std::size_t>(c) < num_classes,
                        "confusion_matrix: class id " + std::to_string(c) + " outside [0, " +
                            std::to_string(num_classes) + ")");
    };
    std::vector<Detection> kept;
    for (const auto& d : dets) {
        if (d.score >= conf_thr) {
            check(d.class_id);
            kept.push_back(d);
        }
    }
    for (const auto& g : gts) {
        check(g.class_id);
    }
    const MatchResult m =
        match_detections(kept, gts, iou_thr, MatchOptions{!opts.class_agnostic, opts.ignore_difficult});

    ConfusionMatrix cm(num_classes);
    for (std::size_t d = 0; d < kept.size(); ++d) {
        const auto pred = static_cast<std::size_t>(kept[d].class_id);
        switch (m.labels[d]) {
        case MatchLabel::TruePositive:
            cm.add(static_cast<std::size_t>(gts[static_cast<std::size_t>(m.matched_gt[d])].class_id), pred);
            break;
        case MatchLabel::FalsePositive:
            cm.add(cm.background(), pred);
            break;
        case MatchLabel::Ignored:
            break;
        }
    }
    for (std::size_t g = 0; g < gts.size(); ++g) {
        if (!m.gt_matched[g] && !(opts.ignore_difficult && gts[g].difficult)) {
            cm.add(static_cast<std::size_t>(gts[g].class_id), cm.background());
        }
    }
    return cm;
}

// ---------------------------------------------------------------------------
// Full report
// ---------------------------------------------------------------------------

enum class Averaging { Macro, Micro };

struct EvalConfig {
    std::vector<double> iou_thresholds = coco_iou_thresholds();
    ApInterpolation interpolation{ApInterpolation::Coco101};
    // Precision / recall / F1 and the confusion matrix use detections at or
    // above this score, matched at IoU 0.5.
    double pr_conf_threshold{0.25};
    Averaging averaging{Averaging::Macro};
    bool ignore_difficult{true};
    bool confusion_class_agnostic{true};
    std::size_t num_classes{0};  // 0 = infer from the data
};

struct ClassMetrics {
    int class_id{0};
    std::size_t num_gt{0};
    std::size_t tp{0};
    std::size_t fp{0};
    double precision{0.0};
    double recall{0.0};
    double f1{0.0};
    double ap50{0.0};
    double ap50_95{0.0};
};

struct AggregateMetrics {
    double precision{0.0};
    double recall{0.0};
    double f1{0.0};
    double map50{0.0};
    double map50_95{0.0};
};

struct EvalReport {
    std::map<int, ClassMetrics> per_class;  // classes with at least one ground truth
    AggregateMetrics aggregate;
    std::vector<double> iou_thresholds;
    std::vector<double> map_per_threshold;
    ConfusionMatrix confusion;
};

namespace detail {
    inline std::map<int, std::size_t> gt_counts(const std::vector<GroundTruthInstance>& gts, bool ignore_difficult) {
        std::map<int, std::size_t> counts;
        for (const auto& g : gts) {
            if (!(ignore_difficult && g.difficult)) {
                ++counts[g.class_id];
            }
        }
        return counts;
    }

    // Per-class AP at one threshold, for every class that has ground truth.
    inline std::map<int, double> class_aps(const std::vector<Detection>& dets, const std::vector<GroundTruthInstance>& gts,
                                           const std::map<int, std::size_t>& counts, double thr,
                                           ApInterpolation interp, bool ignore_difficult) {
        const MatchResult m = match_detections(dets, gts, thr, MatchOptions{true, ignore_difficult});
        std::map<int, std::vector<char>> flags;
        for (std::size_t d : m.order) {
            if (m.labels[d] == MatchLabel::Ignored) {
                continue;
            }
            flags[dets[d].class_id].push_back(m.labels[d] == MatchLabel::TruePositive ? 1 : 0);
        }
        std::map<int, double> out;
        for (const auto& [cls, n] : counts) {
            const auto it = flags.find(cls);
            const std::span<const char> f = it == flags.end() ? std::span<const char>{} : std::span<const char>(it->second);
            out[cls] = *average_precision(f, n, interp);
        }
        return out;
    }
} // namespace detail

/// Mean over thresholds of the class-mean AP. Classes without ground truth are
/// left out of the class mean; with no ground truth at all the result is 0.
inline double map_range(const std::vector<Detection>& dets, const std::vector<GroundTruthInstance>& gts,
                        const std::vector<double>& thresholds, ApInterpolation interp = ApInterpolation::Coco101,
                        bool ignore_difficult = true) {
    detail::require(!thresholds.empty(), "map_range: no IoU thresholds");
    const auto counts = detail::gt_counts(gts, ignore_difficult);
    if (counts.empty()) {
        return 0.0;
    }
    double total = 0.0;
    for (double t : thresholds) {
        const auto aps = detail::class_aps(dets, gts, counts, t, interp, ignore_difficult);
        double s = 0.0;
        for (const auto& [cls, ap] : aps) {
            s += ap;
        }
        total += s / static_cast<double>(aps.size());
    }
    return total / static_cast<double>(thresholds.size());
}

inline EvalReport evaluate(const std::vector<Detection>& dets, const std::vector<GroundTruthInstance>& gts,
                           const EvalConfig& cfg = {}) {
    detail::require(!cfg.iou_thresholds.empty(), "evaluate: no IoU thresholds");
    EvalReport report;
    report.iou_thresholds = cfg.iou_thresholds;

    std::size_t num_classes = cfg.num_classes;
    if (num_classes == 0) {
        int max_id = -1;
        for (const auto& d : dets) {
            max_id = std::max(max_id, d.class_id);
        }
        for (const auto& g : gts) {
            max_id = std::max(max_id, g.class_id);
        }
        num_classes = static_cast<std::size_t>(max_id + 1);
    }

    const auto counts = detail::gt_counts(gts, cfg.ignore_difficult);
    for (const auto& [cls, n] : counts) {
        report.per_class[cls] = ClassMetrics{cls, n};
    }

    // AP at every threshold, plus AP50 for the headline column.
    for (double t : cfg.iou_thresholds) {
        const auto aps = detail::class_aps(dets, gts, counts, t, cfg.interpolation, cfg.ignore_difficult);
        double s = 0.0;
        for (const auto& [cls, ap] : aps) {
            report.per_class[cls].ap50_95 += ap / static_cast<double>(cfg.iou_thresholds.size());
            s += ap;
        }
        report.map_per_threshold.push_back(aps.empty() ? 0.0 : s / static_cast<double>(aps.size()));
    }
    for (const auto& [cls, ap] : detail::class_aps(dets, gts, counts, 0.5, cfg.interpolation, cfg.ignore_difficult)) {
        report.per_class[cls].ap50 = ap;
    }

    // Operating-point counts at IoU 0.5.
    std::vector<Detection> confident;
    for (const auto& d : dets) {
        if (d.score >= cfg.pr_conf_threshold) {
            confident.push_back(d);
        }
    }
    const MatchResult m = match_detections(confident, gts, 0.5, MatchOptions{true, cfg.ignore_difficult});
    for (std::size_t d = 0; d < confident.size(); ++d) {
        auto it = report.per_class.find(confident[d].class_id);
        if (it == report.per_class.end()) {
            continue;
        }
        if (m.labels[d] == MatchLabel::TruePositive) {
            ++it->second.tp;
        } else if (m.labels[d] == MatchLabel::FalsePositive) {
            ++it->second.fp;
        }
    }

    std::size_t sum_tp = 0, sum_fp = 0, sum_gt = 0;
    for (auto& [cls, cm] : report.per_class) {
        const auto prf = precision_recall_f1(cm.tp, cm.fp, cm.num_gt - cm.tp);
        cm.precision = prf.precision;
        cm.recall = prf.recall;
        cm.f1 = prf.f1;
        sum_tp += cm.tp;
        sum_fp += cm.fp;
        sum_gt += cm.num_gt;
    }

    auto& agg = report.aggregate;
    if (!report.per_class.empty()) {
        const auto n = static_cast<double>(report.per_class.size());
        for (const auto& [cls, cm] : report.per_class) {
            agg.map50 += cm.ap50 / n;
            agg.map50_95 += cm.ap50_95 / n;
            if (cfg.averaging == Averaging::Macro) {
                agg.precision += cm.precision / n;
                agg.recall += cm.recall / n;
            }
        }
        if (cfg.averaging == Averaging::Micro) {
            const auto prf = precision_recall_f1(sum_tp, sum_fp, sum_gt - sum_tp);
            agg.precision = prf.precision;
            agg.recall = prf.recall;
        }
        agg.f1 = f1_score(agg.precision, agg.recall);
    }

    report.confusion = confusion_matrix(dets, gts, 0.5, cfg.pr_conf_threshold, num_classes,
                                        ConfusionOptions{cfg.confusion_class_agnostic, cfg.ignore_difficult});
    return report;
}

// ---------------------------------------------------------------------------
// Pareto analysis
// ---------------------------------------------------------------------------

struct ModelRecord {
    std::string name;
    double accuracy{0.0};
    std::map<std::string, double> costs;  // e.g. gpu_latency_ms, params_m

    double cost(const std::string& key) const {
        const auto it = costs.find(key);
        detail::require(it != costs.end(), "model '" + name + "' has no cost '" + key + "'");
        return it->second;
    }
};

struct ParetoPoint {
    std::string name;
    double accuracy{0.0};
    double cost{0.0};
    bool on_frontier{false};
    std::optional<std::string> dominated_by;  // first dominating model, input order
};

/// `a` dominates `b`: at least as accurate and no more costly, strictly better
/// on one axis.
inline bool dominates(double acc_a, double cost_a, double acc_b, double cost_b) noexcept {
    return acc_a >= acc_b && cost_a <= cost_b && (acc_a > acc_b || cost_a < cost_b);
}

inline std::vector<ParetoPoint> pareto_analysis(const std::vector<ModelRecord>& models, const std::string& cost_key) {
    std::vector<ParetoPoint> pts;
    pts.reserve(models.size());
    for (const auto& m : models) {
        const double c = m.cost(cost_key);
        detail::require(std::isfinite(m.accuracy) && std::isfinite(c), "model '" + m.name + "': non-finite value");
        pts.push_back(ParetoPoint{m.name, m.accuracy, c, true, std::nullopt});
    }
    for (auto& p : pts) {
        for (const auto& q : pts) {
            if (dominates(q.accuracy, q.cost, p.accuracy, p.cost)) {
                p.on_frontier = false;
                p.dominated_by = q.name;
                break;
            }
        }
    }
    return pts;
}

/// Names of the non-dominated models, in input order. Exact ties on both axes
/// keep both models.
inline std::vector<std::string> pareto_frontier(const std::vector<ModelRecord>& models, const std::string& cost_key) {
    std::vector<std::string> out;
    for (const auto& p : pareto_analysis(models, cost_key)) {
        if (p.on_frontier) {
            out.push_back(p.name);
        }
    }
    return out;
}

} // namespace detkit
