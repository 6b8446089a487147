#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "error.hpp"
#include "geometry.hpp"

namespace detkit {

struct Detection {
    Box box;
    int class_id{0};
    double score{0.0};
    std::string image_id;

    friend bool operator==(const Detection&, const Detection&) = default;
};

/// Deterministic total order: score descending, then class id, box corners and
/// image id ascending.
inline bool detection_before(const Detection& a, const Detection& b) noexcept {
    if (a.score != b.score) {
        return a.score > b.score;
    }
    if (a.class_id != b.class_id) {
        return a.class_id < b.class_id;
    }
    if (a.box != b.box) {
        return lex_less(a.box, b.box);
    }
    return a.image_id < b.image_id;
}

enum class PipelineMode { Nms, EndToEnd };

inline const char* to_string(PipelineMode m) noexcept {
    return m == PipelineMode::Nms ? "nms" : "e2e";
}

inline constexpr std::size_t kUnlimitedDetections = std::numeric_limits<std::size_t>::max();

struct PipelineConfig {
    PipelineMode mode{PipelineMode::Nms};
    double iou_threshold{0.7};
    double conf_threshold{0.001};
    bool class_aware{true};
    std::size_t max_detections{300};

    // Low confidence floor, as used when scoring against ground truth.
    static PipelineConfig evaluation(PipelineMode mode = PipelineMode::Nms) {
        PipelineConfig c;
        c.mode = mode;
        return c;
    }

    static PipelineConfig deployment(PipelineMode mode = PipelineMode::Nms) {
        PipelineConfig c;
        c.mode = mode;
        c.conf_threshold = 0.25;
        return c;
    }

    void validate() const {
        if (mode == PipelineMode::Nms) {
            detail::require(iou_threshold > 0.0 && iou_threshold < 1.0,
                            "PipelineConfig: iou_threshold must be in (0, 1)");
        }
        detail::require(conf_threshold >= 0.0 && conf_threshold <= 1.0,
                        "PipelineConfig: conf_threshold must be in [0, 1]");
    }
};

namespace detail {

    inline std::vector<std::size_t> filtered_order(const std::vector<Detection>& dets, double conf) {
        std::vector<std::size_t> idx;
        idx.reserve(dets.size());
        for (std::size_t i = 0; i < dets.size(); ++i) {
            if (dets[i].score >= conf) {
                idx.push_back(i);
            }
        }
        std::sort(idx.begin(), idx.end(),
                  [&](std::size_t a, std::size_t b) { return detection_before(dets[a], dets[b]); });
        return idx;
    }

    inline std::vector<Detection> gather(const std::vector<Detection>& dets, const std::vector<std::size_t>& idx,
                                         std::size_t limit) {
        const std::size_t n = std::min(idx.size(), limit);
        std::vector<Detection> out;
        out.reserve(n);
        for (std::size_t k = 0; k < n; ++k) {
            out.push_back(dets[idx[k]]);
        }
        return out;
    }

    inline std::vector<Detection> greedy_nms(const std::vector<Detection>& dets, const std::vector<std::size_t>& order,
                                             const PipelineConfig& cfg) {
        std::vector<char> removed(order.size(), 0);
        std::vector<std::size_t> kept;
        for (std::size_t a = 0; a < order.size() && kept.size() < cfg.max_detections; ++a) {
            if (removed[a]) {
                continue;
            }
            const Detection& m = dets[order[a]];
            kept.push_back(order[a]);
            for (std::size_t b = a + 1; b < order.size(); ++b) {
                if (removed[b]) {
                    continue;
                }
                const Detection& d = dets[order[b]];
                if (cfg.class_aware && d.class_id != m.class_id) {
                    continue;
                }
                if (iou(m.box, d.box) >= cfg.iou_threshold) {
                    removed[b] = 1;
                }
            }
        }
        return gather(dets, kept, kept.size());
    }

} // namespace detail

/// Greedy non-maximum suppression. Repeatedly keeps the best remaining
/// detection and drops every remaining one (of the same class, when class
/// aware) overlapping it with IoU >= iou_threshold. Survivors come back in
/// detection_before order, at most max_detections of them.
inline std::vector<Detection> nms(const std::vector<Detection>& dets, const PipelineConfig& cfg) {
    cfg.validate();
    return detail::greedy_nms(dets, detail::filtered_order(dets, cfg.conf_threshold), cfg);
}

/// NMS-free output stage: confidence filter, sort, truncate. Nothing is
/// suppressed.
inline std::vector<Detection> end_to_end_filter(const std::vector<Detection>& dets, const PipelineConfig& cfg) {
    cfg.validate();
    return detail::gather(dets, detail::filtered_order(dets, cfg.conf_threshold), cfg.max_detections);
}

inline std::vector<Detection> run_pipeline(const std::vector<Detection>& dets, const PipelineConfig& cfg) {
    cfg.validate();
    const auto order = detail::filtered_order(dets, cfg.conf_threshold);
    if (cfg.mode == PipelineMode::Nms) {
        return detail::greedy_nms(dets, order, cfg);
    }
    return detail::gather(dets, order, cfg.max_detections);
}

/// Applies run_pipeline to each image separately and concatenates the results
/// in image-id order.
inline std::vector<Detection> run_pipeline_per_image(const std::vector<Detection>& dets, const PipelineConfig& cfg) {
    std::vector<std::size_t> idx(dets.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return dets[a].image_id < dets[b].image_id; });
    std::vector<Detection> out;
    std::size_t i = 0;
    while (i < idx.size()) {
        std::size_t j = i;
        std::vector<Detection> group;
        while (j < idx.size() && dets[idx[j]].image_id == dets[idx[i]].image_id) {
            group.push_back(dets[idx[j]]);
            ++j;
        }
        auto kept = run_pipeline(group, cfg);
        out.insert(out.end(), std::make_move_iterator(kept.begin()), std::make_move_iterator(kept.end()));
        i = j;
    }
    return out;
}

} // namespace detkit
