#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"
#include "geometry.hpp"

namespace detkit {

/// Scale-aware IoU threshold parameters. `ratio_scale` multiplies the
/// object/image area ratio inside the exponential; 1 is the literal formula.
struct StalConfig {
    double tau_base{0.5};
    double alpha{0.5};
    double ratio_scale{1.0};

    void validate() const {
        detail::require(tau_base > 0.0 && tau_base <= 1.0, "StalConfig: tau_base must be in (0, 1]");
        detail::require(alpha >= 0.0 && alpha < 1.0, "StalConfig: alpha must be in [0, 1)");
        detail::require(ratio_scale > 0.0, "StalConfig: ratio_scale must be positive");
    }
};

/// tau_base * (1 - alpha * exp(-area_obj / area_img)). Object area is clamped
/// to [0, area_img].
inline double stal_threshold(double area_obj, double area_img, const StalConfig& cfg) {
    cfg.validate();
    detail::require(area_img > 0.0, "stal_threshold: image area must be positive");
    const double ratio = std::clamp(area_obj, 0.0, area_img) / area_img;
    return cfg.tau_base * (1.0 - cfg.alpha * std::exp(-cfg.ratio_scale * ratio));
}

enum class AssignmentMode { OneToMany, OneToOne };

struct AssignmentResult {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (candidate, gt), candidate-sorted
    std::vector<std::size_t> unassigned_gt;                   // ascending
    AssignmentMode mode{AssignmentMode::OneToMany};

    friend bool operator==(const AssignmentResult&, const AssignmentResult&) = default;
};

/// Per-ground-truth IoU threshold.
using ThresholdFn = std::function<double(const Box& gt)>;

inline ThresholdFn fixed_threshold(double tau) {
    return [tau](const Box&) { return tau; };
}

inline ThresholdFn stal_threshold_fn(const StalConfig& cfg, double area_img) {
    cfg.validate();
    detail::require(area_img > 0.0, "stal_threshold_fn: image area must be positive");
    return [cfg, area_img](const Box& gt) { return stal_threshold(gt.area(), area_img, cfg); };
}

namespace detail {
    inline std::vector<std::size_t> unassigned(std::size_t num_gt,
                                               const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
        std::vector<char> hit(num_gt, 0);
        for (const auto& [c, g] : pairs) {
            hit[g] = 1;
        }
        std::vector<std::size_t> out;
        for (std::size_t g = 0; g < num_gt; ++g) {
            if (!hit[g]) {
                out.push_back(g);
            }
        }
        return out;
    }
} // namespace detail

/// Multi-positive assignment: every candidate goes to its highest-IoU ground
/// truth (lowest index on ties) when that IoU reaches the ground truth's
/// threshold. A ground truth may collect many candidates.
inline AssignmentResult assign_one_to_many(const std::vector<Box>& candidates, const std::vector<Box>& gts,
                                           const ThresholdFn& threshold) {
    AssignmentResult out;
    out.mode = AssignmentMode::OneToMany;
    std::vector<double> tau(gts.size());
    for (std::size_t g = 0; g < gts.size(); ++g) {
        tau[g] = threshold(gts[g]);
    }
    for (std::size_t c = 0; c < candidates.size(); ++c) {
        double best = -1.0;
        std::size_t best_g = 0;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            const double v = iou(candidates[c], gts[g]);
            if (v > best) {
                best = v;
                best_g = g;
            }
        }
        if (best > 0.0 && best >= tau[best_g]) {
            out.pairs.emplace_back(c, best_g);
        }
    }
    out.unassigned_gt = detail::unassigned(gts.size(), out.pairs);
    return out;
}

struct ScoredBox {
    Box box;
    double score{0.0};
};

enum class MatchingMethod { Hungarian, Greedy };

namespace detail {

    // Rectangular assignment minimising total cost (rows <= cols), O(rows^2 * cols).
    // Returns, for each row, the assigned column.
    inline std::vector<std::size_t> hungarian_min_cost(const std::vector<std::vector<double>>& cost,
                                                       std::size_t rows, std::size_t cols) {
        constexpr double inf = std::numeric_limits<double>::infinity();
        // 1-based potentials; column 0 is a sentinel.
        std::vector<double> u(rows + 1, 0.0), v(cols + 1, 0.0);
        std::vector<std::size_t> p(cols + 1, 0), way(cols + 1, 0);
        for (std::size_t i = 1; i <= rows; ++i) {
            p[0] = i;
            std::size_t j0 = 0;
            std::vector<double> minv(cols + 1, inf);
            std::vector<char> used(cols + 1, 0);
            do {
                used[j0] = 1;
                const std::size_t i0 = p[j0];
                double delta = inf;
                std::size_t j1 = 0;
                for (std::size_t j = 1; j <= cols; ++j) {
                    if (used[j]) {
                        continue;
                    }
                    const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if (cur < minv[j]) {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if (minv[j] < delta) {
                        delta = minv[j];
                        j1 = j;
                    }
                }
                for (std::size_t j = 0; j <= cols; ++j) {
                    if (used[j]) {
                        u[p[j]] += delta;
                        v[j] -= delta;
                    } else {
                        minv[j] -= delta;
                    }
                }
                j0 = j1;
            } while (p[j0] != 0);
            do {
                const std::size_t j1 = way[j0];
                p[j0] = p[j1];
                j0 = j1;
            } while (j0 != 0);
        }
        std::vector<std::size_t> row_to_col(rows, 0);
        for (std::size_t j = 1; j <= cols; ++j) {
            if (p[j] != 0) {
                row_to_col[p[j] - 1] = j - 1;
            }
        }
        return row_to_col;
    }

} // namespace detail

/// One-to-one matching between candidates and ground truths. Pairs below
/// `min_iou` are never formed. Hungarian maximises the summed IoU of the
/// formed pairs; Greedy lets candidates pick in descending score order.
inline AssignmentResult assign_one_to_one(const std::vector<ScoredBox>& candidates, const std::vector<Box>& gts,
                                          double min_iou, MatchingMethod method = MatchingMethod::Hungarian) {
    for (const auto& c : candidates) {
        detail::require(std::isfinite(c.score), "assign_one_to_one: non-finite candidate score");
    }
    AssignmentResult out;
    out.mode = AssignmentMode::OneToOne;
    const std::size_t nc = candidates.size();
    const std::size_t ng = gts.size();
    if (nc == 0 || ng == 0) {
        out.unassigned_gt = detail::unassigned(ng, out.pairs);
        return out;
    }

    // Clipped weights: pairs under min_iou are worth nothing, so leaving them
    // unmatched is never worse.
    std::vector<std::vector<double>> weight(nc, std::vector<double>(ng, 0.0));
    for (std::size_t c = 0; c < nc; ++c) {
        for (std::size_t g = 0; g < ng; ++g) {
            const double v = iou(candidates[c].box, gts[g]);
            weight[c][g] = (v > 0.0 && v >= min_iou) ? v : 0.0;
        }
    }

    if (method == MatchingMethod::Hungarian) {
        const bool transpose = nc > ng;
        const std::size_t rows = transpose ? ng : nc;
        const std::size_t cols = transpose ? nc : ng;
        std::vector<std::vector<double>> cost(rows, std::vector<double>(cols));
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t k = 0; k < cols; ++k) {
                cost[r][k] = -(transpose ? weight[k][r] : weight[r][k]);
            }
        }
        const auto match = detail::hungarian_min_cost(cost, rows, cols);
        for (std::size_t r = 0; r < rows; ++r) {
            const std::size_t c = transpose ? match[r] : r;
            const std::size_t g = transpose ? r : match[r];
            if (weight[c][g] > 0.0) {
                out.pairs.emplace_back(c, g);
            }
        }
    } else {
        std::vector<std::size_t> order(nc);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return candidates[a].score > candidates[b].score;
        });
        std::vector<char> taken(ng, 0);
        for (std::size_t c : order) {
            double best = 0.0;
            std::size_t best_g = ng;
            for (std::size_t g = 0; g < ng; ++g) {
                if (!taken[g] && weight[c][g] > best) {
                    best = weight[c][g];
                    best_g = g;
                }
            }
            if (best_g != ng) {
                taken[best_g] = 1;
                out.pairs.emplace_back(c, best_g);
            }
        }
    }
    std::sort(out.pairs.begin(), out.pairs.end());
    out.unassigned_gt = detail::unassigned(ng, out.pairs);
    return out;
}

} // namespace detkit
