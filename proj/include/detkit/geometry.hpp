#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <tuple>

namespace detkit {

/// Axis-aligned box in corner form. Coordinates share one unit, either pixels
/// or normalised [0, 1]; nothing here cares which.
struct Box {
    double x_min{0.0};
    double y_min{0.0};
    double x_max{0.0};
    double y_max{0.0};

    constexpr double width() const noexcept { return x_max - x_min; }
    constexpr double height() const noexcept { return y_max - y_min; }
    constexpr double area() const noexcept { return width() * height(); }
    constexpr double center_x() const noexcept { return 0.5 * (x_min + x_max); }
    constexpr double center_y() const noexcept { return 0.5 * (y_min + y_max); }

    bool valid() const noexcept {
        return std::isfinite(x_min) && std::isfinite(y_min) && std::isfinite(x_max) &&
               std::isfinite(y_max) && x_min <= x_max && y_min <= y_max;
    }

    static constexpr Box from_center(double cx, double cy, double w, double h) noexcept {
        return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
    }

    constexpr Box translated(double dx, double dy) const noexcept {
        return {x_min + dx, y_min + dy, x_max + dx, y_max + dy};
    }

    constexpr Box scaled(double k) const noexcept {
        return {x_min * k, y_min * k, x_max * k, y_max * k};
    }

    // Clamp into [0, w] x [0, h].
    Box clamped(double w, double h) const noexcept {
        return {std::clamp(x_min, 0.0, w), std::clamp(y_min, 0.0, h),
                std::clamp(x_max, 0.0, w), std::clamp(y_max, 0.0, h)};
    }

    friend constexpr bool operator==(const Box&, const Box&) = default;

    // Lexicographic on (x_min, y_min, x_max, y_max); used for deterministic
    // tie-breaking only.
    friend constexpr bool lex_less(const Box& a, const Box& b) noexcept {
        return std::tie(a.x_min, a.y_min, a.x_max, a.y_max) <
               std::tie(b.x_min, b.y_min, b.x_max, b.y_max);
    }
};

inline double intersection_area(const Box& a, const Box& b) noexcept {
    const double w = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
    const double h = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
    return (w > 0.0 && h > 0.0) ? w * h : 0.0;
}

/// Intersection over union. Two zero-area boxes have zero union and yield 0.
inline double iou(const Box& a, const Box& b) noexcept {
    const double inter = intersection_area(a, b);
    const double uni = a.area() + b.area() - inter;
    if (!(uni > 0.0)) {
        return 0.0;
    }
    return std::clamp(inter / uni, 0.0, 1.0);
}

/// Every term of the complete-IoU box loss.
struct CiouBreakdown {
    double iou{0.0};
    double center_dist_sq{0.0};     // squared distance between box centres
    double enclosing_diag_sq{0.0};  // squared diagonal of the smallest enclosing box
    double aspect_term{0.0};        // v
    double aspect_weight{0.0};      // alpha
    double loss{0.0};

    double distance_penalty() const noexcept {
        return enclosing_diag_sq > 0.0 ? center_dist_sq / enclosing_diag_sq : 0.0;
    }
};

inline constexpr double kCiouEps = 1e-9;

/// Complete-IoU loss of `pred` against `gt`:
///
///   loss = 1 - IoU + rho^2 / c^2 + alpha * v
///   v     = 4 / pi^2 * (atan(w_gt / h_gt) - atan(w / h))^2
///   alpha = v / ((1 - IoU) + v + eps)
///
/// `gt` must have positive area. Degenerate predictions use a minimum side of
/// kCiouEps inside the aspect term. A zero-size enclosing box contributes no
/// distance penalty.
inline CiouBreakdown ciou_loss(const Box& pred, const Box& gt) noexcept {
    CiouBreakdown out;
    out.iou = iou(pred, gt);

    const double dx = pred.center_x() - gt.center_x();
    const double dy = pred.center_y() - gt.center_y();
    out.center_dist_sq = dx * dx + dy * dy;

    const double ew = std::max(pred.x_max, gt.x_max) - std::min(pred.x_min, gt.x_min);
    const double eh = std::max(pred.y_max, gt.y_max) - std::min(pred.y_min, gt.y_min);
    out.enclosing_diag_sq = ew * ew + eh * eh;

    const double wp = std::max(pred.width(), kCiouEps);
    const double hp = std::max(pred.height(), kCiouEps);
    const double wg = std::max(gt.width(), kCiouEps);
    const double hg = std::max(gt.height(), kCiouEps);
    const double da = std::atan(wg / hg) - std::atan(wp / hp);
    out.aspect_term = 4.0 / (std::numbers::pi * std::numbers::pi) * da * da;
    out.aspect_weight = out.aspect_term / ((1.0 - out.iou) + out.aspect_term + kCiouEps);

    out.loss = 1.0 - out.iou + out.distance_penalty() + out.aspect_weight * out.aspect_term;
    return out;
}

} // namespace detkit
