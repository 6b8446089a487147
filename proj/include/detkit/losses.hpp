#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <variant>
#include <vector>

#include "error.hpp"
#include "matrix.hpp"

namespace detkit {

// ---------------------------------------------------------------------------
// Classification
// ---------------------------------------------------------------------------

/// Multi-label targets and predicted probabilities, one row per instance and
/// one column per class.
struct ClassificationBatch {
    Matrix targets;      // entries in {0, 1}
    Matrix predictions;  // probabilities, clamped before use
    std::size_t num_positives{1};
};

inline constexpr double kBceClamp = 1e-7;

/// Binary cross-entropy summed over every (instance, class) cell and divided by
/// the positive count:
///
///   -(1/N_pos) * sum_i sum_c [ y log p + (1 - y) log(1 - p) ]
///
/// Predictions are clamped to [1e-7, 1 - 1e-7].
inline double bce_loss(const ClassificationBatch& batch) {
    detail::require(batch.targets.same_shape(batch.predictions),
                    "bce_loss: targets " + batch.targets.shape_string() + " vs predictions " +
                        batch.predictions.shape_string());
    detail::require(batch.num_positives >= 1, "bce_loss: num_positives must be >= 1");
    const auto y = batch.targets.data();
    const auto p = batch.predictions.data();
    double sum = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double q = std::clamp(p[i], kBceClamp, 1.0 - kBceClamp);
        sum += y[i] * std::log(q) + (1.0 - y[i]) * std::log1p(-q);
    }
    return -sum / static_cast<double>(batch.num_positives);
}

// ---------------------------------------------------------------------------
// Distributional box sides
// ---------------------------------------------------------------------------

/// Logits over the bins 0..n of one box side (n + 1 entries).
class DflDistribution {
public:
    explicit DflDistribution(std::vector<double> logits) : logits_(std::move(logits)) {
        detail::require(logits_.size() >= 2, "DflDistribution: need at least two bins");
        for (double w : logits_) {
            detail::require(std::isfinite(w), "DflDistribution: non-finite logit");
        }
    }

    static DflDistribution uniform(std::size_t n) {
        return DflDistribution(std::vector<double>(n + 1, 0.0));
    }

    // All logits zero except `bin`, which gets `peak`.
    static DflDistribution peaked(std::size_t n, std::size_t bin, double peak) {
        std::vector<double> w(n + 1, 0.0);
        w.at(bin) = peak;
        return DflDistribution(std::move(w));
    }

    std::size_t max_bin() const noexcept { return logits_.size() - 1; }
    const std::vector<double>& logits() const noexcept { return logits_; }

    std::vector<double> log_softmax() const {
        const double m = *std::max_element(logits_.begin(), logits_.end());
        double z = 0.0;
        for (double w : logits_) {
            z += std::exp(w - m);
        }
        const double lz = m + std::log(z);
        std::vector<double> out(logits_.size());
        std::transform(logits_.begin(), logits_.end(), out.begin(),
                       [lz](double w) { return w - lz; });
        return out;
    }

    std::vector<double> softmax() const {
        auto p = log_softmax();
        for (double& v : p) {
            v = std::exp(v);
        }
        return p;
    }

private:
    std::vector<double> logits_;
};

/// Softmax expectation over bin indices, in [0, n].
inline double dfl_decode(const DflDistribution& d) {
    const auto p = d.softmax();
    double e = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        e += static_cast<double>(i) * p[i];
    }
    return std::clamp(e, 0.0, static_cast<double>(d.max_bin()));
}

/// Two-bin cross-entropy: the target is split linearly between the bins that
/// bracket it, each weighted by its proximity. Integer targets reduce to the
/// single-bin negative log-likelihood.
inline double dfl_loss(const DflDistribution& d, double target) {
    const auto n = static_cast<double>(d.max_bin());
    detail::require(std::isfinite(target) && target >= 0.0 && target <= n,
                    "dfl_loss: target " + std::to_string(target) + " outside [0, " +
                        std::to_string(d.max_bin()) + "]");
    const auto logp = d.log_softmax();
    const double lo = std::floor(target);
    const auto left = static_cast<std::size_t>(lo);
    if (lo == target) {
        return -logp[left];
    }
    const double w_right = target - lo;
    const double w_left = 1.0 - w_right;
    return -(w_left * logp[left] + w_right * logp[left + 1]);
}

/// Regression head output for the four side distances of one box: either four
/// bin distributions or four direct values.
struct DistributionalHead {
    std::array<DflDistribution, 4> sides;
};

struct DirectHead {
    std::array<double, 4> sides{};
};

using HeadOutput = std::variant<DistributionalHead, DirectHead>;

inline std::array<double, 4> decode_head(const HeadOutput& h) {
    return std::visit(
        [](const auto& head) -> std::array<double, 4> {
            using T = std::decay_t<decltype(head)>;
            if constexpr (std::is_same_v<T, DirectHead>) {
                return head.sides;
            } else {
                return {dfl_decode(head.sides[0]), dfl_decode(head.sides[1]),
                        dfl_decode(head.sides[2]), dfl_decode(head.sides[3])};
            }
        },
        h);
}

// ---------------------------------------------------------------------------
// Composite objectives
// ---------------------------------------------------------------------------

struct LossWeights {
    double lambda_cls{0.5};
    double lambda_box{7.5};
    double lambda_dfl{1.5};

    void validate() const {
        detail::require(lambda_cls >= 0.0 && lambda_box >= 0.0 && lambda_dfl >= 0.0,
                        "LossWeights: weights must be non-negative");
        detail::require(lambda_cls > 0.0 || lambda_box > 0.0 || lambda_dfl > 0.0,
                        "LossWeights: at least one weight must be positive");
    }
};

/// Fixed-weight sum of classification, box and distribution losses.
inline double composite_loss_v8(double cls, double box, double dfl, const LossWeights& w) {
    w.validate();
    return w.lambda_cls * cls + w.lambda_box * box + w.lambda_dfl * dfl;
}

/// Cosine schedule shifting weight from classification to box regression:
/// lambda_t = lambda_max * cos(pi t / 2T) + lambda_min.
class ProgLossSchedule {
public:
    ProgLossSchedule(double lambda_max, double lambda_min, int total_epochs)
        : lambda_max_(lambda_max), lambda_min_(lambda_min), total_epochs_(total_epochs) {
        detail::require(lambda_max >= 0.0 && lambda_min >= 0.0,
                        "ProgLossSchedule: lambdas must be non-negative");
        // keeps the (1 - lambda_t) box weight non-negative
        detail::require(lambda_max + lambda_min <= 1.0,
                        "ProgLossSchedule: lambda_max + lambda_min must be <= 1");
        detail::require(total_epochs >= 1, "ProgLossSchedule: total_epochs must be >= 1");
    }

    double lambda_max() const noexcept { return lambda_max_; }
    double lambda_min() const noexcept { return lambda_min_; }
    int total_epochs() const noexcept { return total_epochs_; }

private:
    double lambda_max_;
    double lambda_min_;
    int total_epochs_;
};

inline double progloss_lambda(int t, const ProgLossSchedule& s) {
    detail::require(t >= 0 && t <= s.total_epochs(),
                    "progloss_lambda: epoch " + std::to_string(t) + " outside [0, " +
                        std::to_string(s.total_epochs()) + "]");
    if (t == s.total_epochs()) {
        return s.lambda_min();  // cos(pi/2) is not exactly 0 in floating point
    }
    const double phase = std::numbers::pi * static_cast<double>(t) /
                         (2.0 * static_cast<double>(s.total_epochs()));
    return s.lambda_max() * std::cos(phase) + s.lambda_min();
}

/// lambda_t * cls + (1 - lambda_t) * box.
inline double composite_loss_v26(double cls, double box, int t, const ProgLossSchedule& s) {
    const double lam = progloss_lambda(t, s);
    return lam * cls + (1.0 - lam) * box;
}

} // namespace detkit
