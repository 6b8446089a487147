#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "error.hpp"
#include "losses.hpp"
#include "matrix.hpp"
#include "rng.hpp"

namespace detkit {

enum class UpdateRule {
    SpectralScale,   // g / sigma_max(g)
    Orthogonalized,  // Newton-Schulz approximation of U V^T from g = U S V^T
};

struct MuSgdConfig {
    double eta{0.01};
    int power_iters{50};
    double tol{1e-10};
    UpdateRule rule{UpdateRule::SpectralScale};
    int newton_schulz_iters{40};

    void validate() const {
        detail::require(eta > 0.0, "MuSgdConfig: eta must be positive");
        detail::require(power_iters >= 1, "MuSgdConfig: power_iters must be >= 1");
        detail::require(tol > 0.0, "MuSgdConfig: tol must be positive");
        detail::require(newton_schulz_iters >= 1, "MuSgdConfig: newton_schulz_iters must be >= 1");
    }
};

/// Largest singular value of `m`.
///
/// Power iteration on the smaller Gram matrix G (m^T m or m m^T), where each
/// round squares the normalised iterate, so round k applies G^(2^k). The
/// eigenvector estimate is the largest column of the iterate and the result is
/// the square root of its Rayleigh quotient on G. Stops when the quotient moves
/// by less than `tol` (relative) or after `power_iters` rounds. Squaring keeps
/// near-degenerate spectra (sigma_2 close to sigma_1) from stalling the
/// iteration.
inline double spectral_norm(const Matrix& m, const MuSgdConfig& cfg = {}) {
    const double scale = m.max_abs();
    if (!(scale > 0.0)) {
        return 0.0;
    }
    Matrix a = m;
    a *= 1.0 / scale;
    const Matrix gram = a.cols() <= a.rows() ? matmul_tn(a, a) : matmul_tn(a.transposed(), a.transposed());
    const std::size_t n = gram.rows();

    auto rayleigh_of_largest_column = [&](const Matrix& p) {
        std::size_t best = 0;
        double best_norm = -1.0;
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                s += p(i, j) * p(i, j);
            }
            if (s > best_norm) {
                best_norm = s;
                best = j;
            }
        }
        if (!(best_norm > 0.0)) {
            return 0.0;
        }
        const double inv = 1.0 / std::sqrt(best_norm);
        std::vector<double> x(n);
        for (std::size_t i = 0; i < n; ++i) {
            x[i] = p(i, best) * inv;
        }
        double q = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double gi = 0.0;
            for (std::size_t k = 0; k < n; ++k) {
                gi += gram(i, k) * x[k];
            }
            q += x[i] * gi;
        }
        return q;
    };

    Matrix p = gram;
    p *= 1.0 / p.frobenius_norm();
    double lambda = rayleigh_of_largest_column(p);
    for (int it = 1; it < cfg.power_iters; ++it) {
        p = matmul(p, p);
        const double f = p.frobenius_norm();
        if (!(f > 0.0)) {
            break;
        }
        p *= 1.0 / f;
        const double next = rayleigh_of_largest_column(p);
        const bool done = std::abs(next - lambda) <= cfg.tol * std::abs(next);
        lambda = next;
        if (done) {
            break;
        }
    }
    return scale * std::sqrt(std::max(lambda, 0.0));
}

/// Newton-Schulz iteration X <- 1.5 X - 0.5 X X^T X started from g / ||g||_F.
/// Converges to the orthogonal polar factor for full-rank g.
inline Matrix orthogonalize(const Matrix& g, int iters) {
    const double f = g.frobenius_norm();
    if (!(f > 0.0)) {
        return g;
    }
    Matrix x = g;
    x *= 1.0 / f;
    for (int i = 0; i < iters; ++i) {
        const Matrix xxt_x = matmul(matmul(x, x.transposed()), x);
        x = 1.5 * x - 0.5 * xxt_x;
    }
    return x;
}

inline constexpr double kMinGradSpectralNorm = 1e-12;

/// One update w - eta * g / sigma_max(g). A gradient whose spectral norm is
/// below 1e-12 leaves `w` unchanged.
inline Matrix musgd_step(const Matrix& w, const Matrix& grad, const MuSgdConfig& cfg) {
    cfg.validate();
    detail::require(w.same_shape(grad),
                    "musgd_step: weight " + w.shape_string() + " vs gradient " + grad.shape_string());
    const double sigma = spectral_norm(grad, cfg);
    if (sigma < kMinGradSpectralNorm) {
        return w;
    }
    if (cfg.rule == UpdateRule::Orthogonalized) {
        return w - cfg.eta * orthogonalize(grad, cfg.newton_schulz_iters);
    }
    return w - (cfg.eta / sigma) * grad;
}

// ---------------------------------------------------------------------------
// Two-layer toy network used to exercise the update rule end to end.
// ---------------------------------------------------------------------------

/// y = relu(x W1) W2 with x of shape batch x in.
struct ToyModel {
    Matrix w1;  // in x hidden
    Matrix w2;  // hidden x out

    static ToyModel random(std::size_t in, std::size_t hidden, std::size_t out, std::uint64_t seed) {
        SplitMix64 rng(seed);
        auto layer = [&rng](std::size_t fan_in, std::size_t fan_out) {
            Matrix m(fan_in, fan_out);
            const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
            for (double& v : m.data()) {
                v = rng.uniform(-bound, bound);
            }
            return m;
        };
        ToyModel model;
        model.w1 = layer(in, hidden);
        model.w2 = layer(hidden, out);
        return model;
    }

    void validate() const {
        detail::require(!w1.empty() && !w2.empty(), "ToyModel: empty layer");
        detail::require(w1.cols() == w2.rows(),
                        "ToyModel: layers do not compose (" + w1.shape_string() + ", " + w2.shape_string() + ")");
    }
};

struct ToyForward {
    Matrix pre;     // x W1
    Matrix hidden;  // relu(pre)
    Matrix output;  // hidden W2
};

inline ToyForward toy_forward(const ToyModel& model, const Matrix& input) {
    model.validate();
    detail::require(input.cols() == model.w1.rows(),
                    "toy_forward: input " + input.shape_string() + " vs layer " + model.w1.shape_string());
    ToyForward f;
    f.pre = matmul(input, model.w1);
    f.hidden = f.pre;
    for (double& v : f.hidden.data()) {
        v = std::max(v, 0.0);
    }
    f.output = matmul(f.hidden, model.w2);
    return f;
}

namespace detail {
    // Weight of output column `c` in the objective. Without a split every cell
    // of the output counts equally (plain MSE). With a split, column 0 is the
    // "classification" head weighted by lambda and the remaining columns the
    // "box" head weighted by 1 - lambda, each averaged over its own cells.
    inline std::vector<double> column_weights(std::size_t batch, std::size_t out, std::optional<double> lambda) {
        std::vector<double> w(out);
        const auto b = static_cast<double>(batch);
        if (!lambda) {
            std::fill(w.begin(), w.end(), 1.0 / (b * static_cast<double>(out)));
            return w;
        }
        detail::require(out >= 2, "toy model: loss split needs at least two output columns");
        w[0] = *lambda / b;
        for (std::size_t c = 1; c < out; ++c) {
            w[c] = (1.0 - *lambda) / (b * static_cast<double>(out - 1));
        }
        return w;
    }
} // namespace detail

/// Squared-error objective. `cls_weight` switches on the two-head split.
inline double toy_model_loss(const ToyModel& model, const Matrix& input, const Matrix& target,
                             std::optional<double> cls_weight = std::nullopt) {
    const auto f = toy_forward(model, input);
    detail::require(f.output.same_shape(target),
                    "toy_model_loss: output " + f.output.shape_string() + " vs target " + target.shape_string());
    const auto w = detail::column_weights(target.rows(), target.cols(), cls_weight);
    double loss = 0.0;
    for (std::size_t r = 0; r < target.rows(); ++r) {
        for (std::size_t c = 0; c < target.cols(); ++c) {
            const double e = f.output(r, c) - target(r, c);
            loss += w[c] * e * e;
        }
    }
    return loss;
}

struct ToyGradients {
    Matrix w1;
    Matrix w2;
};

/// Analytic gradients of toy_model_loss with respect to both layers.
inline ToyGradients toy_model_grad(const ToyModel& model, const Matrix& input, const Matrix& target,
                                   std::optional<double> cls_weight = std::nullopt) {
    const auto f = toy_forward(model, input);
    detail::require(f.output.same_shape(target),
                    "toy_model_grad: output " + f.output.shape_string() + " vs target " + target.shape_string());
    const auto w = detail::column_weights(target.rows(), target.cols(), cls_weight);

    Matrix d_out(target.rows(), target.cols());
    for (std::size_t r = 0; r < target.rows(); ++r) {
        for (std::size_t c = 0; c < target.cols(); ++c) {
            d_out(r, c) = 2.0 * w[c] * (f.output(r, c) - target(r, c));
        }
    }
    ToyGradients g;
    g.w2 = matmul_tn(f.hidden, d_out);
    Matrix d_hidden = matmul(d_out, model.w2.transposed());
    for (std::size_t i = 0; i < d_hidden.size(); ++i) {
        if (!(f.pre.data()[i] > 0.0)) {
            d_hidden.data()[i] = 0.0;
        }
    }
    g.w1 = matmul_tn(input, d_hidden);
    return g;
}

struct ToySample {
    Matrix input;
    Matrix target;
};

struct StepEvent {
    int epoch;
    std::size_t sample;
    int layer;             // 0 = w1, 1 = w2
    const Matrix& update;  // w_new - w_old
    const Matrix& grad;
};

struct TrainResult {
    std::vector<double> losses;  // one per completed epoch
    bool diverged{false};
    std::string diagnostic;
};

inline constexpr double kDivergenceLoss = 1e12;

/// Trains in place with one update per sample per epoch. With a schedule, the
/// objective for epoch e uses lambda_t at t = min(e, T) and the output splits
/// into a column-0 classification head and a box head. The recorded loss for
/// an epoch is the mean objective over `data` after that epoch's updates.
inline TrainResult train_toy(ToyModel& model, const std::vector<ToySample>& data, const MuSgdConfig& cfg, int epochs,
                             const std::optional<ProgLossSchedule>& schedule = std::nullopt,
                             const std::function<void(const StepEvent&)>& observer = {}) {
    cfg.validate();
    model.validate();
    detail::require(!data.empty(), "train_toy: no training data");
    detail::require(epochs >= 0, "train_toy: negative epoch count");

    TrainResult result;
    result.losses.reserve(static_cast<std::size_t>(epochs));
    for (int epoch = 0; epoch < epochs; ++epoch) {
        std::optional<double> lambda;
        if (schedule) {
            lambda = progloss_lambda(std::min(epoch, schedule->total_epochs()), *schedule);
        }
        for (std::size_t s = 0; s < data.size(); ++s) {
            const auto g = toy_model_grad(model, data[s].input, data[s].target, lambda);
            Matrix w1 = musgd_step(model.w1, g.w1, cfg);
            Matrix w2 = musgd_step(model.w2, g.w2, cfg);
            if (observer) {
                const Matrix d1 = w1 - model.w1;
                const Matrix d2 = w2 - model.w2;
                observer(StepEvent{epoch, s, 0, d1, g.w1});
                observer(StepEvent{epoch, s, 1, d2, g.w2});
            }
            model.w1 = std::move(w1);
            model.w2 = std::move(w2);
        }
        double total = 0.0;
        for (const auto& sample : data) {
            total += toy_model_loss(model, sample.input, sample.target, lambda);
        }
        const double loss = total / static_cast<double>(data.size());
        result.losses.push_back(loss);
        if (!std::isfinite(loss) || loss > kDivergenceLoss) {
            result.diverged = true;
            result.diagnostic = "diverged at epoch " + std::to_string(epoch) + " (loss " + std::to_string(loss) + ")";
            break;
        }
    }
    return result;
}

} // namespace detkit
