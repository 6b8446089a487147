#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include <detkit/optimizer.hpp>

#include "oracles/oracles.hpp"

using namespace detkit;

namespace {
Matrix random_matrix(std::mt19937_64& g, std::size_t r, std::size_t c, double lo = -1, double hi = 1) {
    std::uniform_real_distribution<double> u(lo, hi);
    Matrix m(r, c);
    for (double& v : m.data()) {
        v = u(g);
    }
    return m;
}

// Central differences of toy_model_loss with respect to one layer.
Matrix numeric_grad(ToyModel model, const Matrix& x, const Matrix& t, int layer, double h,
                    std::optional<double> split = std::nullopt) {
    Matrix& w = layer == 0 ? model.w1 : model.w2;
    Matrix out(w.rows(), w.cols());
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double orig = w.data()[i];
        w.data()[i] = orig + h;
        const double up = toy_model_loss(model, x, t, split);
        w.data()[i] = orig - h;
        const double down = toy_model_loss(model, x, t, split);
        w.data()[i] = orig;
        out.data()[i] = (up - down) / (2 * h);
    }
    return out;
}

double rel_err(const Matrix& a, const Matrix& b) {
    return (a - b).frobenius_norm() / std::max({a.frobenius_norm(), b.frobenius_norm(), 1e-12});
}
} // namespace

TEST(SpectralNorm, SpecValues) {
    EXPECT_NEAR(spectral_norm(Matrix::identity(3)), 1.0, 1e-12);
    EXPECT_NEAR(spectral_norm(Matrix::diagonal({3, 1})), 3.0, 1e-12);
    EXPECT_NEAR(spectral_norm(Matrix{{0, 2}, {0, 0}}), 2.0, 1e-12);
    EXPECT_EQ(spectral_norm(Matrix(3, 2)), 0.0);
}

TEST(SpectralNorm, RowAndColumnVectorsGiveEuclideanNorm) {
    EXPECT_NEAR(spectral_norm(Matrix{{3, 4}}), 5.0, 1e-12);
    EXPECT_NEAR(spectral_norm(Matrix{{3}, {4}, {12}}), 13.0, 1e-12);
}

TEST(SpectralNorm, MatchesClosedFormOnSmallMatrices) {
    std::mt19937_64 g(31);
    for (int i = 0; i < 2000; ++i) {
        const std::size_t n = i % 2 ? 3 : 2;
        const Matrix m = random_matrix(g, n, n);
        EXPECT_NEAR(spectral_norm(m), oracle::sigma_max(m), 1e-6);
    }
}

TEST(SpectralNorm, NearlyDegenerateSpectrum) {
    // sigma_1 and sigma_2 differ by 1e-9
    const Matrix m = Matrix::diagonal({1.0, 1.0 - 1e-9, 0.2});
    EXPECT_NEAR(spectral_norm(m), 1.0, 1e-9);
    // rotated copy
    const double c = std::cos(0.3), s = std::sin(0.3);
    const Matrix r{{c, -s, 0}, {s, c, 0}, {0, 0, 1}};
    EXPECT_NEAR(spectral_norm(matmul(matmul(r, m), r.transposed())), 1.0, 1e-9);
}

TEST(SpectralNorm, AbsoluteHomogeneity) {
    std::mt19937_64 g(32);
    std::uniform_real_distribution<double> k(-50, 50);
    for (int i = 0; i < 300; ++i) {
        const Matrix m = random_matrix(g, 1 + i % 4, 1 + (i / 4) % 5);
        const double kv = k(g);
        const double a = spectral_norm(m);
        EXPECT_NEAR(spectral_norm(kv * m), std::abs(kv) * a, 1e-8 * std::max(1.0, std::abs(kv) * a));
    }
}

TEST(SpectralNorm, RectangularAgreesWithTranspose) {
    std::mt19937_64 g(33);
    for (int i = 0; i < 200; ++i) {
        const Matrix m = random_matrix(g, 2, 5);
        EXPECT_NEAR(spectral_norm(m), spectral_norm(m.transposed()), 1e-10);
    }
}

TEST(MuSgd, ZeroGradientLeavesWeights) {
    const Matrix w{{1, 2}, {3, 4}};
    EXPECT_EQ(musgd_step(w, Matrix(2, 2), MuSgdConfig{}), w);
}

TEST(MuSgd, DiagonalExample) {
    MuSgdConfig cfg;
    cfg.eta = 0.1;
    const Matrix r = musgd_step(Matrix::identity(2), Matrix::diagonal({2, 2}), cfg);
    EXPECT_NEAR(r(0, 0), 0.9, 1e-15);
    EXPECT_NEAR(r(1, 1), 0.9, 1e-15);
    EXPECT_EQ(r(0, 1), 0.0);
}

TEST(MuSgd, UpdateHasSpectralNormEta) {
    std::mt19937_64 g(34);
    MuSgdConfig cfg;
    cfg.eta = 0.05;
    for (int i = 0; i < 500; ++i) {
        const std::size_t n = 2 + i % 2;
        const Matrix w = random_matrix(g, n, n);
        const Matrix grad = random_matrix(g, n, n, -100, 100);
        const Matrix step = musgd_step(w, grad, cfg) - w;
        EXPECT_NEAR(oracle::sigma_max(step), cfg.eta, 1e-8);
        EXPECT_TRUE(step.same_shape(w));
    }
}

TEST(MuSgd, OrthogonalizedUpdateIsOrthogonalTimesEta) {
    std::mt19937_64 g(35);
    MuSgdConfig cfg;
    cfg.eta = 0.1;
    cfg.rule = UpdateRule::Orthogonalized;
    const Matrix w(3, 3);
    const Matrix grad = random_matrix(g, 3, 3);
    const Matrix step = (musgd_step(w, grad, cfg) - w) * (-1.0 / cfg.eta);
    const Matrix q = matmul(step.transposed(), step);
    EXPECT_LT((q - Matrix::identity(3)).frobenius_norm(), 1e-6);
}

TEST(MuSgd, RejectsShapeMismatchAndBadConfig) {
    EXPECT_THROW(musgd_step(Matrix(2, 2), Matrix(2, 3), MuSgdConfig{}), ContractError);
    MuSgdConfig bad;
    bad.eta = 0;
    EXPECT_THROW(musgd_step(Matrix(2, 2), Matrix(2, 2), bad), ContractError);
}

TEST(ToyGrad, ZeroInputZeroFirstLayerGradient) {
    const ToyModel m = ToyModel::random(3, 4, 2, 1);
    const auto g = toy_model_grad(m, Matrix(1, 3), Matrix{{1.0, -1.0}});
    EXPECT_EQ(g.w1.frobenius_norm(), 0.0);
}

TEST(ToyGrad, TargetProducingWeightsHaveZeroGradient) {
    const ToyModel m = ToyModel::random(3, 4, 2, 2);
    const Matrix x{{0.3, -0.2, 0.9}, {0.1, 0.5, -0.4}};
    const Matrix t = toy_forward(m, x).output;
    const auto g = toy_model_grad(m, x, t);
    EXPECT_LT(g.w1.frobenius_norm(), 1e-15);
    EXPECT_LT(g.w2.frobenius_norm(), 1e-15);
}

TEST(ToyGrad, MatchesFiniteDifferences) {
    std::mt19937_64 g(36);
    int checked = 0;
    while (checked < 100) {
        const ToyModel m = ToyModel::random(3, 3, 3, g());
        const Matrix x = random_matrix(g, 2, 3);
        const Matrix t = random_matrix(g, 2, 3);
        // ReLU is not differentiable at 0; sample away from the kink
        const auto fwd = toy_forward(m, x);
        bool near_kink = false;
        for (double v : fwd.pre.data()) {
            near_kink |= std::abs(v) < 1e-3;
        }
        if (near_kink) {
            continue;
        }
        const std::optional<double> split = checked % 2 ? std::optional<double>(0.3) : std::nullopt;
        const auto a = toy_model_grad(m, x, t, split);
        EXPECT_LT(rel_err(a.w1, numeric_grad(m, x, t, 0, 1e-5, split)), 1e-4);
        EXPECT_LT(rel_err(a.w2, numeric_grad(m, x, t, 1, 1e-5, split)), 1e-4);
        ++checked;
    }
}

TEST(ToyGrad, ShapeContract) {
    const ToyModel m = ToyModel::random(3, 4, 2, 3);
    EXPECT_THROW(toy_model_grad(m, Matrix(1, 2), Matrix(1, 2)), ContractError);
    EXPECT_THROW(toy_model_grad(m, Matrix(1, 3), Matrix(1, 3)), ContractError);
    ToyModel broken{Matrix(3, 4), Matrix(5, 2)};
    EXPECT_THROW(toy_forward(broken, Matrix(1, 3)), ContractError);
}

namespace {
std::vector<ToySample> teacher_data(std::uint64_t seed, std::size_t n) {
    const ToyModel teacher = ToyModel::random(3, 4, 3, seed);
    std::mt19937_64 g(seed + 1);
    std::vector<ToySample> data;
    for (std::size_t i = 0; i < n; ++i) {
        Matrix x = random_matrix(g, 1, 3);
        data.push_back({x, toy_forward(teacher, x).output});
    }
    return data;
}
} // namespace

TEST(TrainToy, ZeroEpochs) {
    ToyModel m = ToyModel::random(3, 3, 3, 4);
    const ToyModel before = m;
    const auto r = train_toy(m, teacher_data(5, 4), MuSgdConfig{}, 0);
    EXPECT_TRUE(r.losses.empty());
    EXPECT_EQ(m.w1, before.w1);
    EXPECT_EQ(m.w2, before.w2);
}

TEST(TrainToy, LinearRegressionDescends) {
    // one effective layer: identity-like first layer on positive inputs
    ToyModel m{Matrix::identity(2), Matrix(2, 1)};
    std::vector<ToySample> data;
    for (double a : {0.2, 0.5, 0.9}) {
        for (double b : {0.1, 0.7}) {
            data.push_back({Matrix{{a, b}}, Matrix{{2 * a - b}}});
        }
    }
    MuSgdConfig cfg;
    cfg.eta = 0.005;
    const double initial = [&] {
        double s = 0;
        for (const auto& d : data) {
            s += toy_model_loss(m, d.input, d.target);
        }
        return s / static_cast<double>(data.size());
    }();
    const auto r = train_toy(m, data, cfg, 200);
    ASSERT_EQ(r.losses.size(), 200u);
    EXPECT_LT(r.losses.back(), initial);
    EXPECT_FALSE(r.diverged);
}

TEST(TrainToy, DeterministicTrajectory) {
    const auto data = teacher_data(6, 8);
    ToyModel a = ToyModel::random(3, 3, 3, 7);
    ToyModel b = ToyModel::random(3, 3, 3, 7);
    const ProgLossSchedule s(0.5, 0.2, 30);
    const auto ra = train_toy(a, data, MuSgdConfig{}, 40, s);
    const auto rb = train_toy(b, data, MuSgdConfig{}, 40, s);
    EXPECT_EQ(ra.losses, rb.losses);
    EXPECT_EQ(a.w1, b.w1);
}

TEST(TrainToy, EveryStepHasUpdateNormEta) {
    const auto data = teacher_data(8, 6);
    ToyModel m = ToyModel::random(3, 3, 3, 9);
    MuSgdConfig cfg;
    cfg.eta = 0.02;
    int events = 0, steps = 0;
    double worst = 0;
    train_toy(m, data, cfg, 50, std::nullopt, [&](const StepEvent& e) {
        ++events;
        if (oracle::sigma_max(e.grad) >= kMinGradSpectralNorm) {
            worst = std::max(worst, std::abs(oracle::sigma_max(e.update) - cfg.eta));
            ++steps;
        } else {
            // a sample with every hidden unit dead leaves the layer untouched
            EXPECT_EQ(e.update.frobenius_norm(), 0.0);
        }
    });
    EXPECT_EQ(events, 50 * 6 * 2);
    EXPECT_GT(steps, events / 2);
    EXPECT_LT(worst, 1e-8);
}

TEST(TrainToy, DivergenceIsReportedNotThrown) {
    ToyModel m{Matrix{{1e7}}, Matrix{{1e7}}};
    const std::vector<ToySample> data{{Matrix{{1.0}}, Matrix{{0.0}}}};
    const auto r = train_toy(m, data, MuSgdConfig{}, 10);
    EXPECT_TRUE(r.diverged);
    EXPECT_FALSE(r.diagnostic.empty());
    EXPECT_EQ(r.losses.size(), 1u);
}

TEST(TrainToy, Contract) {
    ToyModel m = ToyModel::random(3, 3, 3, 1);
    EXPECT_THROW(train_toy(m, {}, MuSgdConfig{}, 3), ContractError);
    EXPECT_THROW(train_toy(m, teacher_data(1, 2), MuSgdConfig{}, -1), ContractError);
}
