#include <algorithm>
#include <random>

#include <gtest/gtest.h>

#include <detkit/data_io.hpp>
#include <detkit/postproc.hpp>

#include "oracles/oracles.hpp"

using namespace detkit;

namespace {
Detection det(Box b, double s, int cls = 0, std::string img = "a") {
    return Detection{b, cls, s, std::move(img)};
}

PipelineConfig nms_cfg(double nt, double conf = 0.0, std::size_t kmax = kUnlimitedDetections, bool aware = true) {
    PipelineConfig c;
    c.mode = PipelineMode::Nms;
    c.iou_threshold = nt;
    c.conf_threshold = conf;
    c.max_detections = kmax;
    c.class_aware = aware;
    return c;
}

// Clusters of overlapping boxes with a couple of classes.
std::vector<Detection> random_dets(std::mt19937_64& g, int max_n) {
    std::uniform_int_distribution<int> nd(0, max_n), cls(0, 2), nclu(1, 4);
    std::uniform_real_distribution<double> sc(0, 1);
    std::normal_distribution<double> jit(0, 3);
    std::vector<Box> centres;
    const int k = nclu(g);
    for (int i = 0; i < k; ++i) {
        centres.push_back(oracle::random_box(g, 100, 10, 30));
    }
    const int n = nd(g);
    std::vector<Detection> out;
    for (int i = 0; i < n; ++i) {
        const Box& c = centres[static_cast<std::size_t>(i % k)];
        const double x = c.x_min + jit(g), y = c.y_min + jit(g);
        out.push_back(det(Box{x, y, x + c.width() + jit(g), y + c.height() + jit(g)}, sc(g), cls(g)));
    }
    return out;
}

bool contains(const std::vector<Detection>& v, const Detection& d) {
    return std::find(v.begin(), v.end(), d) != v.end();
}
} // namespace

TEST(Nms, SingleDetection) {
    const std::vector<Detection> in{det(Box{0, 0, 10, 10}, 0.5)};
    EXPECT_EQ(nms(in, nms_cfg(0.5)), in);
}

TEST(Nms, OneStepSuppression) {
    // IoU 0.6: overlap 15 of a 10x2 box, union 25 (exact in binary)
    const Box a{0, 0, 10, 2};
    const Box b{2.5, 0, 12.5, 2};
    ASSERT_DOUBLE_EQ(iou(a, b), 0.6);
    const auto out = nms({det(b, 0.8), det(a, 0.9)}, nms_cfg(0.5));
    ASSERT_EQ(out.size(), 1u);
    EXPECT_EQ(out[0].score, 0.9);
}

TEST(Nms, ThresholdIsInclusive) {
    const Box a{0, 0, 10, 2};
    const Box b{2.5, 0, 12.5, 2};
    EXPECT_EQ(nms({det(a, 0.9), det(b, 0.8)}, nms_cfg(0.6)).size(), 1u);
    EXPECT_EQ(nms({det(a, 0.9), det(b, 0.8)}, nms_cfg(0.61)).size(), 2u);
}

TEST(Nms, DisjointBoxesSurvive) {
    for (double nt : {0.01, 0.5, 0.99}) {
        EXPECT_EQ(nms({det(Box{0, 0, 1, 1}, 0.9), det(Box{5, 5, 6, 6}, 0.8)}, nms_cfg(nt)).size(), 2u);
    }
}

TEST(Nms, ClassAwareByDefault) {
    const Box a{0, 0, 10, 10};
    const std::vector<Detection> in{det(a, 0.9, 0), det(a, 0.8, 1)};
    EXPECT_EQ(nms(in, nms_cfg(0.5)).size(), 2u);
    EXPECT_EQ(nms(in, nms_cfg(0.5, 0.0, kUnlimitedDetections, false)).size(), 1u);
    EXPECT_TRUE(PipelineConfig{}.class_aware);
}

TEST(Nms, EmptyInput) {
    EXPECT_TRUE(nms({}, nms_cfg(0.5)).empty());
    EXPECT_TRUE(run_pipeline({}, nms_cfg(0.5)).empty());
}

TEST(Nms, ConfidenceFilterAndTruncation) {
    std::vector<Detection> in;
    for (int i = 0; i < 10; ++i) {
        in.push_back(det(Box{i * 20.0, 0, i * 20.0 + 10, 10}, 0.05 * (i + 1)));
    }
    const auto out = nms(in, nms_cfg(0.5, 0.2, 3));
    ASSERT_EQ(out.size(), 3u);
    EXPECT_DOUBLE_EQ(out[0].score, 0.5);
    EXPECT_DOUBLE_EQ(out[2].score, 0.4);
}

TEST(Nms, Defaults) {
    const auto e = PipelineConfig::evaluation();
    EXPECT_EQ(e.iou_threshold, 0.7);
    EXPECT_EQ(e.conf_threshold, 0.001);
    EXPECT_EQ(e.max_detections, 300u);
    EXPECT_EQ(PipelineConfig::deployment().conf_threshold, 0.25);
}

TEST(Nms, RejectsBadConfig) {
    EXPECT_THROW(nms({}, nms_cfg(0.0)), ContractError);
    EXPECT_THROW(nms({}, nms_cfg(1.0)), ContractError);
    EXPECT_THROW(nms({}, nms_cfg(0.5, 1.5)), ContractError);
}

TEST(Nms, PropertySuiteOnRandomScenes) {
    std::mt19937_64 g(41);
    std::uniform_real_distribution<double> nt(0.05, 0.95);
    for (int i = 0; i < 500; ++i) {
        const auto in = random_dets(g, 40);
        const auto cfg = nms_cfg(nt(g), 0.0, kUnlimitedDetections, i % 3 != 0);
        const auto out = nms(in, cfg);
        for (const auto& d : out) {
            EXPECT_TRUE(contains(in, d));
        }
        EXPECT_EQ(nms(out, cfg), out);
        for (std::size_t a = 0; a < out.size(); ++a) {
            for (std::size_t b = a + 1; b < out.size(); ++b) {
                if (!cfg.class_aware || out[a].class_id == out[b].class_id) {
                    EXPECT_LT(iou(out[a].box, out[b].box), cfg.iou_threshold);
                }
            }
            if (a + 1 < out.size()) {
                EXPECT_FALSE(detection_before(out[a + 1], out[a]));
            }
        }
    }
}

// Greedy suppression is not monotone in N_t: at the higher threshold B
// survives A and then removes C and D, which A alone would have spared.
TEST(Nms, RaisingThresholdCanLoseSurvivors) {
    const Box b{0, 0, 10, 10};
    const std::vector<Detection> in{det(b.translated(0, 2.9), 0.9), det(b, 0.8), det(b.translated(-2, 0), 0.7),
                                    det(b.translated(2, 0), 0.6)};
    EXPECT_NEAR(iou(in[0].box, in[1].box), 7.1 / 12.9, 1e-12);
    EXPECT_NEAR(iou(in[1].box, in[2].box), 8.0 / 12.0, 1e-12);
    EXPECT_NEAR(iou(in[0].box, in[2].box), 56.8 / 143.2, 1e-12);
    EXPECT_NEAR(iou(in[2].box, in[3].box), 6.0 / 14.0, 1e-12);
    EXPECT_EQ(nms(in, nms_cfg(0.5)).size(), 3u);
    EXPECT_EQ(nms(in, nms_cfg(0.6)).size(), 2u);
}

TEST(Nms, SurvivorCountNeverBelowEndToEnd) {
    std::mt19937_64 g(42);
    for (int i = 0; i < 200; ++i) {
        const auto in = random_dets(g, 60);
        auto cfg = nms_cfg(0.5, 0.1, 20);
        const auto n = run_pipeline(in, cfg);
        cfg.mode = PipelineMode::EndToEnd;
        const auto e = run_pipeline(in, cfg);
        EXPECT_LE(n.size(), e.size());
        EXPECT_LE(e.size(), 20u);
    }
}

TEST(EndToEnd, IdentityUpToOrdering) {
    std::mt19937_64 g(43);
    auto in = random_dets(g, 30);
    PipelineConfig cfg;
    cfg.mode = PipelineMode::EndToEnd;
    cfg.conf_threshold = 0.0;
    cfg.max_detections = kUnlimitedDetections;
    auto sorted = in;
    std::sort(sorted.begin(), sorted.end(), detection_before);
    EXPECT_EQ(end_to_end_filter(in, cfg), sorted);
}

TEST(EndToEnd, OverlappingBoxesKept) {
    PipelineConfig cfg;
    cfg.mode = PipelineMode::EndToEnd;
    const Box a{0, 0, 10, 10};
    EXPECT_EQ(end_to_end_filter({det(a, 0.9), det(a, 0.8)}, cfg).size(), 2u);
}

TEST(EndToEnd, FilterAndSort) {
    PipelineConfig cfg;
    cfg.mode = PipelineMode::EndToEnd;
    cfg.conf_threshold = 0.3;
    const auto out = end_to_end_filter(
        {det(Box{0, 0, 1, 1}, 0.2), det(Box{1, 1, 2, 2}, 0.9), det(Box{2, 2, 3, 3}, 0.4)}, cfg);
    ASSERT_EQ(out.size(), 2u);
    EXPECT_EQ(out[0].score, 0.9);
    EXPECT_EQ(out[1].score, 0.4);
}

TEST(EndToEnd, PermutationInvariantWithTies) {
    std::mt19937_64 g(44);
    PipelineConfig cfg;
    cfg.mode = PipelineMode::EndToEnd;
    cfg.max_detections = 7;
    for (int i = 0; i < 200; ++i) {
        auto in = random_dets(g, 25);
        for (auto& d : in) {
            d.score = std::round(d.score * 4) / 4;  // many ties
        }
        const auto ref = end_to_end_filter(in, cfg);
        std::shuffle(in.begin(), in.end(), g);
        EXPECT_EQ(end_to_end_filter(in, cfg), ref);
        EXPECT_EQ(run_pipeline(in, cfg), ref);
    }
}

TEST(Pipeline, NmsTiesAreOrderIndependent) {
    std::mt19937_64 g(45);
    for (int i = 0; i < 200; ++i) {
        auto in = random_dets(g, 25);
        for (auto& d : in) {
            d.score = std::round(d.score * 3) / 3;
        }
        const auto cfg = nms_cfg(0.5);
        const auto ref = run_pipeline(in, cfg);
        std::shuffle(in.begin(), in.end(), g);
        EXPECT_EQ(run_pipeline(in, cfg), ref);
    }
}

TEST(Pipeline, PerImageKeepsImagesApart) {
    const Box a{0, 0, 10, 10};
    const std::vector<Detection> in{det(a, 0.9, 0, "x"), det(a, 0.8, 0, "y"), det(a, 0.7, 0, "x")};
    const auto out = run_pipeline_per_image(in, nms_cfg(0.5));
    ASSERT_EQ(out.size(), 2u);
    EXPECT_EQ(out[0].image_id, "x");
    EXPECT_EQ(out[1].image_id, "y");
}

TEST(Pipeline, DenseSyntheticSceneNmsNeverExceedsEndToEnd) {
    SyntheticSceneSpec spec = SyntheticSceneSpec::visdrone_profile(3);
    spec.num_objects = 30;
    spec.mean_objects.reset();
    const auto scene = generate_scene(spec);
    auto cfg = PipelineConfig::evaluation(PipelineMode::Nms);
    const auto n = run_pipeline(scene.detections, cfg);
    cfg.mode = PipelineMode::EndToEnd;
    EXPECT_LE(n.size(), run_pipeline(scene.detections, cfg).size());
}
