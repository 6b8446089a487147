#include <algorithm>

#include <gtest/gtest.h>

#include <detkit/bench.hpp>
#include <detkit/io.hpp>

using namespace detkit;

TEST(Csv, ParsesHeaderCommentsAndBlankLines) {
    const auto t = parse_csv("# comment\na,b\n1,2\n\n3,4\n");
    ASSERT_EQ(t.header.size(), 2u);
    EXPECT_EQ(t.rows.size(), 2u);
    EXPECT_EQ(t.column("b"), 1u);
    EXPECT_FALSE(t.column("c").has_value());
}

TEST(Csv, RaggedRowIsParseError) {
    EXPECT_THROW(parse_csv("a,b\n1\n"), ParseError);
}

TEST(Detections, CsvAndJsonRoundTrip) {
    const std::vector<Detection> dets{{Box{1.5, 2, 3.25, 4}, 3, 0.875, "img1"}, {Box{0, 0, 1, 1}, 0, 0.1, "img2"}};
    EXPECT_EQ(parse_detections(format_detections(dets, OutputFormat::Csv)), dets);
    EXPECT_EQ(parse_detections(format_detections(dets, OutputFormat::Json)), dets);
}

TEST(Detections, HeaderlessCsvAndErrors) {
    const auto d = parse_detections("a,1,0.5,0,0,10,10\n");
    ASSERT_EQ(d.size(), 1u);
    EXPECT_EQ(d[0].class_id, 1);
    EXPECT_THROW(parse_detections("a,1,0.5,0,0,10\n"), ParseError);
    EXPECT_THROW(parse_detections("a,1,1.5,0,0,10,10\n"), ContractError);
    EXPECT_THROW(parse_detections("a,1,0.5,10,0,0,10\n"), ContractError);
    EXPECT_THROW(parse_detections("{\"image_id\": 1\n"), ParseError);
}

TEST(GroundTruthCsv, RoundTrip) {
    const std::vector<GroundTruthInstance> g{{"a", 1, Box{0, 0, 5, 5}, true}, {"b", 0, Box{1, 1, 2, 2}, false}};
    EXPECT_EQ(parse_ground_truth_csv(format_ground_truth_csv(g)), g);
    const auto six = parse_ground_truth_csv("a,2,0,0,1,1\n");
    ASSERT_EQ(six.size(), 1u);
    EXPECT_FALSE(six[0].difficult);
}

TEST(Report, JsonAndCsvCarryAggregate) {
    const std::vector<GroundTruthInstance> g{{"a", 0, Box{0, 0, 10, 10}, false}};
    const std::vector<Detection> d{{Box{0, 0, 10, 10}, 0, 0.9, "a"}};
    const auto r = evaluate(d, g);
    const auto j = report_to_json(r);
    EXPECT_DOUBLE_EQ(j["aggregate"]["map50"].get<double>(), 1.0);
    EXPECT_EQ(j["confusion"]["rows_gt_cols_pred"].size(), 2u);
    const auto csv = report_to_csv(r);
    EXPECT_EQ(csv.rfind("class,num_gt,precision,recall,f1,ap50,ap50_95\n", 0), 0u);
    EXPECT_NE(csv.find("\nall,"), std::string::npos);
}

TEST(Models, TableSelectsDatasetAndSkipsEmptyAccuracy) {
    const auto t = parse_csv(
        "name,dataset,map50_95,gpu_latency_ms,params_m\n"
        "a,voc,0.5,1.0,3\n"
        "a,visdrone,,2.0,3\n"
        "b,voc,0.6,2.0,4\n");
    const auto voc = models_from_table(t, "map50_95", "voc");
    ASSERT_EQ(voc.size(), 2u);
    EXPECT_DOUBLE_EQ(voc[1].cost("params_m"), 4.0);
    EXPECT_TRUE(models_from_table(t, "map50_95", "visdrone").empty());
    EXPECT_THROW(models_from_table(t, "nope", "voc"), ContractError);
}

TEST(Bench, ExactCandidateCountsAndDeterministicScenes) {
    for (std::size_t c : {1u, 7u, 100u, 1000u}) {
        const auto a = bench_scene(c, 3);
        EXPECT_EQ(a.size(), c);
        EXPECT_EQ(a, bench_scene(c, 3));
        EXPECT_EQ(scene_digest(a), scene_digest(bench_scene(c, 3)));
    }
    EXPECT_NE(scene_digest(bench_scene(100, 3)), scene_digest(bench_scene(100, 4)));
}

TEST(Bench, ReportStructure) {
    const auto reps = bench_postproc({100}, PipelineConfig{}, {PipelineMode::Nms, PipelineMode::EndToEnd}, 30, 1);
    ASSERT_EQ(reps.size(), 2u);
    EXPECT_EQ(reps[0].mode, PipelineMode::Nms);
    EXPECT_EQ(reps[1].mode, PipelineMode::EndToEnd);
    for (const auto& r : reps) {
        EXPECT_EQ(r.candidate_count, 100u);
        EXPECT_EQ(r.repetitions, 30u);
        EXPECT_LE(r.median_ns, r.p95_ns);
        EXPECT_LE(r.p95_ns, r.max_ns);
        EXPECT_GE(r.stddev_ns, 0.0);
    }
    EXPECT_EQ(reps[0].scene_digest, reps[1].scene_digest);
    EXPECT_LE(reps[0].survivors, reps[1].survivors);
}

TEST(Bench, ParallelCellsGiveSameStructure) {
    BenchOptions o;
    o.parallel = true;
    const auto reps = bench_postproc({100, 200}, PipelineConfig{}, {PipelineMode::Nms, PipelineMode::EndToEnd}, 30, 2, o);
    ASSERT_EQ(reps.size(), 4u);
    EXPECT_EQ(reps[2].candidate_count, 200u);
    EXPECT_EQ(reps[3].mode, PipelineMode::EndToEnd);
}

TEST(Bench, Contract) {
    EXPECT_THROW(bench_postproc({100}, PipelineConfig{}, {PipelineMode::Nms}, 29, 1), ContractError);
    EXPECT_THROW(bench_postproc({1000, 100}, PipelineConfig{}, {PipelineMode::Nms}, 30, 1), ContractError);
    EXPECT_THROW(bench_postproc({100}, PipelineConfig{}, {}, 30, 1), ContractError);
}

TEST(Bench, LatencyCsvColumns) {
    const auto reps = bench_postproc({50}, PipelineConfig{}, {PipelineMode::EndToEnd}, 30, 1);
    const auto t = parse_csv(latency_to_csv(reps));
    EXPECT_EQ(t.rows.size(), 1u);
    EXPECT_TRUE(t.column("median_ns").has_value());
    EXPECT_TRUE(t.column("scene_digest").has_value());
}
