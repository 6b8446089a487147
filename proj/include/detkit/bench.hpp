#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <future>
#include <string>
#include <vector>

#include "data_io.hpp"
#include "error.hpp"
#include "postproc.hpp"
#include "rng.hpp"

namespace detkit {

struct LatencyReport {
    PipelineMode mode{PipelineMode::Nms};
    std::size_t candidate_count{0};
    std::size_t repetitions{0};
    std::int64_t median_ns{0};
    std::int64_t p95_ns{0};
    std::int64_t max_ns{0};
    double mean_ns{0.0};
    double stddev_ns{0.0};
    std::size_t survivors{0};
    std::string scene_digest;  // FNV-1a of the candidate set, hex
};

struct BenchOptions {
    std::size_t warmup{5};
    std::size_t duplicates_per_gt{10};
    double overlap_jitter{0.1};
    int image_size{4096};
    int num_classes{10};
    bool parallel{false};  // run (mode, count) cells concurrently
};

inline constexpr std::size_t kMinBenchRepetitions = 30;

/// FNV-1a over the fields that define a candidate set.
inline std::string scene_digest(const std::vector<Detection>& dets) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto& d : dets) {
        const double v[] = {d.box.x_min, d.box.y_min, d.box.x_max, d.box.y_max, d.score};
        mix(v, sizeof v);
        mix(&d.class_id, sizeof d.class_id);
        mix(d.image_id.data(), d.image_id.size());
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

/// Dense scene with exactly `count` candidates: ceil(count / duplicates)
/// objects, each surrounded by heavily overlapping duplicates.
inline std::vector<Detection> bench_scene(std::size_t count, std::uint64_t seed, const BenchOptions& opts = {}) {
    detail::require(opts.duplicates_per_gt >= 1, "bench_scene: duplicates_per_gt must be >= 1");
    SyntheticSceneSpec spec;
    spec.image_id = "bench";
    spec.width = opts.image_size;
    spec.height = opts.image_size;
    spec.num_objects = (count + opts.duplicates_per_gt - 1) / opts.duplicates_per_gt;
    spec.small_fraction = 0.75;
    spec.num_classes = opts.num_classes;
    spec.duplicates_per_gt = opts.duplicates_per_gt;
    spec.overlap_jitter = opts.overlap_jitter;
    spec.seed = SplitMix64(seed ^ (0x9E3779B97F4A7C15ULL * (count + 1))).next();
    auto dets = generate_scene(spec).detections;
    dets.resize(std::min(dets.size(), count));
    return dets;
}

namespace detail {
    inline LatencyReport time_cell(const std::vector<Detection>& dets, const PipelineConfig& cfg, std::size_t reps,
                                   std::size_t warmup) {
        using clock = std::chrono::steady_clock;
        std::vector<std::int64_t> ns;
        ns.reserve(reps);
        std::size_t survivors = 0;
        for (std::size_t r = 0; r < warmup + reps; ++r) {
            const auto t0 = clock::now();
            const auto out = run_pipeline(dets, cfg);
            const auto t1 = clock::now();
            survivors = out.size();
            if (r >= warmup) {
                ns.push_back(std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count());
            }
        }
        std::sort(ns.begin(), ns.end());
        LatencyReport rep;
        rep.mode = cfg.mode;
        rep.candidate_count = dets.size();
        rep.repetitions = reps;
        rep.median_ns = ns[(ns.size() - 1) / 2];
        const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(ns.size())));
        rep.p95_ns = ns[std::max<std::size_t>(rank, 1) - 1];
        rep.max_ns = ns.back();
        double mean = 0.0;
        for (auto v : ns) {
            mean += static_cast<double>(v);
        }
        mean /= static_cast<double>(ns.size());
        double var = 0.0;
        for (auto v : ns) {
            const double d = static_cast<double>(v) - mean;
            var += d * d;
        }
        rep.mean_ns = mean;
        rep.stddev_ns = std::sqrt(var / static_cast<double>(ns.size()));
        rep.survivors = survivors;
        rep.scene_digest = scene_digest(dets);
        return rep;
    }
} // namespace detail

/// Times run_pipeline on one seeded dense scene per candidate count, for every
/// requested mode. Only the pipeline call sits inside the timed region; the
/// first `warmup` iterations of each cell are discarded. Reports come back
/// count-major, modes in the order given.
inline std::vector<LatencyReport> bench_postproc(const std::vector<std::size_t>& counts, const PipelineConfig& base,
                                                 const std::vector<PipelineMode>& modes, std::size_t reps,
                                                 std::uint64_t seed, const BenchOptions& opts = {}) {
    detail::require(reps >= kMinBenchRepetitions, "bench_postproc: need at least 30 repetitions");
    detail::require(std::is_sorted(counts.begin(), counts.end()), "bench_postproc: counts must be ascending");
    detail::require(!modes.empty(), "bench_postproc: no modes");

    std::vector<std::vector<Detection>> scenes;
    scenes.reserve(counts.size());
    for (auto c : counts) {
        scenes.push_back(bench_scene(c, seed, opts));
    }

    std::vector<LatencyReport> out(counts.size() * modes.size());
    auto cell = [&](std::size_t ci, std::size_t mi) {
        PipelineConfig cfg = base;
        cfg.mode = modes[mi];
        out[ci * modes.size() + mi] = detail::time_cell(scenes[ci], cfg, reps, opts.warmup);
    };
    if (opts.parallel) {
        std::vector<std::future<void>> jobs;
        for (std::size_t ci = 0; ci < counts.size(); ++ci) {
            for (std::size_t mi = 0; mi < modes.size(); ++mi) {
                jobs.push_back(std::async(std::launch::async, cell, ci, mi));
            }
        }
        for (auto& j : jobs) {
            j.get();
        }
    } else {
        for (std::size_t ci = 0; ci < counts.size(); ++ci) {
            for (std::size_t mi = 0; mi < modes.size(); ++mi) {
                cell(ci, mi);
            }
        }
    }
    return out;
}

} // namespace detkit
