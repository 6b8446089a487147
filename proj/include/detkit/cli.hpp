#pragma once

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bench.hpp"
#include "data_io.hpp"
#include "error.hpp"
#include "evaluation.hpp"
#include "io.hpp"
#include "optimizer.hpp"
#include "postproc.hpp"

namespace detkit::cli {

namespace fs = std::filesystem;

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kContractError = 1;
inline constexpr int kIoError = 2;

struct GlobalOptions {
    std::uint64_t seed{0};
    std::string output_dir{"."};
    std::string format{"csv"};

    OutputFormat output_format() const { return format == "json" ? OutputFormat::Json : OutputFormat::Csv; }
};

namespace detail {

    inline std::vector<fs::path> files_with_extension(const fs::path& root, const std::string& ext) {
        if (!fs::is_directory(root)) {
            throw IoError("'" + root.string() + "' is not a directory");
        }
        std::vector<fs::path> out;
        for (const auto& e : fs::recursive_directory_iterator(root)) {
            if (e.is_regular_file() && detkit::detail::lower(e.path().extension().string()) == ext) {
                out.push_back(e.path());
            }
        }
        std::sort(out.begin(), out.end());
        return out;
    }

    // image_id,width,height
    inline std::map<std::string, std::pair<int, int>> read_image_sizes(const fs::path& path) {
        const CsvTable t = parse_csv(read_file(path));
        const auto id = t.column("image_id");
        const auto w = t.column("width");
        const auto h = t.column("height");
        if (!id || !w || !h) {
            throw ParseError(path.string() + ": expected columns image_id,width,height");
        }
        std::map<std::string, std::pair<int, int>> out;
        for (const auto& row : t.rows) {
            const auto wv = detkit::detail::parse_number<int>(row[*w]);
            const auto hv = detkit::detail::parse_number<int>(row[*h]);
            if (!wv || !hv || *wv <= 0 || *hv <= 0) {
                throw ParseError(path.string() + ": bad size for '" + row[*id] + "'");
            }
            out[row[*id]] = {*wv, *hv};
        }
        return out;
    }

    inline std::vector<GroundTruthInstance> load_ground_truth(const fs::path& path, std::string format) {
        if (format == "auto") {
            if (fs::is_regular_file(path)) {
                format = "csv";
            } else if (!files_with_extension(path, ".xml").empty()) {
                format = "voc";
            } else {
                format = "visdrone";
            }
        }
        if (format == "csv") {
            return parse_ground_truth_csv(read_file(path));
        }
        std::vector<GroundTruthInstance> out;
        if (format == "voc") {
            for (const auto& f : files_with_extension(path, ".xml")) {
                try {
                    auto rec = parse_voc_xml(read_file(f), path_stem(f.string()));
                    out.insert(out.end(), rec.instances.begin(), rec.instances.end());
                } catch (const ParseError& e) {
                    throw ParseError(f.string() + ": " + e.what());
                }
            }
            return out;
        }
        for (const auto& f : files_with_extension(path, ".txt")) {
            try {
                auto inst = parse_visdrone_text(read_file(f), path_stem(f.string()));
                out.insert(out.end(), inst.begin(), inst.end());
            } catch (const ParseError& e) {
                throw ParseError(f.string() + ": " + e.what());
            }
        }
        return out;
    }

    inline std::string with_extension(const std::string& stem, OutputFormat fmt, bool lines = false) {
        if (fmt == OutputFormat::Csv) {
            return stem + ".csv";
        }
        return stem + (lines ? ".jsonl" : ".json");
    }

} // namespace detail

/// Parses argv-style arguments (without the program name) and runs the chosen
/// subcommand. Reports go under --output-dir; human-readable summaries go to
/// `out`, diagnostics and usage to `err`.
inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"detkit: detection post-processing, evaluation and benchmarking tools"};
    app.set_config("--config", "", "Key-value config file; command-line flags take precedence");
    app.require_subcommand(1);
    app.fallthrough();

    GlobalOptions g;
    app.add_option("--seed", g.seed, "Seed for every random choice")->capture_default_str();
    app.add_option("--output-dir", g.output_dir, "Directory receiving reports")->capture_default_str();
    app.add_option("--format", g.format, "Report format")->check(CLI::IsMember({"csv", "json"}))->capture_default_str();

    // convert
    auto* convert = app.add_subcommand("convert", "Convert a VOC or VisDrone annotation tree to normalised labels");
    std::string conv_from, conv_input, conv_sizes;
    convert->add_option("--from", conv_from, "Input annotation format")->required()->check(CLI::IsMember({"voc", "visdrone"}));
    convert->add_option("--input", conv_input, "Annotation directory")->required();
    convert->add_option("--image-sizes", conv_sizes, "CSV image_id,width,height (VisDrone only)");

    // split
    auto* split = app.add_subcommand("split", "Deterministic two-way split of an id list");
    std::string split_ids;
    std::vector<double> split_fractions{0.5, 0.5};
    std::vector<std::string> split_names{"test", "val"};
    split->add_option("--ids", split_ids, "File with one id per line")->required();
    split->add_option("--fractions", split_fractions, "Two fractions summing to 1")->delimiter(',')->expected(2);
    split->add_option("--names", split_names, "Output list names")->delimiter(',')->expected(2);

    // eval
    auto* eval = app.add_subcommand("eval", "Score detections against ground truth");
    std::string eval_dets, eval_gts, eval_gt_format{"auto"}, eval_iou_mode{"coco"}, eval_avg{"macro"};
    double eval_conf = 0.25;
    std::size_t eval_classes = 0;
    bool eval_keep_difficult = false;
    eval->add_option("--dets", eval_dets, "Detections (CSV or JSON lines)")->required();
    eval->add_option("--gts", eval_gts, "Ground truth: VOC/VisDrone directory or CSV file")->required();
    eval->add_option("--gt-format", eval_gt_format)->check(CLI::IsMember({"auto", "voc", "visdrone", "csv"}));
    eval->add_option("--iou-mode", eval_iou_mode, "coco: 101-point AP; voc: 11-point AP")
        ->check(CLI::IsMember({"coco", "voc"}));
    eval->add_option("--conf", eval_conf, "Score floor for precision/recall and the confusion matrix");
    eval->add_option("--averaging", eval_avg)->check(CLI::IsMember({"macro", "micro"}));
    eval->add_option("--num-classes", eval_classes, "Class count (0 = infer)");
    eval->add_flag("--keep-difficult", eval_keep_difficult, "Score difficult objects like any other");

    // nms
    auto* nmscmd = app.add_subcommand("nms", "Run the post-processing pipeline on a detection file");
    std::string nms_dets, nms_mode{"nms"};
    PipelineConfig nms_cfg;
    std::size_t nms_max_det = 300;
    bool nms_agnostic = false;
    nmscmd->add_option("--dets", nms_dets, "Detections (CSV or JSON lines)")->required();
    nmscmd->add_option("--mode", nms_mode)->check(CLI::IsMember({"nms", "e2e"}));
    nmscmd->add_option("--iou", nms_cfg.iou_threshold, "Suppression IoU threshold");
    nmscmd->add_option("--conf", nms_cfg.conf_threshold, "Confidence floor");
    nmscmd->add_option("--max-det", nms_max_det, "Maximum detections per image (0 = unlimited)");
    nmscmd->add_flag("--class-agnostic", nms_agnostic, "Suppress across classes");

    // pareto
    auto* pareto = app.add_subcommand("pareto", "Accuracy/cost Pareto frontier of a model table");
    std::string par_input, par_cost{"gpu_latency_ms"}, par_dataset{"voc"}, par_acc{"map50_95"};
    pareto->add_option("--input", par_input, "Model table CSV")->required();
    pareto->add_option("--cost", par_cost)->check(CLI::IsMember(
        {"gpu_latency_ms", "cpu_latency_ms", "params_m", "size_mb", "gflops"}));
    pareto->add_option("--dataset", par_dataset, "Rows to use when the table has a dataset column");
    pareto->add_option("--accuracy", par_acc, "Accuracy column");

    // bench
    auto* bench = app.add_subcommand("bench", "Post-processing latency versus candidate count");
    std::vector<std::size_t> bench_counts{100, 1000, 5000};
    std::string bench_mode{"both"};
    std::size_t bench_reps = 100;
    std::size_t bench_max_det = 300;
    PipelineConfig bench_cfg;
    BenchOptions bench_opts;
    bool bench_dump = false;
    bench->add_option("--counts", bench_counts, "Ascending candidate counts")->delimiter(',');
    bench->add_option("--mode", bench_mode)->check(CLI::IsMember({"nms", "e2e", "both"}));
    bench->add_option("--reps", bench_reps, "Timed repetitions per cell (>= 30)");
    bench->add_option("--iou", bench_cfg.iou_threshold);
    bench->add_option("--conf", bench_cfg.conf_threshold);
    bench->add_option("--max-det", bench_max_det, "0 = unlimited");
    bench->add_option("--duplicates", bench_opts.duplicates_per_gt, "Candidates per object");
    bench->add_flag("--parallel", bench_opts.parallel, "Run cells concurrently");
    bench->add_flag("--dump-scenes", bench_dump, "Write each scene as JSON");

    // train-toy
    auto* train = app.add_subcommand("train-toy", "Train the two-layer toy model with the spectral update");
    int train_epochs = 200;
    MuSgdConfig train_cfg;
    std::size_t train_hidden = 3, train_samples = 8;
    std::string train_rule{"spectral"};
    std::vector<double> train_prog;
    train->add_option("--epochs", train_epochs);
    train->add_option("--eta", train_cfg.eta, "Step size");
    train->add_option("--hidden", train_hidden);
    train->add_option("--samples", train_samples);
    train->add_option("--rule", train_rule)->check(CLI::IsMember({"spectral", "orthogonal"}));
    train->add_option("--progloss", train_prog, "lambda_max,lambda_min")->delimiter(',')->expected(2);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp& e) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return kContractError;
    }

    const fs::path outdir(g.output_dir);
    const OutputFormat fmt = g.output_format();
    try {
        if (*convert) {
            const fs::path root(conv_input);
            std::size_t files = 0, instances = 0;
            if (conv_from == "voc") {
                for (const auto& f : detail::files_with_extension(root, ".xml")) {
                    AnnotationRecord rec;
                    try {
                        rec = parse_voc_xml(read_file(f), path_stem(f.string()));
                    } catch (const ParseError& e) {
                        throw ParseError(f.string() + ": " + e.what());
                    }
                    fs::path rel = fs::relative(f, root);
                    rel.replace_extension(".txt");
                    write_file(outdir / rel, format_label_text(to_normalized(rec)));
                    ++files;
                    instances += rec.instances.size();
                }
            } else {
                if (conv_sizes.empty()) {
                    throw ContractError("convert --from visdrone needs --image-sizes (image_id,width,height)");
                }
                const auto sizes = detail::read_image_sizes(conv_sizes);
                for (const auto& f : detail::files_with_extension(root, ".txt")) {
                    const std::string id = path_stem(f.string());
                    const auto it = sizes.find(id);
                    if (it == sizes.end()) {
                        throw ContractError("no image size for '" + id + "'");
                    }
                    AnnotationRecord rec{id, it->second.first, it->second.second, {}};
                    try {
                        rec.instances = parse_visdrone_text(read_file(f), id);
                    } catch (const ParseError& e) {
                        throw ParseError(f.string() + ": " + e.what());
                    }
                    write_file(outdir / fs::relative(f, root), format_label_text(to_normalized(rec)));
                    ++files;
                    instances += rec.instances.size();
                }
            }
            std::string names;
            if (conv_from == "voc") {
                for (auto n : kVocClasses) {
                    names += std::string(n) + "\n";
                }
            } else {
                for (auto n : kVisDroneClasses) {
                    names += std::string(n) + "\n";
                }
            }
            write_file(outdir / "classes.txt", names);
            out << "converted " << files << " files, " << instances << " instances\n";
        } else if (*split) {
            const std::string listing = read_file(split_ids);
            std::vector<std::string> ids;
            for (auto line : detkit::detail::split(listing, '\n')) {
                line = detkit::detail::trim(line);
                if (!line.empty()) {
                    ids.emplace_back(line);
                }
            }
            auto [a, b] = seeded_split(std::move(ids), split_fractions[0], split_fractions[1], g.seed);
            auto join = [](const std::vector<std::string>& v) {
                std::string s;
                for (const auto& x : v) {
                    s += x + "\n";
                }
                return s;
            };
            write_file(outdir / (split_names[0] + ".txt"), join(a));
            write_file(outdir / (split_names[1] + ".txt"), join(b));
            out << split_names[0] << ": " << a.size() << ", " << split_names[1] << ": " << b.size() << "\n";
        } else if (*eval) {
            const auto dets = parse_detections(read_file(eval_dets));
            const auto gts = detail::load_ground_truth(eval_gts, eval_gt_format);
            EvalConfig cfg;
            cfg.interpolation = eval_iou_mode == "voc" ? ApInterpolation::Voc11 : ApInterpolation::Coco101;
            cfg.pr_conf_threshold = eval_conf;
            cfg.averaging = eval_avg == "micro" ? Averaging::Micro : Averaging::Macro;
            cfg.ignore_difficult = !eval_keep_difficult;
            cfg.num_classes = eval_classes;
            const EvalReport r = evaluate(dets, gts, cfg);
            write_file(outdir / "eval_report.json", report_to_json(r).dump(2) + "\n");
            write_file(outdir / "eval_report.csv", report_to_csv(r));
            out << "mAP50 " << format_double(r.aggregate.map50) << "  mAP50:95 " << format_double(r.aggregate.map50_95)
                << "  P " << format_double(r.aggregate.precision) << "  R " << format_double(r.aggregate.recall)
                << "  F1 " << format_double(r.aggregate.f1) << "\n";
        } else if (*nmscmd) {
            nms_cfg.mode = nms_mode == "e2e" ? PipelineMode::EndToEnd : PipelineMode::Nms;
            nms_cfg.class_aware = !nms_agnostic;
            nms_cfg.max_detections = nms_max_det == 0 ? kUnlimitedDetections : nms_max_det;
            const auto dets = parse_detections(read_file(nms_dets));
            const auto kept = run_pipeline_per_image(dets, nms_cfg);
            write_file(outdir / detail::with_extension(std::string("detections_") + to_string(nms_cfg.mode), fmt, true),
                       format_detections(kept, fmt));
            out << dets.size() << " -> " << kept.size() << " detections\n";
        } else if (*pareto) {
            const auto models = models_from_table(parse_csv(read_file(par_input)), par_acc, par_dataset);
            if (models.empty()) {
                throw ContractError("no rows with '" + par_acc + "' for dataset '" + par_dataset + "'");
            }
            const auto pts = pareto_analysis(models, par_cost);
            const std::string stem = "pareto_" + par_cost;
            write_file(outdir / detail::with_extension(stem, fmt),
                       fmt == OutputFormat::Csv ? pareto_to_csv(pts) : pareto_to_json(pts, par_cost).dump(2) + "\n");
            out << "frontier:";
            for (const auto& p : pts) {
                if (p.on_frontier) {
                    out << " " << p.name;
                }
            }
            out << "\n";
        } else if (*bench) {
            std::vector<PipelineMode> modes;
            if (bench_mode != "e2e") {
                modes.push_back(PipelineMode::Nms);
            }
            if (bench_mode != "nms") {
                modes.push_back(PipelineMode::EndToEnd);
            }
            bench_cfg.max_detections = bench_max_det == 0 ? kUnlimitedDetections : bench_max_det;
            const auto reps = bench_postproc(bench_counts, bench_cfg, modes, bench_reps, g.seed, bench_opts);
            write_file(outdir / detail::with_extension("latency", fmt),
                       fmt == OutputFormat::Csv ? latency_to_csv(reps) : latency_to_json(reps).dump(2) + "\n");
            if (bench_dump) {
                for (auto c : bench_counts) {
                    Scene s;
                    s.ground_truth.image_id = "bench";
                    s.detections = bench_scene(c, g.seed, bench_opts);
                    write_file(outdir / ("scene_" + std::to_string(c) + ".json"), scene_to_json(s).dump() + "\n");
                }
            }
            for (const auto& r : reps) {
                out << to_string(r.mode) << " n=" << r.candidate_count << " median " << r.median_ns << " ns, p95 "
                    << r.p95_ns << " ns\n";
            }
        } else if (*train) {
            detkit::detail::require(train_hidden >= 1 && train_samples >= 1, "train-toy: hidden and samples must be >= 1");
            train_cfg.rule = train_rule == "orthogonal" ? UpdateRule::Orthogonalized : UpdateRule::SpectralScale;
            constexpr std::size_t in = 3, outputs = 3;
            ToyModel model = ToyModel::random(in, train_hidden, outputs, g.seed);
            const ToyModel teacher = ToyModel::random(in, 4, outputs, g.seed + 1);
            SplitMix64 rng(g.seed + 2);
            std::vector<ToySample> data;
            for (std::size_t s = 0; s < train_samples; ++s) {
                Matrix x(1, in);
                for (double& v : x.data()) {
                    v = rng.uniform(-1.0, 1.0);
                }
                data.push_back(ToySample{x, toy_forward(teacher, x).output});
            }
            std::optional<ProgLossSchedule> schedule;
            if (!train_prog.empty()) {
                schedule.emplace(train_prog[0], train_prog[1], std::max(train_epochs, 1));
            }
            const auto result = train_toy(model, data, train_cfg, train_epochs, schedule);
            if (fmt == OutputFormat::Csv) {
                write_file(outdir / "trajectory.csv", trajectory_to_csv(result.losses));
            } else {
                nlohmann::ordered_json j;
                j["losses"] = result.losses;
                j["diverged"] = result.diverged;
                write_file(outdir / "trajectory.json", j.dump(2) + "\n");
            }
            if (result.diverged) {
                err << "warning: " << result.diagnostic << "\n";
            }
            out << "epochs " << result.losses.size();
            if (!result.losses.empty()) {
                out << ", final loss " << format_double(result.losses.back());
            }
            out << "\n";
        }
    } catch (const IoError& e) {
        err << "error: " << e.what() << "\n";
        return kIoError;
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return kIoError;
    } catch (const ContractError& e) {
        err << "error: " << e.what() << "\n";
        return kContractError;
    }
    return kOk;
}

} // namespace detkit::cli
