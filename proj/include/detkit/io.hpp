#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "bench.hpp"
#include "data_io.hpp"
#include "error.hpp"
#include "evaluation.hpp"
#include "postproc.hpp"

namespace detkit {

enum class OutputFormat { Csv, Json };

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open '" + path.string() + "' for reading");
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) {
        throw IoError("error reading '" + path.string() + "'");
    }
    return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view content) {
    std::error_code ec;
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path(), ec);
        if (ec) {
            throw IoError("cannot create directory '" + path.parent_path().string() + "': " + ec.message());
        }
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open '" + path.string() + "' for writing");
    }
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) {
        throw IoError("error writing '" + path.string() + "'");
    }
}

// ---------------------------------------------------------------------------
// Generic CSV table (no quoting; fields must not contain commas)
// ---------------------------------------------------------------------------

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::optional<std::size_t> column(std::string_view name) const {
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (header[i] == name) {
                return i;
            }
        }
        return std::nullopt;
    }
};

inline CsvTable parse_csv(std::string_view text) {
    CsvTable t;
    std::size_t line_no = 0;
    for (auto line : detail::split(text, '\n')) {
        ++line_no;
        line = detail::trim(line);
        if (line.empty() || line.front() == '#') {
            continue;
        }
        std::vector<std::string> fields;
        for (auto f : detail::split(line, ',')) {
            fields.emplace_back(detail::trim(f));
        }
        if (t.header.empty()) {
            t.header = std::move(fields);
            continue;
        }
        if (fields.size() != t.header.size()) {
            throw ParseError("line " + std::to_string(line_no) + ": expected " + std::to_string(t.header.size()) +
                             " fields, got " + std::to_string(fields.size()));
        }
        t.rows.push_back(std::move(fields));
    }
    return t;
}

// ---------------------------------------------------------------------------
// Detections: CSV or JSON lines with
//   image_id, class_id, score, x_min, y_min, x_max, y_max
// ---------------------------------------------------------------------------

inline constexpr std::string_view kDetectionCsvHeader = "image_id,class_id,score,x_min,y_min,x_max,y_max";

inline std::string format_detections(const std::vector<Detection>& dets, OutputFormat fmt) {
    std::string out;
    if (fmt == OutputFormat::Csv) {
        out += kDetectionCsvHeader;
        out += '\n';
        for (const auto& d : dets) {
            out += d.image_id + "," + std::to_string(d.class_id) + "," + format_double(d.score) + "," +
                   format_double(d.box.x_min) + "," + format_double(d.box.y_min) + "," + format_double(d.box.x_max) +
                   "," + format_double(d.box.y_max) + "\n";
        }
        return out;
    }
    for (const auto& d : dets) {
        nlohmann::ordered_json j;
        j["image_id"] = d.image_id;
        j["class_id"] = d.class_id;
        j["score"] = d.score;
        j["x_min"] = d.box.x_min;
        j["y_min"] = d.box.y_min;
        j["x_max"] = d.box.x_max;
        j["y_max"] = d.box.y_max;
        out += j.dump();
        out += '\n';
    }
    return out;
}

namespace detail {
    inline Detection detection_from_fields(const std::vector<std::string_view>& f, const std::string& where) {
        Detection d;
        d.image_id = std::string(trim(f[0]));
        const auto cls = parse_number<int>(f[1]);
        if (!cls || *cls < 0) {
            throw ParseError(where + ": bad class_id '" + std::string(f[1]) + "'");
        }
        d.class_id = *cls;
        double v[5];
        for (std::size_t i = 0; i < 5; ++i) {
            const auto x = parse_number<double>(f[i + 2]);
            if (!x) {
                throw ParseError(where + ": field " + std::to_string(i + 3) + " is not a number");
            }
            v[i] = *x;
        }
        d.score = v[0];
        d.box = Box{v[1], v[2], v[3], v[4]};
        return d;
    }

    inline void check_detection(const Detection& d, const std::string& where) {
        if (!(d.score >= 0.0 && d.score <= 1.0)) {
            throw ParseError(where + ": score outside [0, 1]");
        }
        if (!d.box.valid()) {
            throw ParseError(where + ": invalid box");
        }
    }
} // namespace detail

/// Reads detections in either layout; JSON lines are recognised by a leading
/// '{'. A CSV header row is optional.
inline std::vector<Detection> parse_detections(std::string_view text) {
    std::vector<Detection> out;
    std::size_t line_no = 0;
    for (auto line : detail::split(text, '\n')) {
        ++line_no;
        line = detail::trim(line);
        if (line.empty()) {
            continue;
        }
        const std::string where = "line " + std::to_string(line_no);
        Detection d;
        if (line.front() == '{') {
            try {
                const auto j = nlohmann::json::parse(line);
                d.image_id = j.at("image_id").is_string() ? j.at("image_id").get<std::string>() : j.at("image_id").dump();
                d.class_id = j.at("class_id").get<int>();
                d.score = j.at("score").get<double>();
                d.box = Box{j.at("x_min").get<double>(), j.at("y_min").get<double>(), j.at("x_max").get<double>(),
                            j.at("y_max").get<double>()};
            } catch (const nlohmann::json::exception& e) {
                throw ParseError(where + ": " + e.what());
            }
            if (d.class_id < 0) {
                throw ParseError(where + ": negative class_id");
            }
        } else {
            const auto f = detail::split(line, ',');
            if (f.size() != 7) {
                throw ParseError(where + ": expected 7 fields, got " + std::to_string(f.size()));
            }
            if (detail::trim(f[0]) == "image_id") {
                continue;
            }
            d = detail::detection_from_fields(f, where);
        }
        detail::check_detection(d, where);
        out.push_back(std::move(d));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Ground truth CSV: image_id, class_id, x_min, y_min, x_max, y_max, difficult
// ---------------------------------------------------------------------------

inline constexpr std::string_view kGroundTruthCsvHeader = "image_id,class_id,x_min,y_min,x_max,y_max,difficult";

inline std::string format_ground_truth_csv(const std::vector<GroundTruthInstance>& gts) {
    std::string out(kGroundTruthCsvHeader);
    out += '\n';
    for (const auto& g : gts) {
        out += g.image_id + "," + std::to_string(g.class_id) + "," + format_double(g.box.x_min) + "," +
               format_double(g.box.y_min) + "," + format_double(g.box.x_max) + "," + format_double(g.box.y_max) + "," +
               (g.difficult ? "1" : "0") + "\n";
    }
    return out;
}

inline std::vector<GroundTruthInstance> parse_ground_truth_csv(std::string_view text) {
    std::vector<GroundTruthInstance> out;
    std::size_t line_no = 0;
    for (auto line : detail::split(text, '\n')) {
        ++line_no;
        line = detail::trim(line);
        if (line.empty()) {
            continue;
        }
        const std::string where = "line " + std::to_string(line_no);
        const auto f = detail::split(line, ',');
        if (f.size() != 7 && f.size() != 6) {
            throw ParseError(where + ": expected 6 or 7 fields, got " + std::to_string(f.size()));
        }
        if (detail::trim(f[0]) == "image_id") {
            continue;
        }
        GroundTruthInstance g;
        g.image_id = std::string(detail::trim(f[0]));
        const auto cls = detail::parse_number<int>(f[1]);
        if (!cls || *cls < 0) {
            throw ParseError(where + ": bad class_id");
        }
        g.class_id = *cls;
        double v[4];
        for (std::size_t i = 0; i < 4; ++i) {
            const auto x = detail::parse_number<double>(f[i + 2]);
            if (!x) {
                throw ParseError(where + ": field " + std::to_string(i + 3) + " is not a number");
            }
            v[i] = *x;
        }
        g.box = Box{v[0], v[1], v[2], v[3]};
        if (!g.box.valid()) {
            throw ParseError(where + ": invalid box");
        }
        if (f.size() == 7) {
            const auto diff = detail::parse_number<int>(f[6]);
            if (!diff) {
                throw ParseError(where + ": bad difficult flag");
            }
            g.difficult = *diff != 0;
        }
        out.push_back(std::move(g));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Evaluation report
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json report_to_json(const EvalReport& r) {
    nlohmann::ordered_json j;
    j["iou_thresholds"] = r.iou_thresholds;
    j["map_per_threshold"] = r.map_per_threshold;
    auto& agg = j["aggregate"];
    agg["precision"] = r.aggregate.precision;
    agg["recall"] = r.aggregate.recall;
    agg["f1"] = r.aggregate.f1;
    agg["map50"] = r.aggregate.map50;
    agg["map50_95"] = r.aggregate.map50_95;
    auto& per = j["per_class"];
    per = nlohmann::ordered_json::array();
    for (const auto& [cls, m] : r.per_class) {
        per.push_back({{"class_id", cls},
                       {"num_gt", m.num_gt},
                       {"tp", m.tp},
                       {"fp", m.fp},
                       {"precision", m.precision},
                       {"recall", m.recall},
                       {"f1", m.f1},
                       {"ap50", m.ap50},
                       {"ap50_95", m.ap50_95}});
    }
    const std::size_t n = r.confusion.num_classes() + 1;
    auto rows = nlohmann::ordered_json::array();
    for (std::size_t a = 0; a < n; ++a) {
        auto row = nlohmann::ordered_json::array();
        for (std::size_t b = 0; b < n; ++b) {
            row.push_back(r.confusion.at(a, b));
        }
        rows.push_back(std::move(row));
    }
    j["confusion"] = {{"num_classes", r.confusion.num_classes()}, {"background_index", r.confusion.background()},
                      {"rows_gt_cols_pred", std::move(rows)}};
    return j;
}

/// One row per class with ground truth, then an "all" row.
inline std::string report_to_csv(const EvalReport& r) {
    std::string out = "class,num_gt,precision,recall,f1,ap50,ap50_95\n";
    for (const auto& [cls, m] : r.per_class) {
        out += std::to_string(cls) + "," + std::to_string(m.num_gt) + "," + format_double(m.precision) + "," +
               format_double(m.recall) + "," + format_double(m.f1) + "," + format_double(m.ap50) + "," +
               format_double(m.ap50_95) + "\n";
    }
    std::size_t total = 0;
    for (const auto& [cls, m] : r.per_class) {
        total += m.num_gt;
    }
    const auto& a = r.aggregate;
    out += "all," + std::to_string(total) + "," + format_double(a.precision) + "," + format_double(a.recall) + "," +
           format_double(a.f1) + "," + format_double(a.map50) + "," + format_double(a.map50_95) + "\n";
    return out;
}

// ---------------------------------------------------------------------------
// Model tables and Pareto output
// ---------------------------------------------------------------------------

inline constexpr std::string_view kCostKeys[] = {"gpu_latency_ms", "cpu_latency_ms", "params_m", "size_mb", "gflops"};

/// Builds model records from a table with at least `name`, the accuracy
/// column and the cost columns. With a `dataset` column only matching rows are
/// used. Rows whose accuracy cell is empty are skipped; empty cost cells are
/// simply absent from the record.
inline std::vector<ModelRecord> models_from_table(const CsvTable& t, const std::string& accuracy_column,
                                                  const std::optional<std::string>& dataset = std::nullopt) {
    const auto name_col = t.column("name");
    const auto acc_col = t.column(accuracy_column);
    if (!name_col) {
        throw ParseError("model table has no 'name' column");
    }
    if (!acc_col) {
        throw ParseError("model table has no '" + accuracy_column + "' column");
    }
    const auto ds_col = t.column("dataset");
    std::vector<ModelRecord> out;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        if (dataset && ds_col && detail::lower(row[*ds_col]) != detail::lower(*dataset)) {
            continue;
        }
        if (row[*acc_col].empty()) {
            continue;
        }
        ModelRecord m;
        m.name = row[*name_col];
        const auto acc = detail::parse_number<double>(row[*acc_col]);
        if (!acc) {
            throw ParseError("row " + std::to_string(r + 1) + ": bad " + accuracy_column);
        }
        m.accuracy = *acc;
        for (auto key : kCostKeys) {
            const auto c = t.column(key);
            if (!c || row[*c].empty()) {
                continue;
            }
            const auto v = detail::parse_number<double>(row[*c]);
            if (!v || *v <= 0.0) {
                throw ParseError("row " + std::to_string(r + 1) + ": bad " + std::string(key));
            }
            m.costs[std::string(key)] = *v;
        }
        if (m.costs.empty()) {
            throw ParseError("row " + std::to_string(r + 1) + ": model '" + m.name + "' has no cost columns");
        }
        out.push_back(std::move(m));
    }
    return out;
}

inline std::string pareto_to_csv(const std::vector<ParetoPoint>& pts) {
    std::string out = "name,accuracy,cost,on_frontier\n";
    for (const auto& p : pts) {
        out += p.name + "," + format_double(p.accuracy) + "," + format_double(p.cost) + "," +
               (p.on_frontier ? "1" : "0") + "\n";
    }
    return out;
}

inline nlohmann::ordered_json pareto_to_json(const std::vector<ParetoPoint>& pts, const std::string& cost_key) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& p : pts) {
        nlohmann::ordered_json j{{"name", p.name}, {"accuracy", p.accuracy}, {"cost", p.cost}, {"on_frontier", p.on_frontier}};
        j["dominated_by"] = p.dominated_by ? nlohmann::ordered_json(*p.dominated_by) : nlohmann::ordered_json(nullptr);
        arr.push_back(std::move(j));
    }
    return {{"cost_key", cost_key}, {"models", std::move(arr)}};
}

// ---------------------------------------------------------------------------
// Latency, training and scene outputs
// ---------------------------------------------------------------------------

inline std::string latency_to_csv(const std::vector<LatencyReport>& reps) {
    std::string out = "mode,candidate_count,repetitions,median_ns,p95_ns,max_ns,mean_ns,stddev_ns,survivors,scene_digest\n";
    for (const auto& r : reps) {
        out += std::string(to_string(r.mode)) + "," + std::to_string(r.candidate_count) + "," +
               std::to_string(r.repetitions) + "," + std::to_string(r.median_ns) + "," + std::to_string(r.p95_ns) +
               "," + std::to_string(r.max_ns) + "," + format_double(r.mean_ns) + "," + format_double(r.stddev_ns) +
               "," + std::to_string(r.survivors) + "," + r.scene_digest + "\n";
    }
    return out;
}

inline nlohmann::ordered_json latency_to_json(const std::vector<LatencyReport>& reps) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& r : reps) {
        arr.push_back({{"mode", to_string(r.mode)},
                       {"candidate_count", r.candidate_count},
                       {"repetitions", r.repetitions},
                       {"median_ns", r.median_ns},
                       {"p95_ns", r.p95_ns},
                       {"max_ns", r.max_ns},
                       {"mean_ns", r.mean_ns},
                       {"stddev_ns", r.stddev_ns},
                       {"survivors", r.survivors},
                       {"scene_digest", r.scene_digest}});
    }
    return arr;
}

inline std::string trajectory_to_csv(const std::vector<double>& losses) {
    std::string out = "epoch,loss\n";
    for (std::size_t e = 0; e < losses.size(); ++e) {
        out += std::to_string(e) + "," + format_double(losses[e]) + "\n";
    }
    return out;
}

inline nlohmann::ordered_json scene_to_json(const Scene& s) {
    nlohmann::ordered_json j;
    j["image_id"] = s.ground_truth.image_id;
    j["width"] = s.ground_truth.image_width;
    j["height"] = s.ground_truth.image_height;
    auto gts = nlohmann::ordered_json::array();
    for (const auto& g : s.ground_truth.instances) {
        gts.push_back({{"class_id", g.class_id},
                       {"x_min", g.box.x_min},
                       {"y_min", g.box.y_min},
                       {"x_max", g.box.x_max},
                       {"y_max", g.box.y_max}});
    }
    j["ground_truth"] = std::move(gts);
    auto dets = nlohmann::ordered_json::array();
    for (const auto& d : s.detections) {
        dets.push_back({{"class_id", d.class_id},
                        {"score", d.score},
                        {"x_min", d.box.x_min},
                        {"y_min", d.box.y_min},
                        {"x_max", d.box.x_max},
                        {"y_max", d.box.y_max}});
    }
    j["detections"] = std::move(dets);
    return j;
}

} // namespace detkit
