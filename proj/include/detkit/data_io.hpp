#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include "error.hpp"
#include "evaluation.hpp"
#include "geometry.hpp"
#include "postproc.hpp"
#include "rng.hpp"

namespace detkit {

// ---------------------------------------------------------------------------
// Class tables
// ---------------------------------------------------------------------------

inline constexpr std::array<std::string_view, 20> kVocClasses = {
    "aeroplane", "bicycle", "bird",  "boat",        "bottle", "bus",         "car",   "cat",  "chair", "cow",
    "diningtable", "dog",   "horse", "motorbike",   "person", "pottedplant", "sheep", "sofa", "train", "tvmonitor"};

// VisDrone2019-DET categories 1..10; 0 (ignored regions) and 11 (others) are
// dropped on load.
inline constexpr std::array<std::string_view, 10> kVisDroneClasses = {
    "pedestrian", "people", "bicycle", "car", "van", "truck", "tricycle", "awning-tricycle", "bus", "motor"};

// ---------------------------------------------------------------------------
// Text helpers
// ---------------------------------------------------------------------------

namespace detail {

    inline std::string_view trim(std::string_view s) noexcept {
        while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) {
            s.remove_prefix(1);
        }
        while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) {
            s.remove_suffix(1);
        }
        return s;
    }

    inline std::string lower(std::string_view s) {
        std::string out(s);
        std::transform(out.begin(), out.end(), out.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        return out;
    }

    inline std::vector<std::string_view> split(std::string_view s, char sep) {
        std::vector<std::string_view> out;
        std::size_t start = 0;
        for (;;) {
            const std::size_t pos = s.find(sep, start);
            if (pos == std::string_view::npos) {
                out.push_back(s.substr(start));
                return out;
            }
            out.push_back(s.substr(start, pos - start));
            start = pos + 1;
        }
    }

    inline std::vector<std::string_view> split_ws(std::string_view s) {
        std::vector<std::string_view> out;
        std::size_t i = 0;
        while (i < s.size()) {
            while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) {
                ++i;
            }
            const std::size_t start = i;
            while (i < s.size() && !std::isspace(static_cast<unsigned char>(s[i]))) {
                ++i;
            }
            if (i > start) {
                out.push_back(s.substr(start, i - start));
            }
        }
        return out;
    }

    template <typename T>
    std::optional<T> parse_number(std::string_view s) noexcept {
        s = trim(s);
        if (!s.empty() && s.front() == '+') {
            s.remove_prefix(1);
        }
        T value{};
        const auto* end = s.data() + s.size();
        const auto [ptr, ec] = std::from_chars(s.data(), end, value);
        if (s.empty() || ec != std::errc{} || ptr != end) {
            return std::nullopt;
        }
        if constexpr (std::is_floating_point_v<T>) {
            if (!std::isfinite(value)) {
                return std::nullopt;
            }
        }
        return value;
    }

} // namespace detail

/// Shortest decimal text that parses back to exactly `v`.
inline std::string format_double(double v) {
    std::array<char, 64> buf{};
    const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), ptr);
}

inline std::optional<int> voc_class_index(std::string_view name) {
    const std::string key = detail::lower(detail::trim(name));
    for (std::size_t i = 0; i < kVocClasses.size(); ++i) {
        if (kVocClasses[i] == key) {
            return static_cast<int>(i);
        }
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Records
// ---------------------------------------------------------------------------

struct AnnotationRecord {
    std::string image_id;
    int image_width{0};
    int image_height{0};
    std::vector<GroundTruthInstance> instances;

    friend bool operator==(const AnnotationRecord&, const AnnotationRecord&) = default;
};

/// File name without directory and extension.
inline std::string path_stem(std::string_view path) {
    const auto slash = path.find_last_of("/\\");
    if (slash != std::string_view::npos) {
        path.remove_prefix(slash + 1);
    }
    const auto dot = path.rfind('.');
    if (dot != std::string_view::npos && dot > 0) {
        path = path.substr(0, dot);
    }
    return std::string(path);
}

// ---------------------------------------------------------------------------
// Pascal VOC XML
// ---------------------------------------------------------------------------

/// Parses one VOC annotation document. The image id is the stem of
/// <filename>, or `fallback_id` when that element is absent. Boxes are clamped
/// into the image.
inline AnnotationRecord parse_voc_xml(const std::string& document, const std::string& fallback_id = {}) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try {
        std::istringstream in(document);
        pt::read_xml(in, tree, pt::xml_parser::trim_whitespace);
    } catch (const pt::xml_parser_error& e) {
        throw ParseError("malformed XML: " + std::string(e.message()) + " (line " + std::to_string(e.line()) + ")");
    }
    const auto root = tree.get_child_optional("annotation");
    if (!root) {
        throw ParseError("missing <annotation> element");
    }

    auto text_of = [](const pt::ptree& node, const std::string& path, const std::string& where) -> std::string {
        const auto v = node.get_optional<std::string>(path);
        if (!v) {
            throw ParseError("missing <" + path + "> in " + where);
        }
        return *v;
    };
    auto int_of = [&](const pt::ptree& node, const std::string& path, const std::string& where) {
        const std::string s = text_of(node, path, where);
        const auto v = detail::parse_number<int>(s);
        if (!v) {
            // Some exporters write integral sizes as "500.0".
            const auto d = detail::parse_number<double>(s);
            if (d && *d == std::floor(*d)) {
                return static_cast<int>(*d);
            }
            throw ParseError("<" + path + "> in " + where + ": not an integer: '" + s + "'");
        }
        return *v;
    };
    auto real_of = [&](const pt::ptree& node, const std::string& path, const std::string& where) {
        const std::string s = text_of(node, path, where);
        const auto v = detail::parse_number<double>(s);
        if (!v) {
            throw ParseError("<" + path + "> in " + where + ": not a number: '" + s + "'");
        }
        return *v;
    };

    AnnotationRecord rec;
    if (const auto fn = root->get_optional<std::string>("filename")) {
        rec.image_id = path_stem(detail::trim(*fn));
    }
    if (rec.image_id.empty()) {
        rec.image_id = fallback_id;
    }

    const auto size = root->get_child_optional("size");
    if (!size) {
        throw ParseError("missing <size> element");
    }
    rec.image_width = int_of(*size, "width", "<size>");
    rec.image_height = int_of(*size, "height", "<size>");
    if (rec.image_width <= 0 || rec.image_height <= 0) {
        throw ParseError("<size>: width and height must be positive");
    }

    std::size_t k = 0;
    for (const auto& [tag, node] : *root) {
        if (tag != "object") {
            continue;
        }
        const std::string where = "<object>[" + std::to_string(k++) + "]";
        const std::string name = text_of(node, "name", where);
        const auto cls = voc_class_index(name);
        if (!cls) {
            throw ParseError(where + " <name>: unknown class '" + name + "'");
        }
        const auto bb = node.get_child_optional("bndbox");
        if (!bb) {
            throw ParseError("missing <bndbox> in " + where);
        }
        const std::string bwhere = where + " <bndbox>";
        Box box{real_of(*bb, "xmin", bwhere), real_of(*bb, "ymin", bwhere), real_of(*bb, "xmax", bwhere),
                real_of(*bb, "ymax", bwhere)};
        if (!box.valid()) {
            throw ParseError(bwhere + ": min corner exceeds max corner");
        }
        bool difficult = false;
        if (node.get_child_optional("difficult")) {
            difficult = int_of(node, "difficult", where) != 0;
        }
        rec.instances.push_back(GroundTruthInstance{
            rec.image_id, *cls, box.clamped(rec.image_width, rec.image_height), difficult});
    }
    return rec;
}

/// Writes a minimal VOC document that parse_voc_xml reads back to the same
/// record.
inline std::string write_voc_xml(const AnnotationRecord& rec) {
    std::ostringstream out;
    out << "<annotation>\n"
        << "\t<filename>" << rec.image_id << ".jpg</filename>\n"
        << "\t<size>\n\t\t<width>" << rec.image_width << "</width>\n\t\t<height>" << rec.image_height
        << "</height>\n\t\t<depth>3</depth>\n\t</size>\n";
    for (const auto& inst : rec.instances) {
        detail::require(inst.class_id >= 0 && static_cast<std::size_t>(inst.class_id) < kVocClasses.size(),
                        "write_voc_xml: class id " + std::to_string(inst.class_id) + " is not a VOC class");
        out << "\t<object>\n\t\t<name>" << kVocClasses[static_cast<std::size_t>(inst.class_id)] << "</name>\n"
            << "\t\t<difficult>" << (inst.difficult ? 1 : 0) << "</difficult>\n"
            << "\t\t<bndbox>\n"
            << "\t\t\t<xmin>" << format_double(inst.box.x_min) << "</xmin>\n"
            << "\t\t\t<ymin>" << format_double(inst.box.y_min) << "</ymin>\n"
            << "\t\t\t<xmax>" << format_double(inst.box.x_max) << "</xmax>\n"
            << "\t\t\t<ymax>" << format_double(inst.box.y_max) << "</ymax>\n"
            << "\t\t</bndbox>\n\t</object>\n";
    }
    out << "</annotation>\n";
    return out.str();
}

// ---------------------------------------------------------------------------
// VisDrone text
// ---------------------------------------------------------------------------

/// One line of a VisDrone DET annotation file:
///   left,top,width,height,score,category,truncation,occlusion
/// Categories 1..10 map to class ids 0..9; 0 (ignored region) and 11 (others)
/// yield no instance. A single trailing comma is tolerated.
inline std::optional<GroundTruthInstance> parse_visdrone_line(std::string_view line, std::size_t line_no = 1) {
    const std::string where = "line " + std::to_string(line_no);
    line = detail::trim(line);
    if (!line.empty() && line.back() == ',') {
        line.remove_suffix(1);
    }
    const auto fields = detail::split(line, ',');
    if (fields.size() != 8) {
        throw ParseError(where + ": expected 8 comma-separated fields, got " + std::to_string(fields.size()));
    }
    std::array<long long, 8> v{};
    for (std::size_t i = 0; i < 8; ++i) {
        const auto x = detail::parse_number<long long>(fields[i]);
        if (!x) {
            throw ParseError(where + ": field " + std::to_string(i + 1) + " is not an integer: '" +
                             std::string(detail::trim(fields[i])) + "'");
        }
        v[i] = *x;
    }
    if (v[2] < 0 || v[3] < 0) {
        throw ParseError(where + ": negative box size");
    }
    const long long category = v[5];
    if (category < 0 || category > 11) {
        throw ParseError(where + ": category " + std::to_string(category) + " outside 0..11");
    }
    if (category == 0 || category == 11) {
        return std::nullopt;
    }
    GroundTruthInstance inst;
    inst.class_id = static_cast<int>(category - 1);
    const auto left = static_cast<double>(v[0]);
    const auto top = static_cast<double>(v[1]);
    inst.box = Box{left, top, left + static_cast<double>(v[2]), top + static_cast<double>(v[3])};
    return inst;
}

inline std::vector<GroundTruthInstance> parse_visdrone_text(std::string_view text, const std::string& image_id) {
    std::vector<GroundTruthInstance> out;
    std::size_t line_no = 0;
    for (auto line : detail::split(text, '\n')) {
        ++line_no;
        if (detail::trim(line).empty()) {
            continue;
        }
        if (auto inst = parse_visdrone_line(line, line_no)) {
            inst->image_id = image_id;
            out.push_back(std::move(*inst));
        }
    }
    return out;
}

inline std::string format_visdrone_line(const GroundTruthInstance& inst) {
    const auto l = static_cast<long long>(std::llround(inst.box.x_min));
    const auto t = static_cast<long long>(std::llround(inst.box.y_min));
    const auto w = static_cast<long long>(std::llround(inst.box.width()));
    const auto h = static_cast<long long>(std::llround(inst.box.height()));
    return std::to_string(l) + "," + std::to_string(t) + "," + std::to_string(w) + "," + std::to_string(h) + ",1," +
           std::to_string(inst.class_id + 1) + ",0,0";
}

// ---------------------------------------------------------------------------
// Normalised centre-form labels
// ---------------------------------------------------------------------------

struct NormalizedLabelLine {
    int class_id{0};
    double cx{0.0};
    double cy{0.0};
    double w{0.0};
    double h{0.0};

    friend bool operator==(const NormalizedLabelLine&, const NormalizedLabelLine&) = default;
};

inline NormalizedLabelLine normalize_box(const Box& box, int class_id, int width, int height) {
    detail::require(width > 0 && height > 0, "normalize_box: image dimensions must be positive");
    const auto W = static_cast<double>(width);
    const auto H = static_cast<double>(height);
    const Box b = box.clamped(W, H);
    return {class_id, b.center_x() / W, b.center_y() / H, b.width() / W, b.height() / H};
}

inline Box denormalize_box(const NormalizedLabelLine& l, int width, int height) {
    const auto W = static_cast<double>(width);
    const auto H = static_cast<double>(height);
    return Box::from_center(l.cx * W, l.cy * H, l.w * W, l.h * H);
}

inline std::vector<NormalizedLabelLine> to_normalized(const AnnotationRecord& rec) {
    detail::require(rec.image_width > 0 && rec.image_height > 0,
                    "to_normalized: image '" + rec.image_id + "' has no positive size");
    std::vector<NormalizedLabelLine> out;
    out.reserve(rec.instances.size());
    for (const auto& inst : rec.instances) {
        out.push_back(normalize_box(inst.box, inst.class_id, rec.image_width, rec.image_height));
    }
    return out;
}

inline AnnotationRecord from_normalized(const std::vector<NormalizedLabelLine>& lines, const std::string& image_id,
                                        int width, int height) {
    detail::require(width > 0 && height > 0, "from_normalized: image dimensions must be positive");
    AnnotationRecord rec{image_id, width, height, {}};
    for (const auto& l : lines) {
        rec.instances.push_back(GroundTruthInstance{image_id, l.class_id, denormalize_box(l, width, height), false});
    }
    return rec;
}

/// "class cx cy w h", shortest round-trip decimals.
inline std::string format_label_line(const NormalizedLabelLine& l) {
    return std::to_string(l.class_id) + " " + format_double(l.cx) + " " + format_double(l.cy) + " " +
           format_double(l.w) + " " + format_double(l.h);
}

inline std::vector<NormalizedLabelLine> parse_label_text(std::string_view text) {
    std::vector<NormalizedLabelLine> out;
    std::size_t line_no = 0;
    for (auto line : detail::split(text, '\n')) {
        ++line_no;
        if (detail::trim(line).empty()) {
            continue;
        }
        const auto f = detail::split_ws(line);
        const std::string where = "line " + std::to_string(line_no);
        if (f.size() != 5) {
            throw ParseError(where + ": expected 5 fields, got " + std::to_string(f.size()));
        }
        const auto cls = detail::parse_number<int>(f[0]);
        if (!cls || *cls < 0) {
            throw ParseError(where + ": bad class id '" + std::string(f[0]) + "'");
        }
        NormalizedLabelLine l{*cls};
        double* slots[] = {&l.cx, &l.cy, &l.w, &l.h};
        for (std::size_t i = 0; i < 4; ++i) {
            const auto v = detail::parse_number<double>(f[i + 1]);
            if (!v) {
                throw ParseError(where + ": field " + std::to_string(i + 2) + " is not a number");
            }
            *slots[i] = *v;
        }
        out.push_back(l);
    }
    return out;
}

inline std::string format_label_text(const std::vector<NormalizedLabelLine>& lines) {
    std::string out;
    for (const auto& l : lines) {
        out += format_label_line(l);
        out += '\n';
    }
    return out;
}

// ---------------------------------------------------------------------------
// Seeded split
// ---------------------------------------------------------------------------

/// Shuffles `ids` with SplitMix64(seed) (see SplitMix64::shuffle) and cuts it
/// into a first part of ceil(n * first_fraction) items and the remainder.
template <typename T>
std::pair<std::vector<T>, std::vector<T>> seeded_split(std::vector<T> ids, double first_fraction,
                                                       double second_fraction, std::uint64_t seed) {
    detail::require(first_fraction >= 0.0 && second_fraction >= 0.0, "seeded_split: negative fraction");
    detail::require(std::abs(first_fraction + second_fraction - 1.0) <= 1e-9,
                    "seeded_split: fractions must sum to 1");
    SplitMix64 rng(seed);
    rng.shuffle(std::span<T>(ids));
    const auto n = static_cast<double>(ids.size());
    // the 1e-9 slack keeps products like 10 * 0.3 from rounding up a whole item
    auto first = static_cast<std::size_t>(std::max(0.0, std::ceil(n * first_fraction - 1e-9)));
    first = std::min(first, ids.size());
    std::vector<T> a(std::make_move_iterator(ids.begin()),
                     std::make_move_iterator(ids.begin() + static_cast<std::ptrdiff_t>(first)));
    std::vector<T> b(std::make_move_iterator(ids.begin() + static_cast<std::ptrdiff_t>(first)),
                     std::make_move_iterator(ids.end()));
    return {std::move(a), std::move(b)};
}

// ---------------------------------------------------------------------------
// Synthetic scenes
// ---------------------------------------------------------------------------

inline constexpr double kSmallObjectSide = 32.0;

struct SyntheticSceneSpec {
    std::string image_id{"scene"};
    int width{640};
    int height{640};
    std::size_t num_objects{10};
    std::optional<double> mean_objects;  // when set, object count ~ Poisson(mean)
    double small_fraction{0.05};         // share of objects under 32x32 px
    int num_classes{20};
    std::size_t duplicates_per_gt{10};   // noisy candidates emitted per object
    double overlap_jitter{0.1};          // candidate offset, relative to object size
    double max_gt_iou{0.5};              // placement constraint between objects
    std::size_t false_positives{0};
    int max_attempts_per_object{1000};
    std::uint64_t seed{0};

    static SyntheticSceneSpec voc_profile(std::uint64_t seed) {
        SyntheticSceneSpec s;
        s.width = 500;
        s.height = 375;
        s.mean_objects = 2.3;
        s.small_fraction = 0.05;
        s.num_classes = 20;
        s.seed = seed;
        return s;
    }

    static SyntheticSceneSpec visdrone_profile(std::uint64_t seed) {
        SyntheticSceneSpec s;
        s.width = 1360;
        s.height = 765;
        s.mean_objects = 34.6;
        s.small_fraction = 0.75;
        s.num_classes = 10;
        s.seed = seed;
        return s;
    }

    void validate() const {
        detail::require(width > 0 && height > 0, "SyntheticSceneSpec: image size must be positive");
        detail::require(small_fraction >= 0.0 && small_fraction <= 1.0, "SyntheticSceneSpec: small_fraction outside [0, 1]");
        detail::require(num_classes >= 1, "SyntheticSceneSpec: num_classes must be >= 1");
        detail::require(overlap_jitter >= 0.0 && overlap_jitter < 1.0, "SyntheticSceneSpec: overlap_jitter outside [0, 1)");
        detail::require(max_gt_iou >= 0.0 && max_gt_iou <= 1.0, "SyntheticSceneSpec: max_gt_iou outside [0, 1]");
        detail::require(!mean_objects || *mean_objects >= 0.0, "SyntheticSceneSpec: negative mean_objects");
        detail::require(std::min(width, height) > static_cast<int>(kSmallObjectSide),
                        "SyntheticSceneSpec: image must be larger than 32 px on each side");
    }
};

struct Scene {
    AnnotationRecord ground_truth;
    std::vector<Detection> detections;
};

/// Places objects at random (respecting max_gt_iou between objects) and emits
/// duplicates_per_gt jittered candidates for each, the first one scoring
/// highest, plus uniformly random false positives. Identical specs give
/// identical scenes.
inline Scene generate_scene(const SyntheticSceneSpec& spec) {
    spec.validate();
    SplitMix64 rng(spec.seed);
    const auto W = static_cast<double>(spec.width);
    const auto H = static_cast<double>(spec.height);
    const std::size_t count = spec.mean_objects ? static_cast<std::size_t>(rng.poisson(*spec.mean_objects)) : spec.num_objects;

    Scene scene;
    scene.ground_truth = AnnotationRecord{spec.image_id, spec.width, spec.height, {}};
    auto& gts = scene.ground_truth.instances;
    gts.reserve(count);

    const double large_max = std::max(kSmallObjectSide + 1.0, 0.5 * std::min(W, H));
    for (std::size_t i = 0; i < count; ++i) {
        const bool small = rng.uniform() < spec.small_fraction;
        const int cls = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.num_classes)));
        bool placed = false;
        for (int attempt = 0; attempt < spec.max_attempts_per_object && !placed; ++attempt) {
            const double w = small ? rng.uniform(4.0, kSmallObjectSide) : rng.uniform(kSmallObjectSide, large_max);
            const double h = small ? rng.uniform(4.0, kSmallObjectSide) : rng.uniform(kSmallObjectSide, large_max);
            const double x = rng.uniform(0.0, W - w);
            const double y = rng.uniform(0.0, H - h);
            const Box box{x, y, x + w, y + h};
            const bool clear = std::none_of(gts.begin(), gts.end(), [&](const GroundTruthInstance& g) {
                return iou(g.box, box) > spec.max_gt_iou;
            });
            if (clear) {
                gts.push_back(GroundTruthInstance{spec.image_id, cls, box, false});
                placed = true;
            }
        }
        if (!placed) {
            throw ContractError("generate_scene: placed only " + std::to_string(gts.size()) + " of " +
                                std::to_string(count) + " objects in " + std::to_string(spec.width) + "x" +
                                std::to_string(spec.height) + " (max_gt_iou " + format_double(spec.max_gt_iou) + ")");
        }
    }

    auto& dets = scene.detections;
    dets.reserve(gts.size() * spec.duplicates_per_gt + spec.false_positives);
    const double j = spec.overlap_jitter;
    for (const auto& g : gts) {
        const double best = rng.uniform(0.5, 1.0);
        for (std::size_t k = 0; k < spec.duplicates_per_gt; ++k) {
            const double spread = k == 0 ? 0.25 * j : j;
            const double w = g.box.width() * rng.uniform(1.0 - spread, 1.0 + spread);
            const double h = g.box.height() * rng.uniform(1.0 - spread, 1.0 + spread);
            const double cx = g.box.center_x() + g.box.width() * rng.uniform(-spread, spread);
            const double cy = g.box.center_y() + g.box.height() * rng.uniform(-spread, spread);
            const double score = k == 0 ? best : rng.uniform(0.05, best);
            dets.push_back(Detection{Box::from_center(cx, cy, w, h).clamped(W, H), g.class_id, score, spec.image_id});
        }
    }
    for (std::size_t k = 0; k < spec.false_positives; ++k) {
        const double w = rng.uniform(4.0, large_max);
        const double h = rng.uniform(4.0, large_max);
        const double x = rng.uniform(0.0, W - w);
        const double y = rng.uniform(0.0, H - h);
        const int cls = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.num_classes)));
        dets.push_back(Detection{Box{x, y, x + w, y + h}, cls, rng.uniform(0.01, 0.5), spec.image_id});
    }
    return scene;
}

} // namespace detkit
