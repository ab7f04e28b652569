#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "osteo/error.hpp"
#include "osteo/pgm.hpp"
#include "osteo/rng.hpp"

namespace osteo {

enum class Label { Osteoporosis = 0, Normal = 1 };

inline const char* label_token(Label l) {
    return l == Label::Osteoporosis ? "osteoporosis" : "normal";
}

inline Label parse_label(const std::string& token, const std::string& context) {
    if (token == "osteoporosis") return Label::Osteoporosis;
    if (token == "normal") return Label::Normal;
    throw ParseError(context + ": unknown label '" + token + "'");
}

struct Point {
    double x = 0;
    double y = 0;
};

// One annotated radiograph. Landmarks follow a fixed convention: bilateral
// pairs adjacent, sites ordered condyle, mandible angle, premolar region,
// maxillary tuberosity; within a pair left side first. This keeps landmark
// pairs (1,2), (3,4), (5,6), (7,8) the bilaterally symmetric ones, which is
// what the group fusion downstream expects.
struct LandmarkAnnotation {
    std::string image_id;
    std::string image_path; // relative to the annotation file's directory
    Label label = Label::Normal;
    std::array<Point, 8> landmarks;
};

// Annotation text format: one record per line,
//   image_id image_path label x1,y1 x2,y2 ... x8,y8
// separated by whitespace; '#' starts a comment.
inline std::vector<LandmarkAnnotation> parse_annotations(std::istream& is,
                                                         const std::string& origin) {
    std::vector<LandmarkAnnotation> out;
    std::set<std::string> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        std::istringstream ls(line);
        LandmarkAnnotation ann;
        if (!(ls >> ann.image_id)) continue; // blank line
        const std::string context = origin + ":" + std::to_string(line_no) + " (" + ann.image_id + ")";

        std::string label_tok;
        if (!(ls >> ann.image_path >> label_tok))
            throw ParseError(context + ": expected image path and label");
        ann.label = parse_label(label_tok, context);

        std::size_t count = 0;
        std::string pair;
        while (ls >> pair) {
            if (count >= 8) throw ParseError(context + ": more than 8 landmarks");
            const auto comma = pair.find(',');
            if (comma == std::string::npos)
                throw ParseError(context + ": landmark '" + pair + "' is not x,y");
            try {
                std::size_t ux = 0, uy = 0;
                const std::string xs = pair.substr(0, comma), ys = pair.substr(comma + 1);
                ann.landmarks[count].x = std::stod(xs, &ux);
                ann.landmarks[count].y = std::stod(ys, &uy);
                if (ux != xs.size() || uy != ys.size()) throw std::invalid_argument(pair);
            } catch (const std::exception&) {
                throw ParseError(context + ": landmark '" + pair + "' is not numeric");
            }
            if (!std::isfinite(ann.landmarks[count].x) || !std::isfinite(ann.landmarks[count].y) ||
                ann.landmarks[count].x < 0 || ann.landmarks[count].y < 0)
                throw ParseError(context + ": landmark coordinates must be finite and >= 0");
            ++count;
        }
        if (count != 8)
            throw ParseError(context + ": expected 8 landmarks, got " + std::to_string(count));
        if (!seen.insert(ann.image_id).second)
            throw ParseError(context + ": duplicate image_id");
        out.push_back(std::move(ann));
    }
    return out;
}

inline std::vector<LandmarkAnnotation> load_annotations(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("annotations: cannot open " + path);
    return parse_annotations(is, path);
}

inline void save_annotations(const std::string& path,
                             const std::vector<LandmarkAnnotation>& annotations) {
    std::ofstream os(path);
    if (!os) throw IoError("annotations: cannot open " + path + " for writing");
    os << "# image_id image_path label x1,y1 ... x8,y8\n";
    for (const auto& ann : annotations) {
        os << ann.image_id << " " << ann.image_path << " " << label_token(ann.label);
        for (const auto& p : ann.landmarks) {
            char buf[64];
            std::snprintf(buf, sizeof(buf), " %.10g,%.10g", p.x, p.y);
            os << buf;
        }
        os << "\n";
    }
    if (!os) throw IoError("annotations: write to " + path + " failed");
}

// Square crop of side crop_side centered on the landmark: the landmark's
// rounded pixel lands at patch index crop_side/2 on both axes. Windows
// reaching past the border replicate the edge pixels.
inline Image extract_roi(const Image& image, Point landmark, int crop_side,
                         const std::string& context = "roi") {
    if (image.empty()) throw InputError(context + ": empty image");
    if (crop_side < 1) throw InputError(context + ": crop side must be positive");
    const long cx = std::lround(landmark.x);
    const long cy = std::lround(landmark.y);
    const long w = static_cast<long>(image.width);
    const long h = static_cast<long>(image.height);
    if (cx < 0 || cx >= w || cy < 0 || cy >= h)
        throw InputError(context + ": landmark (" + std::to_string(landmark.x) + "," +
                         std::to_string(landmark.y) + ") outside image " + std::to_string(w) + "x" +
                         std::to_string(h));

    Image patch;
    patch.width = patch.height = static_cast<std::size_t>(crop_side);
    patch.pixels.resize(static_cast<std::size_t>(crop_side) * crop_side);
    const long half = crop_side / 2;
    for (long py = 0; py < crop_side; ++py) {
        const long sy = std::clamp(cy - half + py, 0L, h - 1);
        for (long px = 0; px < crop_side; ++px) {
            const long sx = std::clamp(cx - half + px, 0L, w - 1);
            patch.pixels[static_cast<std::size_t>(py * crop_side + px)] =
                image.pixels[static_cast<std::size_t>(sy) * image.width +
                             static_cast<std::size_t>(sx)];
        }
    }
    return patch;
}

inline std::array<Image, 8> extract_rois(const Image& image, const LandmarkAnnotation& ann,
                                         int crop_side = 100) {
    std::array<Image, 8> out;
    for (std::size_t i = 0; i < 8; ++i)
        out[i] = extract_roi(image, ann.landmarks[i], crop_side,
                             "roi " + ann.image_id + "[" + std::to_string(i) + "]");
    return out;
}

namespace detail {

inline float bilinear_clamped(const Image& img, double sy, double sx) {
    const long h = static_cast<long>(img.height), w = static_cast<long>(img.width);
    const auto clamp_idx = [](long v, long hi) { return v < 0 ? 0 : (v > hi ? hi : v); };
    const long y0 = clamp_idx(static_cast<long>(std::floor(sy)), h - 1);
    const long x0 = clamp_idx(static_cast<long>(std::floor(sx)), w - 1);
    const long y1 = clamp_idx(y0 + 1, h - 1);
    const long x1 = clamp_idx(x0 + 1, w - 1);
    const double fy = std::clamp(sy - static_cast<double>(y0), 0.0, 1.0);
    const double fx = std::clamp(sx - static_cast<double>(x0), 0.0, 1.0);
    const double top = img.pixels[y0 * w + x0] * (1 - fx) + img.pixels[y0 * w + x1] * fx;
    const double bot = img.pixels[y1 * w + x0] * (1 - fx) + img.pixels[y1 * w + x1] * fx;
    return static_cast<float>(top * (1 - fy) + bot * fy);
}

} // namespace detail

// Bilinear resize of a square patch on the corner-aligned grid: output pixel
// i samples the input at i*(in-1)/(out-1); a single output pixel samples the
// input center. out_side == in_side is the exact identity.
inline Image resize_patch(const Image& patch, int out_side) {
    if (out_side < 1) throw InputError("resize: output side must be >= 1");
    if (patch.width != patch.height) throw InputError("resize: patch must be square");
    const std::size_t in = patch.width;
    if (static_cast<std::size_t>(out_side) == in) return patch;

    Image out;
    out.width = out.height = static_cast<std::size_t>(out_side);
    out.pixels.resize(out.width * out.height);
    const double step =
        out_side > 1 ? static_cast<double>(in - 1) / static_cast<double>(out_side - 1) : 0.0;
    for (int y = 0; y < out_side; ++y) {
        const double sy = out_side > 1 ? y * step : (static_cast<double>(in) - 1) / 2.0;
        for (int x = 0; x < out_side; ++x) {
            const double sx = out_side > 1 ? x * step : (static_cast<double>(in) - 1) / 2.0;
            out.pixels[static_cast<std::size_t>(y) * out.width + x] =
                detail::bilinear_clamped(patch, sy, sx);
        }
    }
    return out;
}

inline Image flip_horizontal(const Image& img) {
    Image out = img;
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x)
            out.pixels[y * img.width + x] = img.pixels[y * img.width + (img.width - 1 - x)];
    return out;
}

// Stretches by (sx, sy) about the patch center and resamples back to the
// original side with bilinear interpolation and edge replication.
inline Image stretch_about_center(const Image& img, double sx, double sy) {
    Image out = img;
    const double cx = (static_cast<double>(img.width) - 1) / 2.0;
    const double cy = (static_cast<double>(img.height) - 1) / 2.0;
    for (std::size_t y = 0; y < img.height; ++y) {
        const double src_y = cy + (static_cast<double>(y) - cy) / sy;
        for (std::size_t x = 0; x < img.width; ++x) {
            const double src_x = cx + (static_cast<double>(x) - cx) / sx;
            out.pixels[y * img.width + x] = detail::bilinear_clamped(img, src_y, src_x);
        }
    }
    return out;
}

// Training-time augmentation. Draw order is fixed: one uniform for the flip
// decision (< 0.5 flips), then the horizontal and vertical stretch factors,
// each uniform in [0.9, 1.1].
inline Image augment(const Image& patch, Philox& rng) {
    if (patch.width != patch.height) throw InputError("augment: patch must be square");
    const bool flip = rng.uniform() < 0.5;
    const double sx = rng.uniform(0.9, 1.1);
    const double sy = rng.uniform(0.9, 1.1);
    const Image flipped = flip ? flip_horizontal(patch) : patch;
    return stretch_about_center(flipped, sx, sy);
}

// One subject: label plus the eight extracted, resized patches.
struct Sample {
    std::string image_id;
    Label label = Label::Normal;
    std::array<Image, 8> patches;
};

inline Sample make_sample(const Image& image, const LandmarkAnnotation& ann, int crop_side,
                          int input_side) {
    Sample s;
    s.image_id = ann.image_id;
    s.label = ann.label;
    auto rois = extract_rois(image, ann, crop_side);
    for (std::size_t i = 0; i < 8; ++i) s.patches[i] = resize_patch(rois[i], input_side);
    return s;
}

inline std::string directory_of(const std::string& path) {
    const auto slash = path.find_last_of('/');
    return slash == std::string::npos ? std::string(".") : path.substr(0, slash);
}

// Loads every annotated subject, resolving image paths relative to the
// annotation file.
inline std::vector<Sample> load_dataset(const std::string& annotation_path, int crop_side,
                                        int input_side) {
    const auto annotations = load_annotations(annotation_path);
    const std::string base = directory_of(annotation_path);
    std::vector<Sample> samples;
    samples.reserve(annotations.size());
    for (const auto& ann : annotations) {
        const std::string img_path =
            ann.image_path.starts_with('/') ? ann.image_path : base + "/" + ann.image_path;
        Image image;
        try {
            image = read_pgm(img_path);
        } catch (const IoError&) {
            throw IoError("dataset: cannot read image for '" + ann.image_id + "' at " + img_path);
        }
        samples.push_back(make_sample(image, ann, crop_side, input_side));
    }
    return samples;
}

} // namespace osteo
