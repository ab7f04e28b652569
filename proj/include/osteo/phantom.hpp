#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "osteo/data.hpp"
#include "osteo/pgm.hpp"
#include "osteo/rng.hpp"

namespace osteo {

// Texture recipe for one class: band-limited noise blurred with blur_sigma,
// standardized, then squashed through a sigmoid around threshold. Higher
// threshold means fewer bright "trabecular" pixels, i.e. lower bone density.
struct TextureParams {
    double blur_sigma = 2.0;
    double threshold = -0.3;
};

// Synthetic stand-in for the clinical dataset. delta in [0,1] interpolates
// the osteoporosis class's texture between the normal recipe (delta=0,
// classes statistically identical) and osteo_full (delta=1, maximal
// contrast). Generation is a pure function of (spec, n_per_class).
struct PhantomSpec {
    std::uint64_t seed = 0;
    std::size_t image_size = 160;
    double delta = 1.0;
    TextureParams normal{2.0, -0.3};
    TextureParams osteo_full{3.2, 1.1};
    double jitter_radius = 3.0;

    void validate() const {
        if (delta < 0.0 || delta > 1.0) throw InputError("phantom: delta must be in [0,1]");
        if (image_size < 32) throw InputError("phantom: image size must be >= 32");
        if (jitter_radius < 0) throw InputError("phantom: jitter radius must be >= 0");
    }
};

namespace detail {

inline void gaussian_blur_inplace(std::vector<float>& px, std::size_t n, double sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(2 * radius + 1);
    double norm = 0;
    for (int i = -radius; i <= radius; ++i) {
        kernel[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
        norm += kernel[i + radius];
    }
    for (auto& k : kernel) k /= norm;

    const long size = static_cast<long>(n);
    std::vector<float> tmp(px.size());
    // horizontal pass
    for (long y = 0; y < size; ++y)
        for (long x = 0; x < size; ++x) {
            double acc = 0;
            for (int i = -radius; i <= radius; ++i) {
                const long sx = std::clamp(x + i, 0L, size - 1);
                acc += kernel[i + radius] * px[y * size + sx];
            }
            tmp[y * size + x] = static_cast<float>(acc);
        }
    // vertical pass
    for (long y = 0; y < size; ++y)
        for (long x = 0; x < size; ++x) {
            double acc = 0;
            for (int i = -radius; i <= radius; ++i) {
                const long sy = std::clamp(y + i, 0L, size - 1);
                acc += kernel[i + radius] * tmp[sy * size + x];
            }
            px[y * size + x] = static_cast<float>(acc);
        }
}

inline TextureParams lerp_params(const TextureParams& a, const TextureParams& b, double t) {
    return {a.blur_sigma + t * (b.blur_sigma - a.blur_sigma),
            a.threshold + t * (b.threshold - a.threshold)};
}

} // namespace detail

// Canonical landmark layout on the phantom, bilateral pairs adjacent (left
// then right) in the annotation's site order.
inline std::array<Point, 8> phantom_canonical_landmarks(std::size_t image_size) {
    const double s = static_cast<double>(image_size);
    const double lx = 0.26 * s, rx = 0.74 * s;
    const std::array<double, 4> rows = {0.24 * s, 0.42 * s, 0.60 * s, 0.78 * s};
    std::array<Point, 8> out;
    for (std::size_t site = 0; site < 4; ++site) {
        out[2 * site] = {lx, rows[site]};
        out[2 * site + 1] = {rx, rows[site]};
    }
    return out;
}

inline Image generate_phantom_image(const PhantomSpec& spec, Label label,
                                    std::uint64_t image_stream) {
    const TextureParams params =
        label == Label::Osteoporosis
            ? detail::lerp_params(spec.normal, spec.osteo_full, spec.delta)
            : spec.normal;

    Philox rng = Philox(spec.seed, 0x411).split(image_stream);
    Image img;
    img.width = img.height = spec.image_size;
    img.pixels.resize(spec.image_size * spec.image_size);
    for (auto& p : img.pixels) p = static_cast<float>(rng.uniform());

    detail::gaussian_blur_inplace(img.pixels, spec.image_size, params.blur_sigma);

    double mean = 0;
    for (const float p : img.pixels) mean += p;
    mean /= static_cast<double>(img.pixels.size());
    double var = 0;
    for (const float p : img.pixels) var += (p - mean) * (p - mean);
    var /= static_cast<double>(img.pixels.size());
    const double sd = std::sqrt(std::max(var, 1e-12));

    const double softness = 0.35;
    for (auto& p : img.pixels) {
        const double z = (p - mean) / sd;
        const double v = 1.0 / (1.0 + std::exp(-(z - params.threshold) / softness));
        // quantize to the 8-bit grid so a PGM round trip is exact
        p = static_cast<float>(std::lround(v * 255.0)) / 255.0f;
    }
    return img;
}

// n_per_class phantoms for each class, with jittered canonical landmarks.
// Image ids are op_### / nop_###; image paths point into images/.
inline std::vector<std::pair<Image, LandmarkAnnotation>>
generate_phantoms(const PhantomSpec& spec, std::size_t n_per_class) {
    spec.validate();
    if (n_per_class < 1) throw InputError("phantom: n_per_class must be >= 1");

    const auto canonical = phantom_canonical_landmarks(spec.image_size);
    std::vector<std::pair<Image, LandmarkAnnotation>> out;
    out.reserve(2 * n_per_class);
    for (std::size_t idx = 0; idx < 2 * n_per_class; ++idx) {
        const Label label = idx < n_per_class ? Label::Osteoporosis : Label::Normal;
        const std::size_t class_idx = idx < n_per_class ? idx : idx - n_per_class;

        LandmarkAnnotation ann;
        char id[32];
        std::snprintf(id, sizeof(id), "%s_%03zu", label == Label::Osteoporosis ? "op" : "nop",
                      class_idx);
        ann.image_id = id;
        ann.image_path = "images/" + std::string(id) + ".pgm";
        ann.label = label;

        Philox jitter = Philox(spec.seed, 0x1a9d).split(idx);
        for (std::size_t i = 0; i < 8; ++i) {
            const double jx = jitter.uniform(-spec.jitter_radius, spec.jitter_radius);
            const double jy = jitter.uniform(-spec.jitter_radius, spec.jitter_radius);
            ann.landmarks[i] = {canonical[i].x + jx, canonical[i].y + jy};
        }

        out.emplace_back(generate_phantom_image(spec, label, idx), std::move(ann));
    }
    return out;
}

// Writes images/*.pgm plus annotations.txt under out_dir; byte-identical for
// identical (spec, n_per_class).
inline std::string write_phantom_dataset(const PhantomSpec& spec, std::size_t n_per_class,
                                         const std::string& out_dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir + "/images", ec);
    if (ec) throw IoError("phantom: cannot create " + out_dir + "/images: " + ec.message());

    auto phantoms = generate_phantoms(spec, n_per_class);
    std::vector<LandmarkAnnotation> annotations;
    annotations.reserve(phantoms.size());
    for (const auto& [image, ann] : phantoms) {
        write_pgm(out_dir + "/" + ann.image_path, image);
        annotations.push_back(ann);
    }
    const std::string ann_path = out_dir + "/annotations.txt";
    save_annotations(ann_path, annotations);
    return ann_path;
}

// In-memory equivalent of write + load, for tests and quantitative runs.
inline std::vector<Sample> phantom_samples(const PhantomSpec& spec, std::size_t n_per_class,
                                           int crop_side, int input_side) {
    auto phantoms = generate_phantoms(spec, n_per_class);
    std::vector<Sample> samples;
    samples.reserve(phantoms.size());
    for (const auto& [image, ann] : phantoms)
        samples.push_back(make_sample(image, ann, crop_side, input_side));
    return samples;
}

} // namespace osteo
