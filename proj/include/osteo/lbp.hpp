#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "osteo/data.hpp"
#include "osteo/error.hpp"
#include "osteo/pgm.hpp"

namespace osteo {

// Uniform local binary patterns, P=8 neighbors at R=1. A code is uniform when
// its circular bit string has at most two 0/1 transitions; the 58 uniform
// codes map to bins 0..57 in ascending numeric order and everything else
// shares bin 58.
inline constexpr std::size_t kLbpBins = 59;

// Neighbor offsets (dy,dx), clockwise starting east.
inline constexpr std::array<std::array<int, 2>, 8> kLbpNeighbors = {
    {{0, 1}, {1, 1}, {1, 0}, {1, -1}, {0, -1}, {-1, -1}, {-1, 0}, {-1, 1}}};

inline const std::array<std::uint8_t, 256>& lbp_uniform_table() {
    static const std::array<std::uint8_t, 256> table = [] {
        std::array<std::uint8_t, 256> t{};
        std::uint8_t next_bin = 0;
        for (int code = 0; code < 256; ++code) {
            int transitions = 0;
            for (int b = 0; b < 8; ++b) {
                const int cur = (code >> b) & 1;
                const int nxt = (code >> ((b + 1) % 8)) & 1;
                if (cur != nxt) ++transitions;
            }
            t[static_cast<std::size_t>(code)] =
                transitions <= 2 ? next_bin++ : static_cast<std::uint8_t>(kLbpBins - 1);
        }
        return t;
    }();
    return table;
}

// L1-normalized histogram over the interior pixels of one patch. Bit k is set
// when neighbor k >= center.
inline std::array<double, kLbpBins> lbp_histogram(const Image& patch) {
    if (patch.width < 3 || patch.height < 3)
        throw InputError("lbp: patch must be at least 3x3, got " + std::to_string(patch.width) +
                         "x" + std::to_string(patch.height));
    const auto& table = lbp_uniform_table();
    std::array<double, kLbpBins> hist{};
    const long w = static_cast<long>(patch.width);
    const long h = static_cast<long>(patch.height);
    for (long y = 1; y + 1 < h; ++y) {
        for (long x = 1; x + 1 < w; ++x) {
            const float center = patch.pixels[y * w + x];
            int code = 0;
            for (std::size_t k = 0; k < 8; ++k) {
                const float neighbor =
                    patch.pixels[(y + kLbpNeighbors[k][0]) * w + (x + kLbpNeighbors[k][1])];
                if (neighbor >= center) code |= 1 << k;
            }
            hist[table[static_cast<std::size_t>(code)]] += 1.0;
        }
    }
    const double interior = static_cast<double>((w - 2) * (h - 2));
    for (auto& b : hist) b /= interior;
    return hist;
}

// Per-sample feature: concatenation of the eight per-patch histograms
// (8 x 59 = 472 entries).
inline std::vector<double> lbp_feature(const Sample& sample) {
    std::vector<double> out;
    out.reserve(8 * kLbpBins);
    for (const auto& patch : sample.patches) {
        const auto hist = lbp_histogram(patch);
        out.insert(out.end(), hist.begin(), hist.end());
    }
    return out;
}

} // namespace osteo
