#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "osteo/error.hpp"

namespace osteo {

// Grayscale image with pixels normalized to [0,1].
struct Image {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<float> pixels; // row-major

    float& at(std::size_t y, std::size_t x) { return pixels[y * width + x]; }
    float at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
    bool empty() const { return pixels.empty(); }
};

namespace detail {

// Reads the next header token, skipping whitespace and '#' comments.
inline std::string pgm_token(std::istream& is, const std::string& path) {
    std::string tok;
    int ch;
    while ((ch = is.get()) != EOF) {
        if (ch == '#') {
            while ((ch = is.get()) != EOF && ch != '\n') {
            }
            continue;
        }
        if (std::isspace(ch)) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(static_cast<char>(ch));
    }
    if (tok.empty()) throw ParseError("pgm: truncated header in " + path);
    return tok;
}

} // namespace detail

// Binary PGM (P5) with maxval 255 (one byte per pixel) or 65535 (two bytes,
// most significant first). Pixel values come back divided by maxval.
inline Image read_pgm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("pgm: cannot open " + path);
    if (detail::pgm_token(is, path) != "P5")
        throw ParseError("pgm: " + path + " is not a binary (P5) PGM");

    const auto parse_dim = [&](const char* what) {
        const std::string tok = detail::pgm_token(is, path);
        try {
            const long v = std::stol(tok);
            if (v <= 0) throw std::invalid_argument(tok);
            return static_cast<std::size_t>(v);
        } catch (const std::exception&) {
            throw ParseError("pgm: bad " + std::string(what) + " '" + tok + "' in " + path);
        }
    };
    const std::size_t width = parse_dim("width");
    const std::size_t height = parse_dim("height");
    const std::size_t maxval = parse_dim("maxval");
    if (maxval != 255 && maxval != 65535)
        throw ParseError("pgm: unsupported maxval " + std::to_string(maxval) + " in " + path);
    // The single whitespace byte after maxval was already consumed by the
    // tokenizer; raster data starts here.

    Image img;
    img.width = width;
    img.height = height;
    img.pixels.resize(width * height);
    const std::size_t bytes = maxval == 255 ? 1 : 2;
    std::vector<unsigned char> raw(width * height * bytes);
    if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
        throw ParseError("pgm: truncated pixel data in " + path);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        const std::size_t v = bytes == 1
                                  ? raw[i]
                                  : (static_cast<std::size_t>(raw[2 * i]) << 8) | raw[2 * i + 1];
        img.pixels[i] = static_cast<float>(v) / static_cast<float>(maxval);
    }
    return img;
}

inline void write_pgm(const std::string& path, const Image& img, std::size_t maxval = 255) {
    if (maxval != 255 && maxval != 65535)
        throw InputError("pgm: maxval must be 255 or 65535");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("pgm: cannot open " + path + " for writing");
    os << "P5\n" << img.width << " " << img.height << "\n" << maxval << "\n";
    for (const float p : img.pixels) {
        const float clamped = p < 0.0f ? 0.0f : (p > 1.0f ? 1.0f : p);
        const auto q = static_cast<std::uint32_t>(
            std::lround(clamped * static_cast<float>(maxval)));
        if (maxval == 255) {
            os.put(static_cast<char>(q));
        } else {
            os.put(static_cast<char>(q >> 8));
            os.put(static_cast<char>(q & 0xff));
        }
    }
    if (!os) throw IoError("pgm: write to " + path + " failed");
}

} // namespace osteo
