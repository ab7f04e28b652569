#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "osteo/error.hpp"
#include "osteo/tensor.hpp"

namespace osteo {

// TSCK checkpoint container, bit-exact by construction:
//   magic "TSCK" | u32 version (1) | u32 element tag (byte width: 4 or 8)
//   | u32 array count | per array: u32 name length, UTF-8 name, u32 rank,
//   rank x u64 dims, raw element payload.
// All integers and element payloads are little-endian.

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    char b[4] = {static_cast<char>(v), static_cast<char>(v >> 8), static_cast<char>(v >> 16),
                 static_cast<char>(v >> 24)};
    os.write(b, 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>(v >> (8 * i));
    os.write(b, 8);
}

inline std::uint32_t get_u32(std::istream& is, const std::string& what) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw CheckpointError("checkpoint: truncated while reading " + what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint64_t get_u64(std::istream& is, const std::string& what) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8))
        throw CheckpointError("checkpoint: truncated while reading " + what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

template <typename S>
void put_element(std::ostream& os, S value) {
    static_assert(sizeof(S) == 4 || sizeof(S) == 8);
    if constexpr (sizeof(S) == 4) {
        std::uint32_t bits;
        std::memcpy(&bits, &value, 4);
        put_u32(os, bits);
    } else {
        std::uint64_t bits;
        std::memcpy(&bits, &value, 8);
        put_u64(os, bits);
    }
}

template <typename S>
S get_element(std::istream& is) {
    S out;
    if constexpr (sizeof(S) == 4) {
        const std::uint32_t bits = get_u32(is, "payload");
        std::memcpy(&out, &bits, 4);
    } else {
        const std::uint64_t bits = get_u64(is, "payload");
        std::memcpy(&out, &bits, 8);
    }
    return out;
}

} // namespace detail

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename S>
void write_checkpoint(const std::string& path,
                      const std::vector<std::pair<std::string, Tensor<S>>>& arrays) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("checkpoint: cannot open " + path + " for writing");
    os.write("TSCK", 4);
    detail::put_u32(os, kCheckpointVersion);
    detail::put_u32(os, sizeof(S));
    detail::put_u32(os, static_cast<std::uint32_t>(arrays.size()));
    for (const auto& [name, tensor] : arrays) {
        detail::put_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::put_u32(os, static_cast<std::uint32_t>(tensor.rank()));
        for (const auto d : tensor.shape()) detail::put_u64(os, d);
        for (const S v : tensor.data()) detail::put_element(os, v);
    }
    if (!os) throw IoError("checkpoint: write to " + path + " failed");
}

struct CheckpointArray {
    std::string name;
    Shape shape;
    std::uint32_t element_size = 0;
    std::vector<double> values; // widened for inspection
};

inline std::vector<CheckpointArray> read_checkpoint_raw(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("checkpoint: cannot open " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::string(magic, 4) != "TSCK")
        throw CheckpointError("checkpoint: bad magic in " + path);
    const auto version = detail::get_u32(is, "version");
    if (version != kCheckpointVersion)
        throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
    const auto elem = detail::get_u32(is, "element tag");
    if (elem != 4 && elem != 8)
        throw CheckpointError("checkpoint: unknown element tag " + std::to_string(elem));
    const auto count = detail::get_u32(is, "array count");

    std::vector<CheckpointArray> arrays;
    arrays.reserve(count);
    for (std::uint32_t a = 0; a < count; ++a) {
        CheckpointArray arr;
        arr.element_size = elem;
        const auto name_len = detail::get_u32(is, "name length");
        arr.name.resize(name_len);
        if (!is.read(arr.name.data(), name_len))
            throw CheckpointError("checkpoint: truncated name in " + path);
        const auto rank = detail::get_u32(is, "rank");
        std::size_t numel = 1;
        for (std::uint32_t r = 0; r < rank; ++r) {
            arr.shape.push_back(static_cast<std::size_t>(detail::get_u64(is, "dims")));
            numel *= arr.shape.back();
        }
        arr.values.resize(numel);
        for (auto& v : arr.values)
            v = elem == 4 ? static_cast<double>(detail::get_element<float>(is))
                          : detail::get_element<double>(is);
        arrays.push_back(std::move(arr));
    }
    return arrays;
}

// Loads into existing tensors; name order, names and shapes must all agree
// with what was saved, and the stored element width must match S.
template <typename S>
void load_checkpoint(const std::string& path,
                     std::vector<std::pair<std::string, Tensor<S>>>& arrays) {
    const auto stored = read_checkpoint_raw(path);
    if (stored.size() != arrays.size())
        throw CheckpointError("checkpoint: " + path + " holds " + std::to_string(stored.size()) +
                              " arrays, model expects " + std::to_string(arrays.size()));
    for (std::size_t i = 0; i < stored.size(); ++i) {
        auto& [name, tensor] = arrays[i];
        const auto& arr = stored[i];
        if (arr.name != name)
            throw CheckpointError("checkpoint: array " + std::to_string(i) + " is '" + arr.name +
                                  "', model expects '" + name + "'");
        if (arr.element_size != sizeof(S))
            throw CheckpointError("checkpoint: element width " + std::to_string(arr.element_size) +
                                  " does not match build scalar width " +
                                  std::to_string(sizeof(S)));
        if (arr.shape != tensor.shape())
            throw CheckpointError("checkpoint: '" + name + "' has shape " + shape_str(arr.shape) +
                                  ", model expects " + shape_str(tensor.shape()));
        for (std::size_t j = 0; j < arr.values.size(); ++j)
            tensor.data()[j] = static_cast<S>(arr.values[j]);
    }
}

} // namespace osteo
