#pragma once

#include <array>
#include <cstdint>
#include <cmath>

namespace osteo {

// Philox4x32-10 counter-based generator (Salmon et al., SC'11 constants).
//
// Every random decision in the library draws from one of these. Streams are
// cheap value types: a generator is fully determined by (seed, stream), and
// `split` derives statistically independent child streams, so per-fold,
// per-epoch and per-sample randomness can be derived instead of shared.
// Sequences are reproducible across platforms; bit-level reproducibility of
// downstream floats is only promised within one build configuration.
class Philox {
  public:
    explicit Philox(std::uint64_t seed, std::uint64_t stream = 0) {
        key_[0] = static_cast<std::uint32_t>(seed);
        key_[1] = static_cast<std::uint32_t>(seed >> 32);
        stream_ = stream;
        pos_ = 0;
        have_ = 0;
    }

    // Child generator for substream `salt`. Uses one Philox block of the
    // parent as a keyed hash, so children with different salts never share
    // key material.
    Philox split(std::uint64_t salt) const {
        Philox child(0, 0);
        const auto block = hash_block(key_, salt, 0x5eed5eedULL);
        child.key_[0] = block[0];
        child.key_[1] = block[1];
        child.stream_ = (static_cast<std::uint64_t>(block[3]) << 32) | block[2];
        return child;
    }

    // Keyed 64-bit mix, used wherever the spec calls for hash(seed, index).
    static std::uint64_t mix(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
        std::array<std::uint32_t, 2> key = {static_cast<std::uint32_t>(seed),
                                            static_cast<std::uint32_t>(seed >> 32)};
        const auto block = hash_block(key, a, b);
        return (static_cast<std::uint64_t>(block[1]) << 32) | block[0];
    }

    std::uint32_t next_u32() {
        if (have_ == 0) {
            buf_ = hash_block(key_, pos_, stream_);
            ++pos_;
            have_ = 4;
        }
        return buf_[4 - have_--];
    }

    std::uint64_t next_u64() {
        const std::uint64_t hi = next_u32();
        return (hi << 32) | next_u32();
    }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Unbiased integer in [0, n) by rejection.
    std::uint64_t next_below(std::uint64_t n) {
        const std::uint64_t limit = ~std::uint64_t{0} - ~std::uint64_t{0} % n;
        std::uint64_t v;
        do {
            v = next_u64();
        } while (v >= limit);
        return v % n;
    }

    template <typename Seq>
    void shuffle(Seq& seq) {
        for (std::size_t i = seq.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(next_below(i));
            std::swap(seq[i - 1], seq[j]);
        }
    }

  private:
    static std::array<std::uint32_t, 4> hash_block(std::array<std::uint32_t, 2> key,
                                                   std::uint64_t ctr_lo,
                                                   std::uint64_t ctr_hi) {
        std::array<std::uint32_t, 4> c = {
            static_cast<std::uint32_t>(ctr_lo), static_cast<std::uint32_t>(ctr_lo >> 32),
            static_cast<std::uint32_t>(ctr_hi), static_cast<std::uint32_t>(ctr_hi >> 32)};
        std::uint32_t k0 = key[0], k1 = key[1];
        for (int round = 0; round < 10; ++round) {
            const std::uint64_t p0 = 0xD2511F53ULL * c[0];
            const std::uint64_t p1 = 0xCD9E8D57ULL * c[2];
            const std::uint32_t hi0 = static_cast<std::uint32_t>(p0 >> 32);
            const std::uint32_t lo0 = static_cast<std::uint32_t>(p0);
            const std::uint32_t hi1 = static_cast<std::uint32_t>(p1 >> 32);
            const std::uint32_t lo1 = static_cast<std::uint32_t>(p1);
            c = {hi1 ^ c[1] ^ k0, lo1, hi0 ^ c[3] ^ k1, lo0};
            k0 += 0x9E3779B9U;
            k1 += 0xBB67AE85U;
        }
        return c;
    }

    std::array<std::uint32_t, 2> key_;
    std::uint64_t stream_ = 0;
    std::uint64_t pos_ = 0;
    std::array<std::uint32_t, 4> buf_ = {};
    int have_ = 0;
};

} // namespace osteo
