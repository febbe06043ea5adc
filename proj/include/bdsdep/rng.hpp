#pragma once

#include <array>
#include <cstdint>
#include <limits>

namespace bdsdep {

/// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
///
/// The 64-bit key is the user seed; the 128-bit counter is split into
/// (position, blockId, streamId). Two engines with different
/// (seed, streamId, blockId) triples never share a counter value, so streams
/// derived this way are disjoint and can be consumed in any order.
/// Satisfies UniformRandomBitGenerator, so it plugs into <random> distributions.
class PhiloxEngine {
public:
    using result_type = std::uint32_t;

    PhiloxEngine(std::uint64_t seed, std::uint32_t streamId, std::uint32_t blockId) noexcept
        : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
          stream_(streamId), block_(blockId) {}

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    result_type operator()() noexcept {
        if (lane_ == 4) {
            buffer_ = generate(position_++);
            lane_ = 0;
        }
        return buffer_[lane_++];
    }

    /// Uniform in (0,1), 53-bit resolution, never 0 or 1.
    double uniform_open() noexcept {
        const std::uint64_t hi = (*this)();
        const std::uint64_t lo = (*this)();
        const std::uint64_t bits = ((hi << 32) | lo) >> 11;
        return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
    }

    /// Raw block for counter position `pos`; exposed for tests of the round function.
    std::array<std::uint32_t, 4> generate(std::uint64_t pos) const noexcept {
        std::array<std::uint32_t, 4> ctr{static_cast<std::uint32_t>(pos),
                                         static_cast<std::uint32_t>(pos >> 32), block_, stream_};
        std::array<std::uint32_t, 2> key = key_;
        for (int round = 0; round < 10; ++round) {
            if (round > 0) {
                key[0] += kWeyl0;
                key[1] += kWeyl1;
            }
            const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * ctr[0];
            const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * ctr[2];
            ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0],
                   static_cast<std::uint32_t>(p1),
                   static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1],
                   static_cast<std::uint32_t>(p0)};
        }
        return ctr;
    }

private:
    static constexpr std::uint32_t kMul0 = 0xD2511F53u;
    static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
    static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
    static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

    std::array<std::uint32_t, 2> key_;
    std::uint32_t stream_;
    std::uint32_t block_;
    std::uint64_t position_ = 0;
    std::array<std::uint32_t, 4> buffer_{};
    int lane_ = 4;
};

/// SplitMix64 finalizer; used to derive child seeds from (seed, index).
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) noexcept {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (index + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

}  // namespace bdsdep
