#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>

namespace mmfuse {

// Philox4x32-10 counter-based generator. Counter-based means the output is a
// pure function of (seed, stream, counter), so state serializes to four
// integers and independent streams never collide. Output is identical on any
// platform with 64-bit integers.
class Philox {
public:
    Philox() : Philox(0, 0) {}
    Philox(uint64_t seed, uint64_t stream) : seed_(seed), stream_(stream) {}

    uint32_t next_u32();
    uint64_t next_u64();

    // Uniform in [0, 1) with 53 random bits.
    double uniform();

    // Uniform integer in [0, n), n >= 1. Lemire multiply-shift reduction;
    // the modulo bias is below 2^-64 * n and the mapping is deterministic.
    uint64_t uniform_int(uint64_t n);

    // Standard normal via the polar method. No spare is cached so the state
    // stays four integers; the discarded second deviate costs nothing here.
    double gaussian();

    // Derive an independent generator: same seed, unrelated stream.
    Philox split(uint64_t substream) const;

    struct State {
        uint64_t seed;
        uint64_t stream;
        uint64_t counter;
        uint32_t buffer_pos;
    };
    State state() const;
    static Philox from_state(const State& s);

private:
    void refill();

    uint64_t seed_ = 0;
    uint64_t stream_ = 0;
    uint64_t counter_ = 0;  // block index
    std::array<uint32_t, 4> buffer_{};
    uint32_t buffer_pos_ = 4;  // 4 == empty
};

// Well-known sub-stream labels so every consumer of randomness draws from a
// named lane under the one top-level seed.
namespace rng_stream {
inline constexpr uint64_t init = 0x01;
inline constexpr uint64_t data = 0x02;
inline constexpr uint64_t sampler = 0x03;
inline constexpr uint64_t noise = 0x04;
inline constexpr uint64_t word_vectors = 0x05;
inline constexpr uint64_t modality_projection = 0x06;
inline constexpr uint64_t debug_padding = 0x07;
}  // namespace rng_stream

// FNV-1a 64-bit. Used for token hashing and config hashes; fixed constants
// keep fixtures portable across platforms.
uint64_t fnv1a64(const void* data, size_t len);
uint64_t fnv1a64(const std::string& s);

}  // namespace mmfuse
