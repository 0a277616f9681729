#include "mmfuse/rng.hpp"

#include <cmath>

namespace mmfuse {

namespace {

constexpr uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr uint32_t kPhiloxW1 = 0xBB67AE85u;

inline void mulhilo(uint32_t a, uint32_t b, uint32_t& hi, uint32_t& lo) {
    uint64_t p = static_cast<uint64_t>(a) * b;
    hi = static_cast<uint32_t>(p >> 32);
    lo = static_cast<uint32_t>(p);
}

inline std::array<uint32_t, 4> philox_round(std::array<uint32_t, 4> ctr, const std::array<uint32_t, 2>& key) {
    uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kPhiloxM0, ctr[0], hi0, lo0);
    mulhilo(kPhiloxM1, ctr[2], hi1, lo1);
    return {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
}

std::array<uint32_t, 4> philox10(std::array<uint32_t, 4> ctr, std::array<uint32_t, 2> key) {
    for (int round = 0; round < 10; ++round) {
        ctr = philox_round(ctr, key);
        key[0] += kPhiloxW0;
        key[1] += kPhiloxW1;
    }
    return ctr;
}

}  // namespace

void Philox::refill() {
    std::array<uint32_t, 4> ctr = {
        static_cast<uint32_t>(counter_),
        static_cast<uint32_t>(counter_ >> 32),
        static_cast<uint32_t>(stream_),
        static_cast<uint32_t>(stream_ >> 32),
    };
    std::array<uint32_t, 2> key = {
        static_cast<uint32_t>(seed_),
        static_cast<uint32_t>(seed_ >> 32),
    };
    buffer_ = philox10(ctr, key);
    ++counter_;
    buffer_pos_ = 0;
}

uint32_t Philox::next_u32() {
    if (buffer_pos_ >= 4) {
        refill();
    }
    return buffer_[buffer_pos_++];
}

uint64_t Philox::next_u64() {
    uint64_t lo = next_u32();
    uint64_t hi = next_u32();
    return (hi << 32) | lo;
}

double Philox::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

uint64_t Philox::uniform_int(uint64_t n) {
    return static_cast<uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
}

double Philox::gaussian() {
    for (;;) {
        double u = 2.0 * uniform() - 1.0;
        double v = 2.0 * uniform() - 1.0;
        double s = u * u + v * v;
        if (s > 0.0 && s < 1.0) {
            return u * std::sqrt(-2.0 * std::log(s) / s);
        }
    }
}

Philox Philox::split(uint64_t substream) const {
    // Mix rather than add so split(a).split(b) never collides with split(a+b).
    uint64_t h = fnv1a64(&substream, sizeof substream);
    return Philox(seed_, stream_ * 0x9E3779B97F4A7C15ull + h);
}

Philox::State Philox::state() const {
    return State{seed_, stream_, counter_, buffer_pos_};
}

Philox Philox::from_state(const State& s) {
    Philox rng(s.seed, s.stream);
    rng.counter_ = s.counter;
    rng.buffer_pos_ = s.buffer_pos;
    if (s.buffer_pos < 4) {
        // Regenerate the partially consumed block.
        rng.counter_ = s.counter - 1;
        rng.refill();
        rng.buffer_pos_ = s.buffer_pos;
    }
    return rng;
}

uint64_t fnv1a64(const void* data, size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    uint64_t h = 14695981039346656037ull;
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

uint64_t fnv1a64(const std::string& s) {
    return fnv1a64(s.data(), s.size());
}

}  // namespace mmfuse
