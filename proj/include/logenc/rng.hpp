#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

#include "logenc/common.hpp"

namespace logenc {

// All randomness in the toolkit flows from one global seed through named
// sub-streams: derive_seed(base, "module", index...). Adding a consumer
// never perturbs another consumer's stream.

inline uint64_t derive_seed(uint64_t base, std::string_view name) {
    return mix64(base ^ fnv1a64(name));
}

inline uint64_t derive_seed(uint64_t base, std::string_view name, uint64_t index) {
    return mix64(derive_seed(base, name) ^ mix64(index + 0x51ed270b74a4a7a5ULL));
}

/// xoshiro256** with a splitmix-seeded state. Deterministic across
/// platforms; state is four u64 words so it serializes trivially.
class Rng {
public:
    explicit Rng(uint64_t seed) {
        uint64_t x = seed;
        for (auto& w : s_) {
            x += 0x9e3779b97f4a7c15ULL;
            w = mix64(x);
        }
    }

    uint64_t next_u64() {
        auto rotl = [](uint64_t v, int k) { return (v << k) | (v >> (64 - k)); };
        uint64_t result = rotl(s_[1] * 5, 7) * 9;
        uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    /// Uniform double in [0, 1).
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Unbiased uniform integer in [0, n).
    uint64_t below(uint64_t n) {
        uint64_t threshold = (0ULL - n) % n;
        for (;;) {
            uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    bool bernoulli(double p) { return next_double() < p; }

    /// Standard normal via Box-Muller. The spare value is discarded so the
    /// stream position depends only on the number of calls.
    double normal() {
        double u1 = next_double();
        double u2 = next_double();
        while (u1 <= 0.0) u1 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    /// Normal(0, std) truncated to +/- 2 std by resampling.
    double truncated_normal(double stddev) {
        for (;;) {
            double z = normal();
            if (std::abs(z) <= 2.0) return z * stddev;
        }
    }

private:
    uint64_t s_[4];
};

}  // namespace logenc
