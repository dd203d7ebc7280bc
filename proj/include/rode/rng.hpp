#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace rode {

// Counter-based splittable generator. Output k of a stream is a pure
// function of (key, k), so a stream can be replayed or forked without
// touching any global state. split() derives an independent child stream;
// the parent's position is unaffected.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : key_(mix64(seed ^ 0x6a09e667f3bcc908ULL)) {}

    std::uint64_t next_u64() { return hash2(key_, counter_++); }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Box-Muller; one fresh draw per call (no cached second value, so the
    // stream position is a simple function of the call count).
    double normal(double mean, double stddev) {
        const double u1 = 1.0 - uniform(); // (0, 1], keeps log() finite
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        return mean + stddev * r * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    // Inclusive bounds.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<std::int64_t>(next_u64() % span);
    }

    bool bernoulli(double p) { return uniform() < p; }

    Rng split(std::uint64_t stream) const {
        Rng child(0);
        child.key_ = hash2(key_ ^ 0x9e3779b97f4a7c15ULL, stream);
        child.counter_ = 0;
        return child;
    }

    Rng split(std::string_view label) const { return split(fnv1a(label)); }

    static std::uint64_t fnv1a(std::string_view s) {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (unsigned char c : s) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
        return h;
    }

private:
    static std::uint64_t mix64(std::uint64_t z) {
        z ^= z >> 33;
        z *= 0xff51afd7ed558ccdULL;
        z ^= z >> 33;
        z *= 0xc4ceb9fe1a85ec53ULL;
        z ^= z >> 33;
        return z;
    }

    static std::uint64_t hash2(std::uint64_t a, std::uint64_t b) {
        return mix64(a + 0x9e3779b97f4a7c15ULL * (b + 0x2545f4914f6cdd1dULL));
    }

    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
};

} // namespace rode
