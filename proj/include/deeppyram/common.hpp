#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>

namespace deeppyram {

inline constexpr const char* kVersion = "0.1.0";

// Shape of a dense 4-D tensor, (batch, channel, height, width).
struct Shape4 {
    int64_t n = 0, c = 0, h = 0, w = 0;

    int64_t numel() const { return n * c * h * w; }
    bool operator==(const Shape4&) const = default;
    std::string str() const {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
               std::to_string(h) + "," + std::to_string(w) + ")";
    }
};

// Shape or axis-extent mismatch between operands.
struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid or inconsistent configuration value.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Unreadable, unpairable, or malformed external data.
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite loss, failed gradient check, or other numerical breakdown.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Caller misused an API contract (e.g. backward on a non-scalar).
struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {

inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

} // namespace detail

// Mixes a tag into a seed; used to derive independent sub-streams.
inline uint64_t mix_seed(uint64_t seed, uint64_t tag) {
    uint64_t s = seed ^ (0x9e3779b97f4a7c15ULL + (tag << 6) + (tag >> 2));
    detail::splitmix64(s);
    return detail::splitmix64(s);
}

inline uint64_t fnv1a(const std::string& s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Deterministic random stream (splitmix64 core, Box-Muller normals).
// Fully specified so that results are identical across platforms and
// standard-library versions.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {
        // warm up so that small seeds diverge immediately
        detail::splitmix64(state_);
    }

    uint64_t next_u64() { return detail::splitmix64(state_); }

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [lo, hi] inclusive
    int64_t uniform_int(int64_t lo, int64_t hi) {
        uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        return lo + static_cast<int64_t>(next_u64() % span);
    }

    bool bernoulli(double p) { return uniform() < p; }

    double normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double u1 = 0.0;
        while (u1 <= 1e-300) u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * 3.14159265358979323846 * u2;
        cached_ = r * std::sin(a);
        has_cached_ = true;
        return r * std::cos(a);
    }

    Rng fork(uint64_t tag) { return Rng(mix_seed(next_u64(), tag)); }

private:
    uint64_t state_;
    double cached_ = 0.0;
    bool has_cached_ = false;
};

} // namespace deeppyram
