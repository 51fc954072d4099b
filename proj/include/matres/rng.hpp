#pragma once

#include <cstdint>
#include <cmath>
#include <random>
#include <string_view>
#include <vector>

namespace matres {

// FNV-1a, used for seed derivation and weight-buffer fingerprints.
inline uint64_t fnv1a(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t mix_seed(uint64_t base, std::string_view tag) {
    uint64_t h = fnv1a(&base, sizeof(base));
    return fnv1a(tag.data(), tag.size(), h);
}

inline uint64_t mix_seed(uint64_t base, uint64_t k) {
    uint64_t h = fnv1a(&base, sizeof(base));
    return fnv1a(&k, sizeof(k), h);
}

// Deterministic RNG. mt19937_64 output is pinned by the standard; the
// distributions here are hand-mapped so streams are reproducible across
// standard libraries (std::normal_distribution is not).
class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    // [0,1)
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // [0,n)
    uint64_t uniform_int(uint64_t n) {
        return static_cast<uint64_t>((static_cast<__uint128_t>(eng_()) * n) >> 64);
    }

    // Box-Muller; second draw cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = static_cast<double>((eng_() >> 11) + 1) * 0x1.0p-53;  // (0,1]
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    template <class R>
    std::vector<R> normal_vec(size_t n, double mean = 0.0, double stddev = 1.0) {
        std::vector<R> v(n);
        for (auto& x : v) x = static_cast<R>(normal(mean, stddev));
        return v;
    }

private:
    std::mt19937_64 eng_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace matres
