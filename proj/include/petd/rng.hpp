#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "petd/mat.hpp"

namespace petd {

inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Deterministic generator with stable output across platforms and stdlibs.
// std distributions are implementation-defined, so sampling is hand-rolled.
class Rng {
   public:
    explicit Rng(uint64_t seed = 0) { reseed(seed); }

    void reseed(uint64_t seed) {
        uint64_t sm = seed;
        for (auto& w : s_) w = splitmix64(sm);
        has_spare_ = false;
    }

    // xoshiro256**
    uint64_t next_u64() {
        const uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform in [0, 1).
    real uniform() { return static_cast<real>(next_u64() >> 11) * 0x1.0p-53; }

    real uniform(real lo, real hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    int uniform_int(int n) {
        if (n <= 1) return 0;
        return static_cast<int>(next_u64() % static_cast<uint64_t>(n));
    }

    int uniform_int(int lo, int hi_inclusive) { return lo + uniform_int(hi_inclusive - lo + 1); }

    // Box-Muller.
    real normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        real u1, u2;
        do {
            u1 = uniform();
        } while (u1 <= 1e-300);
        u2 = uniform();
        const real r = std::sqrt(-2.0 * std::log(u1));
        const real theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    real normal(real mean, real stddev) { return mean + stddev * normal(); }

    // Independent stream derived from this generator's seed and an id.
    // Used for per-dialogue / per-example streams.
    Rng child(uint64_t stream_id) const {
        uint64_t sm = s_[0] ^ (0x8000000000000000ULL | stream_id);
        uint64_t derived = splitmix64(sm) ^ splitmix64(sm);
        return Rng(derived);
    }

    // Sample an index from unnormalized nonnegative weights.
    int categorical(const real* w, int n) {
        real total = 0.0;
        for (int i = 0; i < n; ++i) total += w[i];
        if (total <= 0.0) return uniform_int(n);
        real u = uniform() * total;
        real acc = 0.0;
        for (int i = 0; i < n; ++i) {
            acc += w[i];
            if (u < acc) return i;
        }
        return n - 1;
    }

    void fill_normal(Mat& m, real mean, real stddev) {
        for (auto& v : m.a) v = normal(mean, stddev);
    }

   private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    uint64_t s_[4] = {};
    bool has_spare_ = false;
    real spare_ = 0.0;
};

inline std::vector<int> sample_without_replacement(int n, int m, Rng& rng) {
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    for (int i = 0; i < m; ++i) {
        int j = i + rng.uniform_int(n - i);
        std::swap(idx[i], idx[j]);
    }
    idx.resize(m);
    return idx;
}

// Stable 64-bit string hash (FNV-1a), used where hashing must not vary
// across stdlib implementations.
inline uint64_t fnv1a64(const char* data, size_t n) {
    uint64_t h = 1469598103934665603ULL;
    for (size_t i = 0; i < n; ++i) {
        h ^= static_cast<unsigned char>(data[i]);
        h *= 1099511628211ULL;
    }
    return h;
}

inline uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

}  // namespace petd
