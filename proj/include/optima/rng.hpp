#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace optima {

// Counter-based random stream. Every draw is a pure function of (key, counter),
// so a stream can be split per data index and replayed independently of batch
// composition. Same seed => same stream, bit for bit.
class NoiseSource {
  public:
    explicit NoiseSource(std::uint64_t seed, std::uint64_t stream = 0)
        : key_(mix(mix(seed + 0x9E3779B97F4A7C15ULL) ^ mix(stream + 0xD1B54A32D192ED03ULL))) {}

    // Derives an independent child stream keyed by `index`.
    NoiseSource child(std::uint64_t index) const {
        NoiseSource c(*this);
        c.key_ = mix(key_ + 0x9E3779B97F4A7C15ULL * (index + 1));
        c.counter_ = 0;
        return c;
    }

    std::uint64_t next_u64() { return mix(key_ + 0x9E3779B97F4A7C15ULL * (++counter_)); }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Standard normal via Box-Muller (one value per call, no caching).
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    std::vector<double> normals(std::size_t n) {
        std::vector<double> out(n);
        for (auto& v : out) v = normal();
        return out;
    }

    // Standard Gumbel: -log(-log(U)).
    double gumbel() {
        double u = uniform();
        while (u <= 0.0) u = uniform();
        return -std::log(-std::log(u));
    }

    std::uint64_t seed_key() const { return key_; }

  private:
    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

}  // namespace optima
