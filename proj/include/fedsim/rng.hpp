#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace fedsim {

// SplitMix64 finalizer; used to derive well-separated child seeds.
inline std::uint64_t mix_seed(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    return mix_seed(mix_seed(a) ^ (0x6a09e667f3bcc909ULL + b));
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    return mix_seed(mix_seed(a, b), c);
}

// Deterministic random stream. All sampling is implemented on top of the
// standard-specified mt19937_64 sequence, so identical seeds give identical
// streams on every platform and compiler.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), engine_(mix_seed(seed)) {}

    std::uint64_t bits() { return engine_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). Modulo bias is negligible for the tiny n
    // used here (client counts, class counts).
    std::size_t uniform_index(std::size_t n) {
        return static_cast<std::size_t>(engine_() % n);
    }

    // Standard normal via Box-Muller (explicit, platform-independent).
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    double exponential(double rate = 1.0) {
        double u = uniform();
        while (u <= 0.0) u = uniform();
        return -std::log(u) / rate;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[uniform_index(i)]);
        }
    }

    // Independent child stream tagged by an integer.
    Rng child(std::uint64_t tag) const { return Rng(mix_seed(seed_, tag)); }

    std::uint64_t seed() const { return seed_; }

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace fedsim
