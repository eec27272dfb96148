#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace mapkit {

/// Deterministic RNG. std::mt19937_64 is bit-stable across platforms but the
/// standard distributions are not, so the transforms live here. All stochastic
/// choices in the toolkit derive their seeds through Rng::derive so that any
/// (seed, purpose, step) triple maps to the same stream regardless of call
/// order — this is what makes checkpoint-resume bit-exact.
class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t next() { return eng_(); }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller (pair cached).
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform(), u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    /// Integer in [lo, hi).
    int64_t randint(int64_t lo, int64_t hi) {
        uint64_t span = static_cast<uint64_t>(hi - lo);
        return lo + static_cast<int64_t>(eng_() % span);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(randint(0, static_cast<int64_t>(i)));
            std::swap(v[i - 1], v[j]);
        }
    }

    /// splitmix64-style seed mixing for derived streams.
    static uint64_t mix(uint64_t a, uint64_t b) {
        uint64_t z = a + 0x9e3779b97f4a7c15ULL + (b << 1 | 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    static uint64_t derive(uint64_t seed, uint64_t purpose, uint64_t step = 0) {
        return mix(mix(seed, purpose), step);
    }

private:
    std::mt19937_64 eng_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// Purpose tags for derived RNG streams.
namespace rng_purpose {
constexpr uint64_t kInit = 0x11;
constexpr uint64_t kShuffle = 0x22;
constexpr uint64_t kNoise = 0x33;
constexpr uint64_t kAugment = 0x44;
constexpr uint64_t kColorize = 0x55;
constexpr uint64_t kSynthData = 0x66;
}  // namespace rng_purpose

}  // namespace mapkit
