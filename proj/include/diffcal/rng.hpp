#pragma once

#include <cmath>
#include <cstdint>
#include <string>

namespace diffcal {

// Counter-free splittable generator built on SplitMix64.
//
// Algorithm: the state advances by the golden-ratio increment
// 0x9E3779B97F4A7C15 and each output is the finalizer
//   z ^= z >> 30; z *= 0xBF58476D1CE4E5B9;
//   z ^= z >> 27; z *= 0x94D049BB133111EB;
//   z ^= z >> 31;
// (Steele, Lea, Flood; the java.util.SplittableRandom mixer).
//
// Streams: stream(label[, index]) derives a child generator from the
// *construction* seed, never from the current state, by mixing the seed with
// FNV-1a of the label and (index+1) golden-ratio multiples through the same
// finalizer. A stage can therefore be re-run or skipped without shifting the
// draws of any other stage, which is what makes run resumption reproducible.
//
// uniform() uses the top 53 bits (value in [0,1)); normal() is Box-Muller on
// (0,1] x [0,1) with the second deviate cached.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), state_(seed) {}

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        return mix(state_);
    }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform integer in [lo, hi] inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<std::int64_t>(next_u64() % span);
    }

    // Standard normal deviate.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform(); // (0,1], keeps log finite
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    Rng stream(const std::string& label) const {
        return Rng(mix(seed_ ^ fnv1a(label)));
    }

    Rng stream(const std::string& label, std::uint64_t index) const {
        return Rng(mix(seed_ ^ fnv1a(label) ^
                       ((index + 1) * 0x9E3779B97F4A7C15ULL)));
    }

    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    static std::uint64_t fnv1a(const std::string& s) {
        std::uint64_t h = 0xCBF29CE484222325ULL;
        for (unsigned char c : s) {
            h ^= c;
            h *= 0x100000001B3ULL;
        }
        return h;
    }

private:
    std::uint64_t seed_;
    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace diffcal
