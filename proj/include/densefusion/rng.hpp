#pragma once

#include <cstdint>
#include <cmath>
#include <vector>

namespace df {

// Deterministic RNG with self-contained distributions. std::mt19937_64 is
// portable, but the standard distributions are not; we roll our own so the
// same seed gives the same stream on every build.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {}

    // splitmix64 step
    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    std::uint64_t uniform_int(std::uint64_t n) {
        // rejection-free modulo bias is fine at desk scale n << 2^64
        return next_u64() % (n ? n : 1);
    }

    // standard normal via Box-Muller
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double sigma) { return mean + sigma * normal(); }

    // Fisher-Yates
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = std::size_t(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // derive an independent stream for a tagged purpose
    Rng fork(std::uint64_t tag) {
        std::uint64_t s = next_u64();
        return Rng(s ^ (tag * 0xd1342543de82ef95ull + 0x2545f4914f6cdd1dull));
    }

private:
    std::uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// Stateless stream derivation: one master seed, many named substreams.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t tag) {
    std::uint64_t z = master ^ (tag * 0x9e3779b97f4a7c15ull + 0x165667b19e3779f9ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, const char* tag) {
    std::uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a over the tag name
    for (const char* c = tag; *c; ++c) h = (h ^ std::uint64_t(*c)) * 0x100000001b3ull;
    return derive_seed(master, h);
}

}  // namespace df
