#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

namespace gtbp {

// splitmix64 finalizer; used to derive independent substreams from a master seed.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : eng_(seed) {}

    // uniform in [0,1) with 53 random bits
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    bool bernoulli(double prob) { return uniform() < prob; }

    // uniform integer in [0, bound), bound >= 1; rejection sampling keeps it unbiased
    std::uint64_t below(std::uint64_t bound) {
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
        std::uint64_t v;
        do { v = eng_(); } while (v >= limit);
        return v % bound;
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i)
            std::swap(v[i - 1], v[below(i)]);
    }

    std::mt19937_64& engine() { return eng_; }

private:
    std::mt19937_64 eng_;
};

// Purpose tags keep substreams for distinct uses of randomness disjoint.
enum class Purpose : std::uint64_t {
    truth = 1,
    design = 2,
    outcomes = 3,
    bp = 4,
    glauber = 5,
    popdyn = 6,
    plan = 7,
};

// Counter-based seed derivation: one master seed, substreams addressed by
// (replicate, stage, purpose). Reproducible regardless of evaluation order.
struct SeedCtx {
    std::uint64_t master = 0;
    std::uint64_t replicate = 0;

    RngStream stream(std::uint64_t stage, Purpose purpose) const {
        std::uint64_t s = mix64(master);
        s = mix64(s ^ mix64(replicate ^ 0xA5A5A5A5ULL));
        s = mix64(s ^ mix64(stage ^ 0x0F0F0F0FULL));
        s = mix64(s ^ mix64(static_cast<std::uint64_t>(purpose) ^ 0x33CC33CCULL));
        return RngStream(s);
    }
};

} // namespace gtbp
