#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace kt::rng {

// splitmix64 finalizer; the mixing core of every RNG in the toolkit.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t combine(std::uint64_t a, std::uint64_t b) {
    return mix64(a ^ mix64(b));
}

// Counter-based RNG: value_i = mix(key, i). No hidden state, so any draw is
// addressable and replayable; streams are derived by label, which keeps
// initialization independent of allocation order.
struct CounterRng {
    std::uint64_t key = 0;

    static CounterRng from_seed(std::uint64_t seed) { return CounterRng{mix64(seed)}; }

    CounterRng derive(std::uint64_t stream) const { return CounterRng{combine(key, stream)}; }

    CounterRng derive(std::string_view label) const {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (char c : label) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001b3ULL;
        }
        return derive(h);
    }

    std::uint64_t bits(std::uint64_t counter) const { return mix64(key ^ mix64(counter ^ 0x5851f42d4c957f2dULL)); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform(std::uint64_t counter) const {
        return static_cast<double>(bits(counter) >> 11) * 0x1.0p-53;
    }
};

// Sequential draw convenience over a CounterRng stream.
struct RngStream {
    CounterRng rng;
    std::uint64_t counter = 0;

    explicit RngStream(CounterRng r) : rng(r) {}

    std::uint64_t next_bits() { return rng.bits(counter++); }
    double next_uniform() { return rng.uniform(counter++); }

    double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_uniform(); }

    bool next_bernoulli(double p) { return next_uniform() < p; }

    // Uniform integer in [lo, hi] inclusive.
    std::int64_t next_int(std::int64_t lo, std::int64_t hi) {
        const auto span = static_cast<std::uint64_t>(hi - lo + 1);
        return lo + static_cast<std::int64_t>(next_bits() % span);
    }

    // Fisher-Yates; std::shuffle is not portable bit-for-bit across stdlibs.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(next_int(0, static_cast<std::int64_t>(i) - 1));
            std::swap(v[i - 1], v[j]);
        }
    }
};

// FNV-1a 64-bit, used as a content fingerprint for manifests.
inline std::uint64_t fnv1a(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : bytes) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v);

}  // namespace kt::rng
