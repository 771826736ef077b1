#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace msdn {

// splitmix64 finalizer.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Derives an independent stream seed from a base seed, a role tag and up to
// two indices. Every consumer of randomness (init, shuffle, dropout,
// augmentation, ...) draws from its own derived stream, which makes runs
// replayable from the master seed alone: resuming at epoch k just re-derives
// the epoch-k streams.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view role,
                                 std::uint64_t a = 0, std::uint64_t b = 0) {
    std::uint64_t h = 1469598103934665603ULL ^ mix64(base);
    for (char c : role) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
    }
    h = mix64(h);
    h = mix64(h ^ mix64(a));
    h = mix64(h ^ mix64(b));
    return h;
}

// mt19937_64 with hand-rolled distributions. The engine's output sequence is
// pinned by the standard; the std:: distributions are not, so uniform/normal
// are implemented here to keep results identical across toolchains.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // [0, 1)
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // [0, n), unbiased via fixed-width bucket rejection
    std::int64_t uniform_int(std::int64_t n) {
        const auto un = static_cast<std::uint64_t>(n);
        const std::uint64_t bucket = UINT64_MAX / un;
        const std::uint64_t limit = bucket * un;
        std::uint64_t r = next_u64();
        while (r >= limit) r = next_u64();
        return static_cast<std::int64_t>(r / bucket);
    }

    // Box-Muller, one output per pair of uniforms (no caching)
    double normal(double mean = 0.0, double stddev = 1.0) {
        const double u1 = 1.0 - uniform();  // (0, 1]
        const double u2 = uniform();
        const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
        return mean + stddev * z;
    }

    bool bernoulli(double p) { return uniform() < p; }

    template <class V>
    void shuffle(std::vector<V>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(uniform_int(static_cast<std::int64_t>(i)));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace msdn
