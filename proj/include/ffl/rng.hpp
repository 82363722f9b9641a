#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <vector>

namespace ffl::rng {

// All randomness in the library flows through this header so that results are
// reproducible across platforms. The engine is std::mt19937_64 (its output
// sequence is pinned by the standard); the distributions are implemented here
// because the standard library's are not portable across implementations.

inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Deterministically derives an independent stream seed from a base seed and
/// up to three context components (e.g. client id, round, purpose tag).
inline std::uint64_t derive(std::uint64_t seed, std::uint64_t a = 0,
                            std::uint64_t b = 0, std::uint64_t c = 0) {
    std::uint64_t s = seed;
    std::uint64_t h = splitmix64(s);
    s ^= (a + 1) * 0x9e3779b97f4a7c15ULL;
    h ^= splitmix64(s);
    s ^= (b + 1) * 0xc2b2ae3d27d4eb4fULL;
    h ^= splitmix64(s);
    s ^= (c + 1) * 0x165667b19e3779f9ULL;
    h ^= splitmix64(s);
    return h;
}

// Stream purpose tags, always passed as the first derive() component so
// streams never collide across roles.
enum Purpose : std::uint64_t {
    kInit = 1,
    kBatch = 2,
    kSplit = 3,
    kProto = 4,
    kNoise = 5,
    kOrder = 6,
    kParticipation = 7,
    kDirichlet = 8,
    kHoldout = 9,
    kTrain = 10,
    kMatch = 11,
};

/// Seedable random stream with portable distributions.
class Stream {
public:
    explicit Stream(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    /// Uniform in [0, 1), 53-bit resolution.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Unbiased integer in [0, n) by rejection sampling.
    std::size_t below(std::size_t n) {
        if (n == 0) throw std::invalid_argument("Stream::below: n must be > 0");
        const std::uint64_t bound = n;
        const std::uint64_t threshold = (0 - bound) % bound;
        for (;;) {
            std::uint64_t r = next_u64();
            if (r >= threshold) return static_cast<std::size_t>(r % bound);
        }
    }

    /// Standard normal via Box-Muller (cosine branch).
    double normal() {
        double u1;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * std::numbers::pi * u2);
    }

    /// Gamma(alpha, 1) via Marsaglia-Tsang, boosted for alpha < 1.
    double gamma(double alpha) {
        if (alpha <= 0.0) throw std::invalid_argument("Stream::gamma: alpha must be > 0");
        if (alpha < 1.0) {
            double u;
            do {
                u = uniform();
            } while (u <= 0.0);
            return gamma(alpha + 1.0) * std::pow(u, 1.0 / alpha);
        }
        const double d = alpha - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x, v;
            do {
                x = normal();
                v = 1.0 + c * x;
            } while (v <= 0.0);
            v = v * v * v;
            double u;
            do {
                u = uniform();
            } while (u <= 0.0);
            if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v;
        }
    }

    /// Symmetric Dirichlet draw of dimension k.
    std::vector<double> dirichlet(double alpha, std::size_t k) {
        std::vector<double> g(k);
        double sum = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
            g[i] = gamma(alpha);
            sum += g[i];
        }
        for (double& x : g) x /= sum;
        return g;
    }

    /// In-place Fisher-Yates shuffle.
    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = below(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    std::vector<std::size_t> permutation(std::size_t n) {
        std::vector<std::size_t> p(n);
        for (std::size_t i = 0; i < n; ++i) p[i] = i;
        shuffle(p);
        return p;
    }

    std::vector<int> permutation_int(int n) {
        std::vector<int> p(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = i;
        shuffle(p);
        return p;
    }

private:
    std::mt19937_64 eng_;
};

}  // namespace ffl::rng
