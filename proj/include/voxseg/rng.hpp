#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

// Deterministic randomness. Sampling is hand-rolled on top of mt19937 raw
// draws so sequences do not depend on the standard library's distribution
// internals, and the engine state round-trips through text for checkpoints.

namespace voxseg {

class Rng {
public:
    explicit Rng(uint64_t seed)
        : engine_(static_cast<uint32_t>(seed ^ (seed >> 32)) ^ 0x9e3779b9u) {}

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(engine_()) * (1.0 / 4294967296.0);
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n) by rejection sampling.
    int64_t index(int64_t n) {
        if (n <= 0) throw std::invalid_argument("Rng::index: n must be positive");
        const uint64_t un = static_cast<uint64_t>(n);
        const uint64_t limit = (uint64_t(1) << 32) - ((uint64_t(1) << 32) % un);
        uint64_t r;
        do {
            r = engine_();
        } while (r >= limit);
        return static_cast<int64_t>(r % un);
    }

    // Standard normal via the polar method; the spare value is discarded so
    // the engine state alone captures the sampler state.
    double gaussian() {
        for (;;) {
            const double u = 2.0 * uniform() - 1.0;
            const double v = 2.0 * uniform() - 1.0;
            const double s = u * u + v * v;
            if (s > 0.0 && s < 1.0) return u * std::sqrt(-2.0 * std::log(s) / s);
        }
    }

    template <typename It>
    void shuffle(It first, It last) {
        const int64_t n = static_cast<int64_t>(last - first);
        for (int64_t i = n - 1; i > 0; --i) std::swap(first[i], first[index(i + 1)]);
    }

    std::string serialize() const {
        std::ostringstream os;
        os << engine_;
        return os.str();
    }

    void deserialize(const std::string& s) {
        std::istringstream is(s);
        is >> engine_;
        if (!is) throw std::runtime_error("Rng: malformed serialized engine state");
    }

private:
    std::mt19937 engine_;
};

}  // namespace voxseg
