#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>

#include <Eigen/Core>

namespace pathcons {

/// Deterministic random stream with bit-stable distributions.
///
/// mt19937_64 output is fixed by the standard, but the standard
/// distributions are not; uniform and normal are therefore derived here
/// from raw 64-bit draws using arithmetic that rounds identically on any
/// IEEE-754 platform (no libm transcendentals).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t bits() { return engine_(); }

    /// Uniform in [0, 1) with 53-bit resolution.
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    /// Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        // Rejection sampling keeps the draw unbiased.
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

    int range_int(int lo, int hi_inclusive) {
        return lo + static_cast<int>(below(static_cast<std::uint64_t>(hi_inclusive - lo + 1)));
    }

    /// Approximate standard normal via the Irwin-Hall sum of 12 uniforms.
    /// Chosen over Box-Muller so that generation never calls log/cos,
    /// whose rounding differs between libm implementations.
    double normal() {
        double s = 0.0;
        for (int i = 0; i < 12; ++i) s += uniform();
        return s - 6.0;
    }

    double normal(double mean, double sigma) { return mean + sigma * normal(); }

    /// Uniform direction on the unit sphere via cube rejection (sqrt only).
    Eigen::Vector3d unit_vector3() {
        for (;;) {
            const double x = uniform(-1.0, 1.0);
            const double y = uniform(-1.0, 1.0);
            const double z = uniform(-1.0, 1.0);
            const double n2 = x * x + y * y + z * z;
            if (n2 > 1e-12 && n2 <= 1.0) {
                const double inv = 1.0 / std::sqrt(n2);
                return {x * inv, y * inv, z * inv};
            }
        }
    }

private:
    std::mt19937_64 engine_;
};

/// FNV-1a over a label, used to derive independent substreams so that
/// adding or removing one consumer never shifts another consumer's draws.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view label) {
    std::uint64_t h = 1469598103934665603ull ^ base;
    h *= 1099511628211ull;
    for (const char c : label) {
        h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
        h *= 1099511628211ull;
    }
    return h;
}

inline std::uint64_t derive_seed(std::uint64_t base, std::string_view label, std::uint64_t index) {
    return derive_seed(derive_seed(base, label) ^ (0x9e3779b97f4a7c15ull * (index + 1)), "#");
}

}  // namespace pathcons
