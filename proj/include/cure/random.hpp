#ifndef CURE_RANDOM_HPP
#define CURE_RANDOM_HPP

#include <cstdint>
#include <random>
#include <string_view>

namespace cure {

/// Derive an independent 64-bit seed for a named consumer of randomness.
/// Streams are keyed by name, so adding a new consumer never shifts the
/// values drawn by existing ones.
[[nodiscard]] std::uint64_t substream_seed(std::uint64_t root, std::string_view name);
[[nodiscard]] std::uint64_t substream_seed(std::uint64_t root, std::string_view name, std::uint64_t index);

// Distributions are hand-rolled instead of using <random>'s, whose output is
// implementation-defined; the bit patterns here are portable.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}
    Rng(std::uint64_t root, std::string_view stream) : engine_(substream_seed(root, stream)) {}

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Box-Muller; one draw per call (the second variate is discarded).
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }
    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);

private:
    std::mt19937_64 engine_;
};

} // namespace cure

#endif // CURE_RANDOM_HPP
