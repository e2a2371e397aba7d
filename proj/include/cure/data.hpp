#ifndef CURE_DATA_HPP
#define CURE_DATA_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "cure/tensor.hpp"

namespace cure {

struct Dataset {
    Tensor features; // [n x d]
    std::vector<int> labels;
    std::size_t num_classes{2};
    /// Clamp bounds used by attacks and corruptions.
    double lo{0.0};
    double hi{1.0};
    /// Per-column min/max of the raw values before scaling into [0, 1].
    std::vector<double> scale_min;
    std::vector<double> scale_max;
    std::string name;
    std::uint64_t seed{0};

    [[nodiscard]] std::size_t size() const { return labels.size(); }
    [[nodiscard]] std::size_t dim() const { return features.dim(1); }
    /// Rows selected by `index`, in that order.
    [[nodiscard]] Dataset subset(const std::vector<std::size_t>& index) const;
    void validate() const;
};

struct Split {
    Dataset train;
    Dataset test;
};

enum class SyntheticKind { TwoMoons, Spirals, Gaussians, Circles };

[[nodiscard]] SyntheticKind parse_synthetic_kind(std::string_view name);
[[nodiscard]] std::string_view to_string(SyntheticKind kind);

/// Two-class synthetic data; classes alternate so counts differ by at most one.
[[nodiscard]] Dataset gen_synthetic(SyntheticKind kind, std::size_t n, double noise_std, std::uint64_t seed);

/// Header row required; every column except `label_column` is a feature.
[[nodiscard]] Dataset load_csv(const std::filesystem::path& path, std::string_view label_column);
void save_csv(const std::filesystem::path& path, const Dataset& ds);

/// Stratified-free random split; the test part holds round(n * test_fraction) rows.
[[nodiscard]] Split split_dataset(const Dataset& ds, double test_fraction, std::uint64_t seed);

struct Batch {
    Tensor x;
    std::vector<int> y;
    std::vector<std::size_t> index;
};

/// Shuffled partition of the dataset; the order depends only on
/// (shuffle_seed, epoch). The last batch may be short.
[[nodiscard]] std::vector<Batch> batches(const Dataset& ds, std::size_t batch_size, std::uint64_t shuffle_seed,
                                         std::size_t epoch);
/// All rows in order, as one batch per `batch_size` chunk.
[[nodiscard]] std::vector<Batch> ordered_batches(const Dataset& ds, std::size_t batch_size);

enum class CorruptionKind { GaussianNoise, ImpulseNoise, SpeckleNoise, ShotNoise, Brightness, Contrast };

struct CorruptionSpec {
    CorruptionKind kind{CorruptionKind::GaussianNoise};
    int severity{1};
};

[[nodiscard]] CorruptionKind parse_corruption_kind(std::string_view name);
[[nodiscard]] std::string_view to_string(CorruptionKind kind);
[[nodiscard]] const std::vector<CorruptionKind>& all_corruption_kinds();

/// Magnitude of a corruption at a severity level (1..5). Zero magnitude is
/// the identity for every kind.
[[nodiscard]] double corruption_magnitude(CorruptionSpec spec);

[[nodiscard]] Dataset corrupt(const Dataset& ds, CorruptionSpec spec, std::uint64_t seed);
[[nodiscard]] Dataset corrupt_with_magnitude(const Dataset& ds, CorruptionKind kind, double magnitude,
                                             std::uint64_t seed);

} // namespace cure

#endif // CURE_DATA_HPP
