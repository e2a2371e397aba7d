#ifndef CURE_ANALYSIS_HPP
#define CURE_ANALYSIS_HPP

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cure/attacks.hpp"
#include "cure/data.hpp"
#include "cure/model.hpp"

namespace cure {

// ---------------------------------------------------------------------------
// Representation similarity

/// Linear CKA between two activation sets sharing their rows (samples).
/// centered=false skips column centering and evaluates the uncentered
/// alignment <K1,K2>_F / (|K1|_F |K2|_F) of the Gram matrices K = F F^T.
[[nodiscard]] double linear_cka(const Tensor& f1, const Tensor& f2, bool centered = true);

/// Entry (i, j) compares block i of `a` with block j of `b` on the same probe.
[[nodiscard]] std::vector<std::vector<double>> cka_matrix(const BlockModel& a, const BlockModel& b,
                                                          const Tensor& probe, bool centered = true);

// ---------------------------------------------------------------------------
// Trade-off metric

/// Harmonic mean of natural and robust accuracy (both percentages).
[[nodiscard]] double nrr(double nat_acc, double rob_acc);

struct TradeoffRow {
    double nat_acc{0.0};
    double rob_acc{0.0};
    double nrr{0.0};
};

[[nodiscard]] TradeoffRow tradeoff_row(double nat_acc, double rob_acc);

// ---------------------------------------------------------------------------
// Accuracy evaluation

enum class AttackKind { Fgsm, Pgd };

struct EvalAttack {
    AttackKind kind{AttackKind::Pgd};
    AttackConfig config;
};

/// Percentage of correctly classified samples, on clean inputs when `attack`
/// is empty. Batch b of an attacked evaluation uses substream (seed, b).
[[nodiscard]] double evaluate(const Classifier& model, const Dataset& ds, const std::optional<EvalAttack>& attack,
                              std::uint64_t seed, std::size_t batch_size = 256);

struct SweepPoint {
    double epsilon{0.0};
    double accuracy{0.0};
};

/// Accuracy at each epsilon with step_size = epsilon / 4 and the template's
/// step count. epsilon == 0 evaluates clean accuracy.
[[nodiscard]] std::vector<SweepPoint> strength_sweep(const Classifier& model, const Dataset& ds,
                                                     const std::vector<double>& eps_list,
                                                     const AttackConfig& tmpl, std::uint64_t seed);

/// 0.25/255 .. 8/255.
[[nodiscard]] std::vector<double> default_sweep_grid();

// ---------------------------------------------------------------------------
// Mask and gradient dumps

// Layout (little-endian): "CUREMASK" | u32 version | u32 tensor count |
// per tensor: u32 name length, name bytes, u64 size | then per recorded epoch:
// u64 epoch, and per tensor the packed mask bits (LSB first, ceil(size/8)
// bytes) followed by size f64 pre-mask gradient values.
struct MaskDumpEntry {
    std::size_t epoch{0};
    std::vector<std::vector<std::uint8_t>> mask;
    std::vector<std::vector<double>> grads;
};

struct MaskDump {
    std::vector<std::string> names;
    std::vector<std::size_t> sizes;
    std::vector<MaskDumpEntry> entries;
};

class MaskDumpWriter {
public:
    MaskDumpWriter(const std::filesystem::path& path, std::vector<std::string> names, std::vector<std::size_t> sizes);
    void append(std::size_t epoch, const GradMask& mask, const std::vector<std::vector<double>>& grads);

private:
    std::ofstream out_;
    std::filesystem::path path_;
    std::vector<std::size_t> sizes_;
};

[[nodiscard]] MaskDump read_mask_dump(const std::filesystem::path& path);

struct GradStats {
    std::vector<std::string> names;
    std::vector<std::size_t> epochs;
    std::vector<std::vector<double>> mean_abs_grad;    // [epoch][tensor]
    std::vector<std::vector<double>> fraction_updated; // [epoch][tensor]
};

[[nodiscard]] GradStats grad_stats(const MaskDump& dump);
[[nodiscard]] GradStats grad_stats(const std::filesystem::path& dump_path);

} // namespace cure

#endif // CURE_ANALYSIS_HPP
