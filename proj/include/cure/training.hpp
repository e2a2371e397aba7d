#ifndef CURE_TRAINING_HPP
#define CURE_TRAINING_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cure/analysis.hpp"
#include "cure/attacks.hpp"
#include "cure/data.hpp"
#include "cure/engine.hpp"
#include "cure/model.hpp"

namespace cure {

enum class MaskFrequency { PerBatch, PerEpoch };

struct CureConfig {
    double alpha{0.1};  // RGP mixing between natural and adversarial gradients
    double p{30.0};     // percent of entries masked per tensor
    double gamma{1.0};  // consistency-regularization weight
    double rate{0.2};   // revision probability r
    double decay{0.999};
    RateSchedule schedule{RateSchedule::LinearToZero};
    /// CURE-Eff natural warm-up; 0 selects 10% of the epoch budget (at least 1).
    std::size_t warmup_epochs{0};
    MaskFrequency mask_frequency{MaskFrequency::PerBatch};
    /// Training-time attack objective; the attack block supplies everything else.
    AttackObjective attack_objective{AttackObjective::Kl};
};

struct TrainConfig {
    std::size_t epochs{60};
    std::size_t batch_size{32};
    std::uint64_t seed{0};
    double learning_rate{0.02};
    double momentum{0.9};
    double weight_decay{5e-4};
    /// Training-time attack (PGD).
    AttackConfig attack{};
    /// Per-epoch robust test accuracy attack (PGD, evaluation settings).
    AttackConfig eval_attack{};
    CureConfig cure{};
    double trades_beta{1.0};
    /// Optional per-epoch dump of the last batch's mask and pre-mask gradients.
    std::optional<std::filesystem::path> mask_dump;

    void validate() const;
};

/// Training-time PGD-10 and evaluation PGD-20 at the given radius, step eps/4.
[[nodiscard]] TrainConfig default_train_config(double epsilon);

struct TrainRecord {
    std::size_t epoch{0};
    std::string phase;
    double nat_train_acc{0.0};
    double nat_test_acc{0.0};
    double adv_test_acc{0.0};
    double train_loss{0.0};
    double ce_nat{0.0};
    double kl_nat_adv{0.0};
    double l_cr{0.0};
    std::vector<double> mean_abs_grad;    // per parameter tensor, before masking
    std::vector<double> fraction_updated; // per parameter tensor
    std::size_t revision_events{0};
};

struct RunLog {
    std::string tag;
    std::vector<std::string> tensor_names;
    std::vector<TrainRecord> records;
};

/// Plain CE minimization.
[[nodiscard]] RunLog train_standard(BlockModel& model, const Split& data, const TrainConfig& cfg);

/// Madry-style adversarial training: minimize CE on PGD-CE examples.
[[nodiscard]] RunLog train_at(BlockModel& model, const Split& data, const TrainConfig& cfg);

/// CE(x_nat) + beta * KL(p(x_nat) || p(x_adv)) with KL-objective PGD.
[[nodiscard]] RunLog train_trades_like(BlockModel& model, const Split& data, const TrainConfig& cfg);

/// Conserve-update-revise training from a naturally pretrained model.
[[nodiscard]] RunLog train_cure(BlockModel& pretrained, const Split& data, const TrainConfig& cfg);

/// Natural warm-up followed by CURE within one epoch budget.
[[nodiscard]] RunLog train_cure_eff(BlockModel& fresh, const Split& data, const TrainConfig& cfg);

/// Epochs of natural warm-up used by train_cure_eff.
[[nodiscard]] std::size_t cure_eff_warmup(const TrainConfig& cfg);

/// U-<combo> study: only the listed blocks (1-based) train, optionally after
/// being reinitialized, under adversarial training from `pretrained`.
struct FreezeResult {
    BlockModel model;
    RunLog log;
};

[[nodiscard]] FreezeResult freeze_experiment(const BlockModel& pretrained, const Split& data,
                                             const std::set<std::size_t>& combo, bool reinit,
                                             bool train_classifier, const TrainConfig& cfg);

[[nodiscard]] std::string combo_tag(const std::set<std::size_t>& combo);

struct MetricTrend {
    double best{0.0};
    double last{0.0};
    double delta{0.0};
};

struct OverfitReport {
    MetricTrend natural;
    MetricTrend adversarial;
};

[[nodiscard]] MetricTrend metric_trend(const std::vector<double>& series);
[[nodiscard]] OverfitReport overfit_report(const RunLog& log);

} // namespace cure

#endif // CURE_TRAINING_HPP
