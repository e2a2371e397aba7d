#ifndef CURE_ENGINE_HPP
#define CURE_ENGINE_HPP

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "cure/model.hpp"
#include "cure/random.hpp"
#include "cure/tensor.hpp"

namespace cure {

/// Per-parameter importance scores, one vector per entry of
/// BlockModel::parameters().
using ScoreSet = std::vector<std::vector<double>>;

/// Robust gradient prominence of every weight:
///   alpha * |dCE(x_nat)/dw| + (1 - alpha) * |dCE(x_adv)/dw|
/// from two separate backward passes. Parameters are untouched and their
/// gradients are left cleared.
[[nodiscard]] ScoreSet rgp_scores(BlockModel& model, const Tensor& x_nat, std::span<const int> labels,
                                  const Tensor& x_adv, double alpha);

/// Zero out the floor(p/100 * n) lowest-scoring entries of each tensor.
/// Ties go to the lower flat index.
[[nodiscard]] GradMask build_mask(const ScoreSet& scores, double p);

enum class RateSchedule { Constant, LinearToZero };

[[nodiscard]] RateSchedule parse_rate_schedule(std::string_view name);
[[nodiscard]] std::string_view to_string(RateSchedule schedule);

struct RevisionEvent {
    std::size_t step{0};
    bool occurred{false};
};

/// Stochastically updated exponential moving average of the training
/// parameters (the revision model).
class RevisionState {
public:
    /// `total_steps` is the horizon of the linear schedule.
    RevisionState(const BlockModel& model, double rate, double decay, RateSchedule schedule,
                  std::size_t total_steps);

    [[nodiscard]] double rate_at(std::size_t step) const;
    [[nodiscard]] double decay() const noexcept { return decay_; }
    [[nodiscard]] const BlockModel& model() const noexcept { return theta_rev_; }
    [[nodiscard]] const std::vector<RevisionEvent>& events() const noexcept { return events_; }

    /// theta_rev <- d * theta_rev + (1 - d) * theta, unconditionally.
    void apply(const BlockModel& model);

private:
    BlockModel theta_rev_;
    double rate_;
    double decay_;
    RateSchedule schedule_;
    std::size_t total_steps_;
    std::vector<RevisionEvent> events_;

    friend bool revision_maybe_update(RevisionState&, const BlockModel&, std::size_t, Rng&);
};

/// Draw s ~ U(0,1); apply the EMA when s < rate_at(step). The draw is logged
/// either way. Returns whether the update happened.
bool revision_maybe_update(RevisionState& rev, const BlockModel& model, std::size_t step, Rng& rng);

} // namespace cure

#endif // CURE_ENGINE_HPP
