#ifndef CURE_OBJECTIVES_HPP
#define CURE_OBJECTIVES_HPP

#include <span>

#include "cure/model.hpp"
#include "cure/tensor.hpp"

namespace cure {

/// Mean over the batch of -log_softmax(logits)[y].
[[nodiscard]] Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Mean over the batch of sum_c p_c (log p_c - log q_c), with p and q the
/// softmax of the two logit tensors. Evaluated in log space.
[[nodiscard]] Tensor kl_div(const Tensor& p_logits, const Tensor& q_logits);

/// CE on natural inputs plus KL(p(x_nat) || p(x_adv)), both differentiable.
struct AdvLoss {
    Tensor ce_nat;
    Tensor kl_nat_adv;
    Tensor l_adv;
};

[[nodiscard]] AdvLoss adv_loss(const Classifier& model, const Tensor& x_nat, std::span<const int> labels,
                               const Tensor& x_adv);

/// KL(p(x_nat; rev) || p(x_nat; model)) + KL(p(x_adv; rev) || p(x_adv; model)).
/// The revision model's outputs are constants: no gradient reaches it.
[[nodiscard]] Tensor consistency_loss(const BlockModel& model, const BlockModel& revision, const Tensor& x_nat,
                                      const Tensor& x_adv);

/// l_adv + gamma * l_cr. With gamma == 0 the consistency term is left out of
/// the graph entirely, so the result is l_adv itself.
[[nodiscard]] Tensor total_loss(const Tensor& l_adv, const Tensor& l_cr, double gamma);

/// Scalar snapshot of one batch's loss terms.
struct LossBundle {
    double ce_nat{0.0};
    double kl_nat_adv{0.0};
    double l_adv{0.0};
    double l_cr{0.0};
    double total{0.0};
    double gamma{0.0};
};

[[nodiscard]] LossBundle make_bundle(const AdvLoss& adv, const Tensor& l_cr, const Tensor& total, double gamma);

} // namespace cure

#endif // CURE_OBJECTIVES_HPP
