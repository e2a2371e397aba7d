#include "cure/objectives.hpp"

#include "cure/error.hpp"

namespace cure {

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels)
{
    if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
        throw ShapeError("cross_entropy: logits " + shape_string(logits.shape()) + " with " +
                         std::to_string(labels.size()) + " labels");
    }
    for (const int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= logits.dim(1)) {
            throw InvalidArgument("cross_entropy: label " + std::to_string(y) + " outside [0, " +
                                  std::to_string(logits.dim(1)) + ")");
        }
    }
    return scale(mean(pick(log_softmax(logits), labels)), -1.0);
}

Tensor kl_div(const Tensor& p_logits, const Tensor& q_logits)
{
    if (p_logits.shape() != q_logits.shape() || p_logits.rank() != 2) {
        throw ShapeError("kl_div: shapes " + shape_string(p_logits.shape()) + " and " +
                         shape_string(q_logits.shape()));
    }
    const Tensor log_p = log_softmax(p_logits);
    const Tensor log_q = log_softmax(q_logits);
    const double rows = static_cast<double>(p_logits.dim(0));
    return scale(sum(mul(exp(log_p), sub(log_p, log_q))), 1.0 / rows);
}

AdvLoss adv_loss(const Classifier& model, const Tensor& x_nat, std::span<const int> labels, const Tensor& x_adv)
{
    if (x_nat.shape() != x_adv.shape()) {
        throw ShapeError("adv_loss: natural " + shape_string(x_nat.shape()) + " vs adversarial " +
                         shape_string(x_adv.shape()));
    }
    const Tensor z_nat = model.logits(x_nat);
    const Tensor z_adv = model.logits(x_adv);
    AdvLoss out;
    out.ce_nat = cross_entropy(z_nat, labels);
    out.kl_nat_adv = kl_div(z_nat, z_adv);
    out.l_adv = add(out.ce_nat, out.kl_nat_adv);
    return out;
}

Tensor consistency_loss(const BlockModel& model, const BlockModel& revision, const Tensor& x_nat,
                        const Tensor& x_adv)
{
    if (!(model.arch() == revision.arch())) {
        throw ShapeError("consistency_loss: revision model architecture differs from the training model");
    }
    Tensor rev_nat;
    Tensor rev_adv;
    {
        NoGradGuard guard;
        rev_nat = revision.logits(x_nat);
        rev_adv = revision.logits(x_adv);
    }
    return add(kl_div(rev_nat, model.logits(x_nat)), kl_div(rev_adv, model.logits(x_adv)));
}

Tensor total_loss(const Tensor& l_adv, const Tensor& l_cr, double gamma)
{
    if (!(gamma >= 0.0)) {
        throw InvalidArgument("gamma must be non-negative");
    }
    if (gamma == 0.0 || !l_cr.defined()) {
        return l_adv;
    }
    return add(l_adv, scale(l_cr, gamma));
}

LossBundle make_bundle(const AdvLoss& adv, const Tensor& l_cr, const Tensor& total, double gamma)
{
    LossBundle b;
    b.ce_nat = adv.ce_nat.item();
    b.kl_nat_adv = adv.kl_nat_adv.item();
    b.l_adv = adv.l_adv.item();
    b.l_cr = l_cr.defined() ? l_cr.item() : 0.0;
    b.total = total.item();
    b.gamma = gamma;
    return b;
}

} // namespace cure
