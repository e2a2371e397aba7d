#include "cure/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cure/error.hpp"
#include "cure/objectives.hpp"
#include "cure/random.hpp"

namespace cure {
namespace {

double sign(double v)
{
    return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
}

// Inner objective J evaluated at the leaf `x_adv`.
Tensor attack_objective(const Classifier& model, const Tensor& x_adv, std::span<const int> labels,
                        const Tensor& clean_logits, const AttackConfig& cfg)
{
    const Tensor z = model.logits(x_adv);
    switch (cfg.objective) {
    case AttackObjective::CrossEntropy:
        return cross_entropy(z, labels);
    case AttackObjective::Kl:
        return kl_div(clean_logits, z);
    case AttackObjective::CrossEntropyKl:
        return add(cross_entropy(z, labels), scale(kl_div(clean_logits, z), cfg.objective_alpha));
    }
    throw InvalidArgument("unknown attack objective");
}

void check_inputs(const Tensor& x, std::span<const int> labels)
{
    if (x.rank() != 2 || x.dim(0) != labels.size()) {
        throw ShapeError("attack input " + shape_string(x.shape()) + " with " + std::to_string(labels.size()) +
                         " labels");
    }
}

} // namespace

AttackObjective parse_attack_objective(std::string_view name)
{
    if (name == "ce") return AttackObjective::CrossEntropy;
    if (name == "kl") return AttackObjective::Kl;
    if (name == "ce_plus_alpha_kl") return AttackObjective::CrossEntropyKl;
    throw InvalidArgument("unknown attack objective '" + std::string(name) + "'");
}

std::string_view to_string(AttackObjective objective)
{
    switch (objective) {
    case AttackObjective::CrossEntropy: return "ce";
    case AttackObjective::Kl: return "kl";
    case AttackObjective::CrossEntropyKl: return "ce_plus_alpha_kl";
    }
    return "unknown";
}

void AttackConfig::validate() const
{
    if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) {
        throw InvalidArgument("attack epsilon must be a non-negative number");
    }
    if (steps < 1) {
        throw InvalidArgument("attack steps must be at least 1");
    }
    if (epsilon > 0.0) {
        if (!(step_size > 0.0)) {
            throw InvalidArgument("attack step_size must be positive");
        }
        if (step_size > 2.0 * epsilon) {
            throw InvalidArgument("attack step_size must not exceed 2 * epsilon");
        }
    }
    if (!(clamp_lo <= clamp_hi)) {
        throw InvalidArgument("attack clamp bounds are inverted");
    }
}

AttackConfig AttackConfig::at_epsilon(double eps) const
{
    AttackConfig out = *this;
    const double ratio = epsilon > 0.0 ? step_size / epsilon : 0.25;
    out.epsilon = eps;
    out.step_size = eps * ratio;
    return out;
}

Tensor fgsm(const Classifier& model, const Tensor& x, std::span<const int> labels, const AttackConfig& cfg)
{
    cfg.validate();
    check_inputs(x, labels);
    if (cfg.steps != 1) {
        throw InvalidArgument("fgsm requires steps == 1");
    }
    if (cfg.epsilon == 0.0) {
        return x.detach();
    }
    const Tensor probe = x.clone(true);
    const Tensor g = grad_wrt(cross_entropy(model.logits(probe), labels), probe);
    const auto x0 = x.data();
    const auto gd = g.data();
    std::vector<double> out(x0.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double delta = std::clamp(cfg.epsilon * sign(gd[i]), -cfg.epsilon, cfg.epsilon);
        out[i] = std::clamp(x0[i] + delta, cfg.clamp_lo, cfg.clamp_hi);
    }
    return Tensor::from(x.shape(), std::move(out));
}

Tensor pgd(const Classifier& model, const Tensor& x, std::span<const int> labels, const AttackConfig& cfg,
           std::uint64_t seed)
{
    cfg.validate();
    check_inputs(x, labels);
    if (cfg.epsilon == 0.0) {
        return x.detach();
    }
    const double eps = cfg.epsilon;
    const auto x0 = x.data();
    const std::size_t n = x0.size();

    Tensor clean_logits;
    if (cfg.objective != AttackObjective::CrossEntropy) {
        NoGradGuard guard;
        clean_logits = model.logits(x);
    }

    std::vector<double> adv(n);
    Rng rng(seed, "pgd.init");
    for (std::size_t i = 0; i < n; ++i) {
        const double start = cfg.random_init ? rng.uniform(-eps, eps) : 0.0;
        adv[i] = std::clamp(x0[i] + start, cfg.clamp_lo, cfg.clamp_hi);
    }
    for (int step = 0; step < cfg.steps; ++step) {
        const Tensor probe = Tensor::from(x.shape(), adv, true);
        const Tensor g = grad_wrt(attack_objective(model, probe, labels, clean_logits, cfg), probe);
        const auto gd = g.data();
        for (std::size_t i = 0; i < n; ++i) {
            const double delta = std::clamp((adv[i] - x0[i]) + cfg.step_size * sign(gd[i]), -eps, eps);
            adv[i] = std::clamp(x0[i] + delta, cfg.clamp_lo, cfg.clamp_hi);
        }
    }
    return Tensor::from(x.shape(), std::move(adv));
}

std::optional<double> min_epsilon(const Classifier& model, const Tensor& x, int label, const AttackConfig& tmpl,
                                  double eps_hi, double tol, std::uint64_t seed)
{
    if (!(eps_hi > 0.0) || !(tol > 0.0)) {
        throw InvalidArgument("min_epsilon requires eps_hi > 0 and tol > 0");
    }
    if (x.rank() != 2 || x.dim(0) != 1) {
        throw ShapeError("min_epsilon expects a single sample [1 x d], got " + shape_string(x.shape()));
    }
    const std::vector<int> labels{label};
    if (predict(model, x)[0] != label) {
        return 0.0;
    }
    const auto fooled = [&](double eps) {
        const Tensor adv = pgd(model, x, labels, tmpl.at_epsilon(eps), seed);
        return predict(model, adv)[0] != label;
    };
    if (!fooled(eps_hi)) {
        return std::nullopt;
    }
    double lo = 0.0;
    double hi = eps_hi;
    while (hi - lo > tol) {
        const double mid = 0.5 * (lo + hi);
        if (fooled(mid)) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    return hi;
}

} // namespace cure
