#include "cure/engine.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "cure/error.hpp"
#include "cure/objectives.hpp"

namespace cure {
namespace {

std::vector<std::vector<double>> take_abs_grads(BlockModel& model)
{
    std::vector<std::vector<double>> out;
    for (const auto& p : model.parameters()) {
        std::vector<double> g(p.size(), 0.0);
        if (p.has_grad()) {
            const auto src = p.grad();
            std::transform(src.begin(), src.end(), g.begin(), [](double v) { return std::abs(v); });
        }
        out.push_back(std::move(g));
    }
    model.zero_grads();
    return out;
}

} // namespace

ScoreSet rgp_scores(BlockModel& model, const Tensor& x_nat, std::span<const int> labels, const Tensor& x_adv,
                    double alpha)
{
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
        throw InvalidArgument("rgp alpha must lie in [0, 1]");
    }
    model.zero_grads();
    backward(cross_entropy(model.logits(x_nat), labels));
    const auto g_nat = take_abs_grads(model);
    backward(cross_entropy(model.logits(x_adv), labels));
    const auto g_adv = take_abs_grads(model);

    ScoreSet scores(g_nat.size());
    for (std::size_t t = 0; t < g_nat.size(); ++t) {
        scores[t].resize(g_nat[t].size());
        for (std::size_t k = 0; k < g_nat[t].size(); ++k) {
            scores[t][k] = alpha * g_nat[t][k] + (1.0 - alpha) * g_adv[t][k];
        }
    }
    return scores;
}

GradMask build_mask(const ScoreSet& scores, double p)
{
    if (!(p >= 0.0 && p <= 100.0)) {
        throw InvalidArgument("mask percentile p must lie in [0, 100]");
    }
    GradMask mask;
    mask.keep.reserve(scores.size());
    std::vector<std::size_t> order;
    for (const auto& s : scores) {
        const std::size_t n = s.size();
        const auto k = static_cast<std::size_t>(std::floor(p * static_cast<double>(n) / 100.0));
        std::vector<std::uint8_t> keep(n, 1);
        if (k > 0) {
            order.resize(n);
            std::iota(order.begin(), order.end(), std::size_t{0});
            std::stable_sort(order.begin(), order.end(), [&s](std::size_t a, std::size_t b) { return s[a] < s[b]; });
            for (std::size_t i = 0; i < std::min(k, n); ++i) {
                keep[order[i]] = 0;
            }
        }
        mask.keep.push_back(std::move(keep));
    }
    return mask;
}

RateSchedule parse_rate_schedule(std::string_view name)
{
    if (name == "constant") return RateSchedule::Constant;
    if (name == "linear_to_zero") return RateSchedule::LinearToZero;
    throw InvalidArgument("unknown revision rate schedule '" + std::string(name) + "'");
}

std::string_view to_string(RateSchedule schedule)
{
    return schedule == RateSchedule::Constant ? "constant" : "linear_to_zero";
}

RevisionState::RevisionState(const BlockModel& model, double rate, double decay, RateSchedule schedule,
                             std::size_t total_steps)
    : theta_rev_(model), rate_(rate), decay_(decay), schedule_(schedule), total_steps_(total_steps)
{
    if (!(rate >= 0.0 && rate <= 1.0)) {
        throw InvalidArgument("revision rate must lie in [0, 1]");
    }
    if (!(decay >= 0.0 && decay <= 1.0)) {
        throw InvalidArgument("revision decay must lie in [0, 1]");
    }
    theta_rev_.set_requires_grad(false);
    theta_rev_.zero_grads();
}

double RevisionState::rate_at(std::size_t step) const
{
    if (schedule_ == RateSchedule::Constant || total_steps_ == 0) {
        return rate_;
    }
    const double remaining = 1.0 - static_cast<double>(step) / static_cast<double>(total_steps_);
    return std::clamp(rate_ * remaining, 0.0, 1.0);
}

void RevisionState::apply(const BlockModel& model)
{
    if (!(model.arch() == theta_rev_.arch())) {
        throw ShapeError("revision update: architecture mismatch");
    }
    auto dst = theta_rev_.parameters();
    const auto src = model.parameters();
    const double d = decay_;
    for (std::size_t i = 0; i < dst.size(); ++i) {
        auto r = dst[i].mutable_data();
        const auto t = src[i].data();
        for (std::size_t k = 0; k < r.size(); ++k) {
            r[k] = d * r[k] + (1.0 - d) * t[k];
        }
    }
}

bool revision_maybe_update(RevisionState& rev, const BlockModel& model, std::size_t step, Rng& rng)
{
    if (!(model.arch() == rev.theta_rev_.arch())) {
        throw ShapeError("revision update: architecture mismatch");
    }
    const double s = rng.uniform();
    const bool occurred = s < rev.rate_at(step);
    if (occurred) {
        rev.apply(model);
    }
    rev.events_.push_back({step, occurred});
    return occurred;
}

} // namespace cure
