#include "cure/training.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "cure/error.hpp"
#include "cure/objectives.hpp"
#include "cure/random.hpp"

namespace cure {
namespace {

enum class Method { Standard, Adversarial, Trades, Cure };

const char* phase_name(Method m)
{
    switch (m) {
    case Method::Standard: return "standard";
    case Method::Adversarial: return "adversarial";
    case Method::Trades: return "trades";
    case Method::Cure: return "cure";
    }
    return "unknown";
}

struct EpochAccumulator {
    explicit EpochAccumulator(std::size_t tensors) : grad_abs(tensors, 0.0), kept(tensors, 0.0) {}

    std::size_t batches{0};
    double loss{0.0};
    double ce_nat{0.0};
    double kl{0.0};
    double l_cr{0.0};
    std::vector<double> grad_abs;
    std::vector<double> kept;
    std::size_t revisions{0};
};

struct BatchOutcome {
    double loss{0.0};
    double ce_nat{0.0};
    double kl{0.0};
    double l_cr{0.0};
};

// Running state of one training phase.
struct Phase {
    Method method;
    BlockModel& model;
    const Split& data;
    const TrainConfig& cfg;
    OptimizerState opt;
    std::unique_ptr<RevisionState> revision;
    Rng revision_rng;
    std::size_t phase_step{0};
    std::optional<GradMask> epoch_mask;
};

double tensor_mean_abs(const Tensor& p)
{
    if (!p.has_grad()) {
        return 0.0;
    }
    double acc = 0.0;
    for (const double g : p.grad()) {
        acc += std::abs(g);
    }
    return acc / static_cast<double>(p.size());
}

GradMask full_mask(const BlockModel& model)
{
    GradMask m;
    for (const auto& p : model.parameters()) {
        m.keep.emplace_back(p.size(), 1);
    }
    return m;
}

AttackConfig with_objective(AttackConfig cfg, AttackObjective objective)
{
    cfg.objective = objective;
    return cfg;
}

BatchOutcome run_batch(Phase& ph, const Batch& batch, std::size_t global_step, std::size_t epoch,
                       EpochAccumulator& acc, std::vector<std::vector<double>>* last_grads, GradMask* last_mask)
{
    auto& model = ph.model;
    const auto& cfg = ph.cfg;
    const std::uint64_t attack_seed = substream_seed(cfg.seed, "attack.train", global_step);
    BatchOutcome out;
    Tensor loss;
    const GradMask* mask = nullptr;

    switch (ph.method) {
    case Method::Standard: {
        loss = cross_entropy(model.logits(batch.x), batch.y);
        out.ce_nat = loss.item();
        break;
    }
    case Method::Adversarial: {
        const Tensor x_adv =
            pgd(model, batch.x, batch.y, with_objective(cfg.attack, AttackObjective::CrossEntropy), attack_seed);
        loss = cross_entropy(model.logits(x_adv), batch.y);
        NoGradGuard guard;
        out.ce_nat = cross_entropy(model.logits(batch.x), batch.y).item();
        break;
    }
    case Method::Trades: {
        if (cfg.trades_beta == 0.0) {
            loss = cross_entropy(model.logits(batch.x), batch.y);
            out.ce_nat = loss.item();
            break;
        }
        const Tensor x_adv = pgd(model, batch.x, batch.y, with_objective(cfg.attack, AttackObjective::Kl), attack_seed);
        const AdvLoss adv = adv_loss(model, batch.x, batch.y, x_adv);
        loss = cfg.trades_beta == 1.0 ? adv.l_adv : add(adv.ce_nat, scale(adv.kl_nat_adv, cfg.trades_beta));
        out.ce_nat = adv.ce_nat.item();
        out.kl = adv.kl_nat_adv.item();
        break;
    }
    case Method::Cure: {
        const auto& cc = cfg.cure;
        const Tensor x_adv = pgd(model, batch.x, batch.y, with_objective(cfg.attack, cc.attack_objective), attack_seed);
        if (cc.p > 0.0) {
            if (cc.mask_frequency == MaskFrequency::PerBatch || !ph.epoch_mask) {
                ph.epoch_mask = build_mask(rgp_scores(model, batch.x, batch.y, x_adv, cc.alpha), cc.p);
                ph.epoch_mask->epoch = epoch;
            }
            mask = &*ph.epoch_mask;
        }
        if (revision_maybe_update(*ph.revision, model, ph.phase_step, ph.revision_rng)) {
            ++acc.revisions;
        }
        const AdvLoss adv = adv_loss(model, batch.x, batch.y, x_adv);
        Tensor l_cr;
        if (cc.gamma > 0.0) {
            l_cr = consistency_loss(model, ph.revision->model(), batch.x, x_adv);
            out.l_cr = l_cr.item();
        } else {
            NoGradGuard guard;
            out.l_cr = consistency_loss(model, ph.revision->model(), batch.x, x_adv).item();
        }
        loss = total_loss(adv.l_adv, l_cr, cc.gamma);
        out.ce_nat = adv.ce_nat.item();
        out.kl = adv.kl_nat_adv.item();
        break;
    }
    }
    out.loss = loss.item();
    backward(loss);

    const auto params = model.parameters();
    const auto groups = model.parameter_groups();
    for (std::size_t t = 0; t < params.size(); ++t) {
        acc.grad_abs[t] += tensor_mean_abs(params[t]);
        if (model.block_trainable()[groups[t]]) {
            acc.kept[t] += mask != nullptr ? mask->fraction_kept(t) : 1.0;
        }
    }
    if (last_grads != nullptr) {
        last_grads->clear();
        for (const auto& p : params) {
            if (p.has_grad()) {
                last_grads->emplace_back(p.grad().begin(), p.grad().end());
            } else {
                last_grads->emplace_back(p.size(), 0.0);
            }
        }
        *last_mask = mask != nullptr ? *mask : full_mask(model);
    }
    sgd_step(model, ph.opt, mask);
    ++ph.phase_step;
    return out;
}

void run_phase(Phase& ph, std::size_t first_epoch, std::size_t epochs, std::size_t& global_step, RunLog& log,
               MaskDumpWriter* dump)
{
    const auto& cfg = ph.cfg;
    const std::size_t tensors = ph.model.parameters().size();
    const std::uint64_t shuffle_seed = substream_seed(cfg.seed, "shuffle");
    const EvalAttack eval{AttackKind::Pgd, cfg.eval_attack};
    std::vector<std::vector<double>> last_grads;
    GradMask last_mask;

    for (std::size_t e = first_epoch; e < first_epoch + epochs; ++e) {
        EpochAccumulator acc(tensors);
        ph.epoch_mask.reset();
        const auto chunks = batches(ph.data.train, cfg.batch_size, shuffle_seed, e);
        for (std::size_t b = 0; b < chunks.size(); ++b) {
            BatchOutcome r;
            try {
                r = run_batch(ph, chunks[b], global_step, e, acc, dump != nullptr ? &last_grads : nullptr, &last_mask);
            } catch (const NumericError& err) {
                throw NumericError(std::string("training diverged (") + phase_name(ph.method) + ", epoch " +
                                   std::to_string(e + 1) + ", batch " + std::to_string(b + 1) + "): " + err.what());
            }
            ++global_step;
            ++acc.batches;
            acc.loss += r.loss;
            acc.ce_nat += r.ce_nat;
            acc.kl += r.kl;
            acc.l_cr += r.l_cr;
        }

        TrainRecord rec;
        rec.epoch = e + 1;
        rec.phase = phase_name(ph.method);
        const auto nb = static_cast<double>(acc.batches);
        rec.train_loss = acc.loss / nb;
        rec.ce_nat = acc.ce_nat / nb;
        rec.kl_nat_adv = acc.kl / nb;
        rec.l_cr = acc.l_cr / nb;
        for (std::size_t t = 0; t < tensors; ++t) {
            rec.mean_abs_grad.push_back(acc.grad_abs[t] / nb);
            rec.fraction_updated.push_back(acc.kept[t] / nb);
        }
        rec.revision_events = acc.revisions;
        rec.nat_train_acc = evaluate(ph.model, ph.data.train, std::nullopt, 0);
        rec.nat_test_acc = evaluate(ph.model, ph.data.test, std::nullopt, 0);
        rec.adv_test_acc = evaluate(ph.model, ph.data.test, eval, substream_seed(cfg.seed, "attack.eval", e));
        log.records.push_back(std::move(rec));

        if (dump != nullptr) {
            dump->append(e + 1, last_mask, last_grads);
        }
    }
}

std::unique_ptr<MaskDumpWriter> open_dump(const BlockModel& model, const TrainConfig& cfg)
{
    if (!cfg.mask_dump) {
        return nullptr;
    }
    std::vector<std::size_t> sizes;
    for (const auto& p : model.parameters()) {
        sizes.push_back(p.size());
    }
    return std::make_unique<MaskDumpWriter>(*cfg.mask_dump, model.parameter_names(), std::move(sizes));
}

Phase make_phase(Method method, BlockModel& model, const Split& data, const TrainConfig& cfg)
{
    Phase ph{method,
             model,
             data,
             cfg,
             OptimizerState::for_model(model, cfg.learning_rate, cfg.momentum, cfg.weight_decay),
             nullptr,
             Rng(cfg.seed, "revision"),
             0,
             std::nullopt};
    return ph;
}

RunLog run_single(Method method, BlockModel& model, const Split& data, const TrainConfig& cfg, std::string tag)
{
    cfg.validate();
    data.train.validate();
    data.test.validate();
    RunLog log;
    log.tag = std::move(tag);
    log.tensor_names = model.parameter_names();
    model.zero_grads();
    auto dump = open_dump(model, cfg);
    Phase ph = make_phase(method, model, data, cfg);
    if (method == Method::Cure) {
        const std::size_t per_epoch = (data.train.size() + cfg.batch_size - 1) / cfg.batch_size;
        ph.revision = std::make_unique<RevisionState>(model, cfg.cure.rate, cfg.cure.decay, cfg.cure.schedule,
                                                      per_epoch * cfg.epochs);
    }
    std::size_t global_step = 0;
    run_phase(ph, 0, cfg.epochs, global_step, log, dump.get());
    return log;
}

} // namespace

void TrainConfig::validate() const
{
    if (epochs == 0) {
        throw InvalidArgument("epochs must be at least 1");
    }
    if (batch_size == 0) {
        throw InvalidArgument("batch_size must be at least 1");
    }
    if (!(learning_rate >= 0.0) || !(momentum >= 0.0 && momentum < 1.0) || !(weight_decay >= 0.0)) {
        throw InvalidArgument("optimizer settings out of range");
    }
    attack.validate();
    eval_attack.validate();
    if (!(cure.alpha >= 0.0 && cure.alpha <= 1.0)) {
        throw InvalidArgument("cure alpha must lie in [0, 1]");
    }
    if (!(cure.p >= 0.0 && cure.p <= 100.0)) {
        throw InvalidArgument("cure p must lie in [0, 100]");
    }
    if (!(cure.gamma >= 0.0)) {
        throw InvalidArgument("cure gamma must be non-negative");
    }
    if (!(cure.rate >= 0.0 && cure.rate <= 1.0) || !(cure.decay >= 0.0 && cure.decay <= 1.0)) {
        throw InvalidArgument("revision rate and decay must lie in [0, 1]");
    }
    if (!(trades_beta >= 0.0)) {
        throw InvalidArgument("trades beta must be non-negative");
    }
}

TrainConfig default_train_config(double epsilon)
{
    TrainConfig cfg;
    cfg.attack = AttackConfig{epsilon, 10, epsilon / 4.0, true, AttackObjective::CrossEntropy, 1.0, 0.0, 1.0};
    cfg.eval_attack = AttackConfig{epsilon, 20, epsilon / 4.0, false, AttackObjective::CrossEntropy, 1.0, 0.0, 1.0};
    return cfg;
}

RunLog train_standard(BlockModel& model, const Split& data, const TrainConfig& cfg)
{
    return run_single(Method::Standard, model, data, cfg, "ST");
}

RunLog train_at(BlockModel& model, const Split& data, const TrainConfig& cfg)
{
    return run_single(Method::Adversarial, model, data, cfg, "AT");
}

RunLog train_trades_like(BlockModel& model, const Split& data, const TrainConfig& cfg)
{
    return run_single(Method::Trades, model, data, cfg, "TRADES");
}

RunLog train_cure(BlockModel& pretrained, const Split& data, const TrainConfig& cfg)
{
    return run_single(Method::Cure, pretrained, data, cfg, "CURE");
}

std::size_t cure_eff_warmup(const TrainConfig& cfg)
{
    std::size_t w = cfg.cure.warmup_epochs;
    if (w == 0) {
        w = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(cfg.epochs))));
    }
    return std::min(w, cfg.epochs);
}

RunLog train_cure_eff(BlockModel& fresh, const Split& data, const TrainConfig& cfg)
{
    cfg.validate();
    data.train.validate();
    data.test.validate();
    const std::size_t warmup = cure_eff_warmup(cfg);
    RunLog log;
    log.tag = "CURE-Eff";
    log.tensor_names = fresh.parameter_names();
    fresh.zero_grads();
    auto dump = open_dump(fresh, cfg);
    std::size_t global_step = 0;

    Phase warm = make_phase(Method::Standard, fresh, data, cfg);
    run_phase(warm, 0, warmup, global_step, log, dump.get());

    const std::size_t remaining = cfg.epochs - warmup;
    if (remaining > 0) {
        // Fresh optimizer state for the adversarial phase.
        Phase ph = make_phase(Method::Cure, fresh, data, cfg);
        const std::size_t per_epoch = (data.train.size() + cfg.batch_size - 1) / cfg.batch_size;
        ph.revision = std::make_unique<RevisionState>(fresh, cfg.cure.rate, cfg.cure.decay, cfg.cure.schedule,
                                                      per_epoch * remaining);
        run_phase(ph, warmup, remaining, global_step, log, dump.get());
    }
    return log;
}

std::string combo_tag(const std::set<std::size_t>& combo)
{
    std::string tag = "U-";
    for (const auto b : combo) {
        tag += std::to_string(b);
    }
    return tag;
}

FreezeResult freeze_experiment(const BlockModel& pretrained, const Split& data, const std::set<std::size_t>& combo,
                               bool reinit, bool train_classifier, const TrainConfig& cfg)
{
    if (combo.empty()) {
        throw InvalidArgument("freeze_experiment: the block combination must not be empty");
    }
    for (const auto b : combo) {
        if (b < 1 || b > pretrained.num_blocks()) {
            throw InvalidArgument("freeze_experiment: block " + std::to_string(b) + " outside 1.." +
                                  std::to_string(pretrained.num_blocks()));
        }
    }
    BlockModel model = reinit ? reinit_blocks(pretrained, combo, substream_seed(cfg.seed, "reinit")) : pretrained;
    for (std::size_t b = 0; b < model.num_blocks(); ++b) {
        model.set_trainable(b, combo.count(b + 1) > 0);
    }
    model.set_trainable(model.num_blocks(), train_classifier);
    RunLog log = run_single(Method::Adversarial, model, data, cfg, combo_tag(combo));
    return FreezeResult{std::move(model), std::move(log)};
}

MetricTrend metric_trend(const std::vector<double>& series)
{
    if (series.empty()) {
        throw InvalidArgument("metric_trend: empty series");
    }
    MetricTrend t;
    t.best = *std::max_element(series.begin(), series.end());
    t.last = series.back();
    t.delta = t.last - t.best;
    return t;
}

OverfitReport overfit_report(const RunLog& log)
{
    if (log.records.empty()) {
        throw InvalidArgument("overfit_report: run log has no epochs");
    }
    std::vector<double> nat;
    std::vector<double> adv;
    for (const auto& r : log.records) {
        nat.push_back(r.nat_test_acc);
        adv.push_back(r.adv_test_acc);
    }
    return OverfitReport{metric_trend(nat), metric_trend(adv)};
}

} // namespace cure
