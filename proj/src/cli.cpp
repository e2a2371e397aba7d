#include "cure/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "cure/analysis.hpp"
#include "cure/checkpoint.hpp"
#include "cure/config.hpp"
#include "cure/error.hpp"
#include "cure/persistence.hpp"
#include "cure/random.hpp"
#include "cure/training.hpp"

namespace cure {
namespace {

namespace fs = std::filesystem;

struct Invocation {
    std::string config;
    std::vector<std::string> extras;
};

Overrides parse_overrides(const std::vector<std::string>& extras)
{
    Overrides out;
    for (std::size_t i = 0; i < extras.size(); ++i) {
        const std::string& tok = extras[i];
        if (tok.rfind("--", 0) != 0 || tok.size() == 2) {
            throw ConfigError(tok, "unexpected argument");
        }
        const std::string body = tok.substr(2);
        const auto eq = body.find('=');
        if (eq != std::string::npos) {
            out.emplace_back(body.substr(0, eq), body.substr(eq + 1));
            continue;
        }
        if (i + 1 >= extras.size()) {
            throw ConfigError(body, "missing value");
        }
        out.emplace_back(body, extras[++i]);
    }
    return out;
}

ExperimentConfig resolve(const Invocation& inv)
{
    std::optional<fs::path> file;
    if (!inv.config.empty()) {
        file = inv.config;
    }
    return parse_config(file, parse_overrides(inv.extras));
}

fs::path normalized(const fs::path& p)
{
    return fs::weakly_canonical(fs::absolute(p));
}

// Output directory of one command; tracks what it wrote for the manifest.
class Outputs {
public:
    Outputs(const ExperimentConfig& cfg, const std::vector<fs::path>& inputs) : dir_(cfg.output_dir)
    {
        const auto root = normalized(dir_);
        for (const auto& in : inputs) {
            if (in.empty()) {
                continue;
            }
            const auto p = normalized(in);
            const auto rel = p.lexically_relative(root);
            if (!rel.empty() && *rel.begin() != "..") {
                throw ConfigError("output_dir", "contains the input file " + in.string());
            }
        }
        fs::create_directories(dir_);
        text("config.resolved", render_config(cfg));
    }

    [[nodiscard]] fs::path path(const std::string& name) const { return dir_ / name; }

    void text(const std::string& name, const std::string& content)
    {
        write_text(dir_ / name, content);
        files_.push_back(name);
    }

    void table(const std::string& name, const Table& t)
    {
        write_table_csv(dir_ / name, t);
        files_.push_back(name);
    }

    void json(const std::string& name, const std::vector<std::pair<std::string, double>>& metrics)
    {
        write_summary_json(dir_ / name, metrics);
        files_.push_back(name);
    }

    void record(const std::string& name) { files_.push_back(name); }

    void finish() { write_manifest(dir_, files_); }

private:
    fs::path dir_;
    std::vector<std::string> files_;
};

BlockModel load_model(const std::string& path, const std::string& key)
{
    if (path.empty()) {
        throw ConfigError(key, "a checkpoint is required");
    }
    if (!fs::exists(path)) {
        throw IoError("checkpoint " + path + " does not exist");
    }
    return load_checkpoint(path).model;
}

void check_model_fits(const BlockModel& m, const Split& data, const std::string& key)
{
    if (m.arch().input_dim != data.test.features.dim(1) || m.arch().num_classes < data.test.num_classes) {
        throw ConfigError(key, "model does not match the configured dataset");
    }
}

std::vector<double> parse_eps_list(const std::string& text)
{
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ConfigError("eps", "bad epsilon '" + item + "'");
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const Invocation& inv, std::ostream& out)
{
    const auto cfg = resolve(inv);
    Outputs o(cfg, {cfg.data.path});
    const auto split = load_split(cfg);
    save_csv(o.path("train.csv"), split.train);
    o.record("train.csv");
    save_csv(o.path("test.csv"), split.test);
    o.record("test.csv");
    o.finish();
    out << "train " << split.train.size() << " test " << split.test.size() << "\n";
    return 0;
}

int cmd_train(const Invocation& inv, std::ostream& out)
{
    const auto cfg = resolve(inv);
    std::vector<fs::path> inputs{cfg.data.path};
    const bool needs_init = cfg.mode == Mode::Cure || cfg.mode == Mode::Freeze;
    if (needs_init) {
        if (cfg.init_checkpoint.empty()) {
            throw ConfigError("init_checkpoint", std::string("required for mode ") + std::string(to_string(cfg.mode)));
        }
        inputs.push_back(cfg.init_checkpoint);
    }
    Outputs o(cfg, inputs);
    const auto split = load_split(cfg);
    const auto arch = make_arch(cfg, split.train.features.dim(1), split.train.num_classes);

    TrainConfig tc = cfg.train;
    if (cfg.dump_masks) {
        tc.mask_dump = o.path("masks.bin");
    }

    std::optional<BlockModel> pretrained;
    if (needs_init) {
        pretrained = load_model(cfg.init_checkpoint.string(), "init_checkpoint");
        if (!(pretrained->arch() == arch)) {
            throw ConfigError("init_checkpoint", "architecture does not match the configured model and dataset");
        }
        pretrained->set_all_trainable(true);
    }

    const std::uint64_t init_seed = substream_seed(cfg.train.seed, "init");
    std::optional<BlockModel> model;
    RunLog log;
    switch (cfg.mode) {
    case Mode::St:
        model = BlockModel::init(arch, init_seed);
        log = train_standard(*model, split, tc);
        break;
    case Mode::At:
        model = BlockModel::init(arch, init_seed);
        log = train_at(*model, split, tc);
        break;
    case Mode::Trades:
        model = BlockModel::init(arch, init_seed);
        log = train_trades_like(*model, split, tc);
        break;
    case Mode::CureEff:
        model = BlockModel::init(arch, init_seed);
        log = train_cure_eff(*model, split, tc);
        break;
    case Mode::Cure:
        model = *pretrained;
        log = train_cure(*model, split, tc);
        break;
    case Mode::Freeze: {
        auto fr = freeze_experiment(*pretrained, split, cfg.freeze.blocks, cfg.freeze.reinit,
                                    cfg.freeze.train_classifier, tc);
        model = std::move(fr.model);
        log = std::move(fr.log);
        break;
    }
    }
    if (cfg.dump_masks) {
        o.record("masks.bin");
    }

    save_checkpoint(o.path("model.ckpt"), *model, static_cast<std::int64_t>(log.records.size()), cfg.train.seed);
    o.record("model.ckpt");
    write_runlog_csv(o.path("runlog.csv"), log);
    o.record("runlog.csv");

    const auto& last = log.records.back();
    const auto rep = overfit_report(log);
    const double score = last.nat_test_acc + last.adv_test_acc > 0.0 ? nrr(last.nat_test_acc, last.adv_test_acc) : 0.0;
    o.json("summary.json", {{"nat_train_acc", last.nat_train_acc},
                            {"nat_test_acc", last.nat_test_acc},
                            {"adv_test_acc", last.adv_test_acc},
                            {"nrr", score},
                            {"nat_best", rep.natural.best},
                            {"nat_delta", rep.natural.delta},
                            {"adv_best", rep.adversarial.best},
                            {"adv_delta", rep.adversarial.delta}});
    o.finish();

    for (const auto& r : log.records) {
        out << "epoch " << r.epoch << " " << r.phase << " loss " << fmt_real(r.train_loss) << " nat "
            << fmt_acc(r.nat_test_acc) << " adv " << fmt_acc(r.adv_test_acc) << "\n";
    }
    out << log.tag << " nat " << fmt_acc(last.nat_test_acc) << " adv " << fmt_acc(last.adv_test_acc) << " nrr "
        << fmt_acc(score) << "\n";
    return 0;
}

int cmd_attack_eval(const Invocation& inv, const std::string& checkpoint, const std::string& kind, std::ostream& out)
{
    const auto cfg = resolve(inv);
    Outputs o(cfg, {checkpoint, cfg.data.path});
    const auto model = load_model(checkpoint, "checkpoint");
    const auto split = load_split(cfg);
    check_model_fits(model, split, "checkpoint");

    EvalAttack attack{AttackKind::Pgd, cfg.train.eval_attack};
    if (kind == "fgsm") {
        attack.kind = AttackKind::Fgsm;
        attack.config.steps = 1;
        attack.config.step_size = attack.config.epsilon;
        attack.config.random_init = false;
    } else if (kind != "pgd") {
        throw ConfigError("attack", "expected pgd or fgsm, got '" + kind + "'");
    }
    const double acc = evaluate(model, split.test, attack, substream_seed(cfg.train.seed, "attack-eval"));
    const auto& a = attack.config;
    o.table("attack_eval.csv", {{"attack", "epsilon", "steps", "step_size", "accuracy"},
                                {kind, fmt_real(a.epsilon), std::to_string(a.steps), fmt_real(a.step_size), fmt_acc(acc)}});
    o.json("attack_eval.json", {{"epsilon", a.epsilon}, {"accuracy", acc}});
    o.finish();
    out << "accuracy " << fmt_acc(acc) << "\n";
    return 0;
}

int cmd_sweep(const Invocation& inv, const std::string& checkpoint, const std::string& eps_text, std::ostream& out)
{
    const auto cfg = resolve(inv);
    Outputs o(cfg, {checkpoint, cfg.data.path});
    const auto model = load_model(checkpoint, "checkpoint");
    const auto split = load_split(cfg);
    check_model_fits(model, split, "checkpoint");

    std::vector<double> eps;
    if (eps_text.empty()) {
        eps.push_back(0.0);
        for (const double e : default_sweep_grid()) eps.push_back(e);
    } else {
        eps = parse_eps_list(eps_text);
    }
    const auto points = strength_sweep(model, split.test, eps, cfg.train.eval_attack, substream_seed(cfg.train.seed, "sweep"));
    Table t{{"epsilon", "accuracy"}};
    std::vector<std::pair<std::string, double>> summary;
    for (const auto& p : points) {
        t.push_back({fmt_real(p.epsilon), fmt_acc(p.accuracy)});
        summary.emplace_back("acc@" + fmt_real(p.epsilon), p.accuracy);
        out << "eps " << fmt_real(p.epsilon) << " accuracy " << fmt_acc(p.accuracy) << "\n";
    }
    o.table("sweep.csv", t);
    o.json("sweep.json", summary);
    o.finish();
    return 0;
}

struct AnalyzeArgs {
    std::string what;
    std::string checkpoint;
    std::string checkpoint_b;
    std::optional<double> nat;
    std::optional<double> rob;
    std::string runlog;
    std::string dump;
    double eps_hi{0.5};
    double tol{1e-3};
    std::size_t samples{50};
    bool uncentered{false};
};

int cmd_analyze(const Invocation& inv, const AnalyzeArgs& a, std::ostream& out)
{
    const auto cfg = resolve(inv);
    if (a.what == "nrr") {
        Outputs o(cfg, {a.runlog});
        double nat = 0.0;
        double rob = 0.0;
        if (!a.runlog.empty()) {
            const auto log = read_runlog_csv(a.runlog);
            if (log.records.empty()) throw IoError("run log " + a.runlog + " has no epochs");
            nat = log.records.back().nat_test_acc;
            rob = log.records.back().adv_test_acc;
        } else if (a.nat && a.rob) {
            nat = *a.nat;
            rob = *a.rob;
        } else {
            throw ConfigError("nat", "give --nat and --rob, or --runlog");
        }
        const auto row = tradeoff_row(nat, rob);
        o.table("nrr.csv", {{"nat_acc", "rob_acc", "nrr"}, {fmt_acc(row.nat_acc), fmt_acc(row.rob_acc), fmt_acc(row.nrr)}});
        o.json("nrr.json", {{"nat_acc", row.nat_acc}, {"rob_acc", row.rob_acc}, {"nrr", row.nrr}});
        o.finish();
        out << "nrr " << fmt_acc(row.nrr) << "\n";
        return 0;
    }
    if (a.what == "grad-stats") {
        if (a.dump.empty()) throw ConfigError("dump", "a mask dump is required");
        Outputs o(cfg, {a.dump});
        const auto stats = grad_stats(fs::path(a.dump));
        Table t{{"epoch", "tensor", "mean_abs_grad", "fraction_updated"}};
        for (std::size_t e = 0; e < stats.epochs.size(); ++e) {
            for (std::size_t i = 0; i < stats.names.size(); ++i) {
                t.push_back({std::to_string(stats.epochs[e]), stats.names[i], fmt_real(stats.mean_abs_grad[e][i]),
                             fmt_real(stats.fraction_updated[e][i])});
            }
        }
        o.table("grad_stats.csv", t);
        o.finish();
        out << "epochs " << stats.epochs.size() << " tensors " << stats.names.size() << "\n";
        return 0;
    }
    if (a.what == "cka") {
        const std::string other = a.checkpoint_b.empty() ? a.checkpoint : a.checkpoint_b;
        Outputs o(cfg, {a.checkpoint, other, cfg.data.path});
        const auto ma = load_model(a.checkpoint, "checkpoint");
        const auto mb = load_model(other, "checkpoint-b");
        const auto split = load_split(cfg);
        check_model_fits(ma, split, "checkpoint");
        check_model_fits(mb, split, "checkpoint-b");
        const std::size_t n = std::min<std::size_t>(512, split.test.size());
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = i;
        const auto probe = split.test.subset(idx).features;
        const auto m = cka_matrix(ma, mb, probe, !a.uncentered);
        Table t{{"block"}};
        for (std::size_t j = 0; j < m.front().size(); ++j) t[0].push_back("b" + std::to_string(j + 1));
        std::vector<std::pair<std::string, double>> summary;
        for (std::size_t i = 0; i < m.size(); ++i) {
            Table::value_type row{"a" + std::to_string(i + 1)};
            for (std::size_t j = 0; j < m[i].size(); ++j) {
                row.push_back(fmt_real(m[i][j]));
                if (i == j) summary.emplace_back("diag" + std::to_string(i + 1), m[i][j]);
            }
            t.push_back(std::move(row));
        }
        o.table("cka.csv", t);
        o.json("cka.json", summary);
        o.finish();
        for (const auto& [k, v] : summary) out << k << " " << fmt_real(v) << "\n";
        return 0;
    }
    if (a.what == "min-eps") {
        Outputs o(cfg, {a.checkpoint, cfg.data.path});
        const auto model = load_model(a.checkpoint, "checkpoint");
        const auto split = load_split(cfg);
        check_model_fits(model, split, "checkpoint");
        const std::size_t n = std::min(a.samples, split.test.size());
        Table t{{"index", "label", "min_epsilon"}};
        double total = 0.0;
        std::size_t found = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const auto one = split.test.subset({i});
            const auto e = min_epsilon(model, one.features, one.labels[0], cfg.train.eval_attack, a.eps_hi, a.tol,
                                       substream_seed(cfg.train.seed, "min-eps", i));
            t.push_back({std::to_string(i), std::to_string(one.labels[0]), e ? fmt_real(*e) : "none"});
            if (e) {
                total += *e;
                ++found;
            }
        }
        o.table("min_eps.csv", t);
        o.json("min_eps.json", {{"samples", static_cast<double>(n)},
                                {"found", static_cast<double>(found)},
                                {"mean_min_epsilon", found ? total / static_cast<double>(found) : 0.0}});
        o.finish();
        out << "found " << found << " of " << n << "\n";
        return 0;
    }
    throw ConfigError("analysis", "expected cka, nrr, grad-stats or min-eps, got '" + a.what + "'");
}

int cmd_corrupt_eval(const Invocation& inv, const std::string& checkpoint, std::ostream& out)
{
    const auto cfg = resolve(inv);
    Outputs o(cfg, {checkpoint, cfg.data.path});
    const auto model = load_model(checkpoint, "checkpoint");
    const auto split = load_split(cfg);
    check_model_fits(model, split, "checkpoint");
    Table t{{"corruption", "severity", "accuracy"}};
    const double clean = evaluate(model, split.test, std::nullopt, 0);
    t.push_back({"none", "0", fmt_acc(clean)});
    std::vector<std::pair<std::string, double>> summary{{"clean", clean}};
    const std::uint64_t seed = substream_seed(cfg.train.seed, "corrupt-eval");
    for (const auto kind : all_corruption_kinds()) {
        double mean = 0.0;
        for (int s = 1; s <= 5; ++s) {
            const auto ds = corrupt(split.test, CorruptionSpec{kind, s}, seed);
            const double acc = evaluate(model, ds, std::nullopt, 0);
            mean += acc / 5.0;
            t.push_back({std::string(to_string(kind)), std::to_string(s), fmt_acc(acc)});
        }
        summary.emplace_back(std::string(to_string(kind)), mean);
        out << to_string(kind) << " mean " << fmt_acc(mean) << "\n";
    }
    o.table("corrupt_eval.csv", t);
    o.json("corrupt_eval.json", summary);
    o.finish();
    return 0;
}

int cmd_overfit_report(const Invocation& inv, const std::vector<std::string>& runlogs, std::ostream& out)
{
    const auto cfg = resolve(inv);
    if (runlogs.empty()) {
        throw ConfigError("runlog", "at least one run log is required");
    }
    Outputs o(cfg, std::vector<fs::path>(runlogs.begin(), runlogs.end()));
    Table t{{"run", "metric", "best", "last", "delta"}};
    for (const auto& path : runlogs) {
        const auto rep = overfit_report(read_runlog_csv(path));
        for (const auto& [name, m] : {std::pair{"natural", rep.natural}, std::pair{"adversarial", rep.adversarial}}) {
            t.push_back({path, name, fmt_acc(m.best), fmt_acc(m.last), fmt_acc(m.delta)});
            out << path << " " << name << " best " << fmt_acc(m.best) << " last " << fmt_acc(m.last) << " delta "
                << fmt_acc(m.delta) << "\n";
        }
    }
    o.table("overfit.csv", t);
    o.finish();
    return 0;
}

void print_error(std::ostream& err, const std::string& category, const std::string& message, const std::string& key = {})
{
    nlohmann::ordered_json j;
    j["error"] = category;
    if (!key.empty()) {
        j["key"] = key;
    }
    j["message"] = message;
    err << j.dump() << "\n";
}

} // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"cure-forge: adversarial training experiments on small block MLPs"};
    app.require_subcommand(1);

    Invocation inv;
    auto add = [&](const char* name, const char* help) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("--config", inv.config, "Config file (flat key = value)");
        sub->allow_extras();
        return sub;
    };

    auto* gen = add("gen-data", "Write the configured dataset split as CSV");
    auto* train = add("train", "Train a model in the configured mode");

    std::string checkpoint;
    std::string attack_kind = "pgd";
    auto* attack_eval = add("attack-eval", "Accuracy of a checkpoint under attack");
    attack_eval->add_option("--checkpoint", checkpoint)->required();
    attack_eval->add_option("--attack", attack_kind, "pgd or fgsm");

    std::string eps_text;
    auto* sweep = add("sweep", "Accuracy over a list of perturbation radii");
    sweep->add_option("--checkpoint", checkpoint)->required();
    sweep->add_option("--eps", eps_text, "Ascending comma-separated radii");

    AnalyzeArgs an;
    auto* analyze = add("analyze", "cka | nrr | grad-stats | min-eps");
    analyze->add_option("what", an.what)->required();
    analyze->add_option("--checkpoint", an.checkpoint);
    analyze->add_option("--checkpoint-b", an.checkpoint_b);
    analyze->add_option("--nat", an.nat);
    analyze->add_option("--rob", an.rob);
    analyze->add_option("--runlog", an.runlog);
    analyze->add_option("--dump", an.dump);
    analyze->add_option("--eps-hi", an.eps_hi);
    analyze->add_option("--tol", an.tol);
    analyze->add_option("--samples", an.samples);
    analyze->add_flag("--uncentered", an.uncentered);

    auto* corrupt_eval = add("corrupt-eval", "Accuracy under synthetic corruptions, severities 1-5");
    corrupt_eval->add_option("--checkpoint", checkpoint)->required();

    std::vector<std::string> runlogs;
    auto* overfit = add("overfit-report", "Best, last and delta of test accuracies");
    overfit->add_option("--runlog", runlogs)->required();

    try {
        std::vector<std::string> rev(args.rbegin(), args.rend());
        app.parse(rev);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        print_error(err, "usage", e.what());
        return 1;
    }

    try {
        for (auto* sub : app.get_subcommands()) {
            inv.extras = sub->remaining();
            if (sub == gen) return cmd_gen_data(inv, out);
            if (sub == train) return cmd_train(inv, out);
            if (sub == attack_eval) return cmd_attack_eval(inv, checkpoint, attack_kind, out);
            if (sub == sweep) return cmd_sweep(inv, checkpoint, eps_text, out);
            if (sub == analyze) return cmd_analyze(inv, an, out);
            if (sub == corrupt_eval) return cmd_corrupt_eval(inv, checkpoint, out);
            if (sub == overfit) return cmd_overfit_report(inv, runlogs, out);
        }
    } catch (const ConfigError& e) {
        print_error(err, e.category(), e.what(), e.key());
        return 1;
    } catch (const Error& e) {
        print_error(err, e.category(), e.what());
        return 1;
    } catch (const std::exception& e) {
        print_error(err, "internal", e.what());
        return 1;
    }
    print_error(err, "usage", "no subcommand");
    return 1;
}

} // namespace cure
