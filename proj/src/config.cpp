#include "cure/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <sstream>

#include "cure/error.hpp"

namespace cure {
namespace {

std::string trim(std::string_view s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::string fmt_double(double v)
{
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

double parse_double(const std::string& key, const std::string& value)
{
    double out = 0.0;
    const auto* end = value.data() + value.size();
    const auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc() || ptr != end || !std::isfinite(out)) {
        throw ConfigError(key, "expected a number, got '" + value + "'");
    }
    return out;
}

std::uint64_t parse_uint(const std::string& key, const std::string& value)
{
    std::uint64_t out = 0;
    const auto* end = value.data() + value.size();
    const auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc() || ptr != end) {
        throw ConfigError(key, "expected a non-negative integer, got '" + value + "'");
    }
    return out;
}

bool parse_bool(const std::string& key, const std::string& value)
{
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ConfigError(key, "expected true or false, got '" + value + "'");
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& value)
{
    std::vector<std::size_t> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        out.push_back(parse_uint(key, trim(item)));
    }
    if (out.empty()) {
        throw ConfigError(key, "expected a comma-separated list");
    }
    return out;
}

std::string join(const auto& values)
{
    std::string out;
    for (const auto v : values) {
        if (!out.empty()) out += ',';
        out += std::to_string(v);
    }
    return out;
}

void in_range(const std::string& key, double v, double lo, double hi)
{
    if (!(v >= lo && v <= hi)) {
        throw ConfigError(key, "value " + fmt_double(v) + " outside [" + fmt_double(lo) + ", " + fmt_double(hi) + "]");
    }
}

void at_least(const std::string& key, double v, double lo)
{
    if (!(v >= lo)) {
        throw ConfigError(key, "value " + fmt_double(v) + " must be at least " + fmt_double(lo));
    }
}

template <typename F>
auto named(const std::string& key, F&& parse)
{
    try {
        return parse();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(key, e.what());
    }
}

struct Field {
    std::string key;
    std::function<void(ExperimentConfig&, const std::string&)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

#define NUM_FIELD(KEY, MEMBER, LO, HI)                                                                                 \
    Field{KEY,                                                                                                         \
          [](ExperimentConfig& c, const std::string& v) {                                                              \
              const double x = parse_double(KEY, v);                                                                   \
              in_range(KEY, x, LO, HI);                                                                                \
              c.MEMBER = x;                                                                                            \
          },                                                                                                           \
          [](const ExperimentConfig& c) { return fmt_double(c.MEMBER); }}

#define UINT_FIELD(KEY, MEMBER, LO)                                                                                    \
    Field{KEY,                                                                                                         \
          [](ExperimentConfig& c, const std::string& v) {                                                              \
              const auto x = parse_uint(KEY, v);                                                                       \
              at_least(KEY, static_cast<double>(x), LO);                                                               \
              c.MEMBER = static_cast<decltype(c.MEMBER)>(x);                                                           \
          },                                                                                                           \
          [](const ExperimentConfig& c) { return std::to_string(c.MEMBER); }}

#define BOOL_FIELD(KEY, MEMBER)                                                                                        \
    Field{KEY, [](ExperimentConfig& c, const std::string& v) { c.MEMBER = parse_bool(KEY, v); },                       \
          [](const ExperimentConfig& c) { return std::string(c.MEMBER ? "true" : "false"); }}

const double kInf = std::numeric_limits<double>::infinity();

const std::vector<Field>& fields()
{
    static const std::vector<Field> table = {
        Field{"mode", [](ExperimentConfig& c, const std::string& v) { c.mode = named("mode", [&] { return parse_mode(v); }); },
              [](const ExperimentConfig& c) { return std::string(to_string(c.mode)); }},
        UINT_FIELD("seed", train.seed, 0),
        UINT_FIELD("epochs", train.epochs, 1),
        UINT_FIELD("batch_size", train.batch_size, 1),
        Field{"output_dir", [](ExperimentConfig& c, const std::string& v) { c.output_dir = v; },
              [](const ExperimentConfig& c) { return c.output_dir.string(); }},
        Field{"init_checkpoint", [](ExperimentConfig& c, const std::string& v) { c.init_checkpoint = v; },
              [](const ExperimentConfig& c) { return c.init_checkpoint.string(); }},
        BOOL_FIELD("dump_masks", dump_masks),

        Field{"data.source",
              [](ExperimentConfig& c, const std::string& v) {
                  if (v != "csv") {
                      (void)named("data.source", [&] { return parse_synthetic_kind(v); });
                  }
                  c.data.source = v;
              },
              [](const ExperimentConfig& c) { return c.data.source; }},
        UINT_FIELD("data.n", data.n, 2),
        NUM_FIELD("data.noise", data.noise, 0.0, kInf),
        Field{"data.path", [](ExperimentConfig& c, const std::string& v) { c.data.path = v; },
              [](const ExperimentConfig& c) { return c.data.path.string(); }},
        Field{"data.label_column", [](ExperimentConfig& c, const std::string& v) { c.data.label_column = v; },
              [](const ExperimentConfig& c) { return c.data.label_column; }},
        NUM_FIELD("data.test_fraction", data.test_fraction, 0.0, 1.0),

        UINT_FIELD("model.blocks", blocks, 1),
        Field{"model.widths",
              [](ExperimentConfig& c, const std::string& v) {
                  auto w = parse_list("model.widths", v);
                  if (std::find(w.begin(), w.end(), std::size_t{0}) != w.end()) {
                      throw ConfigError("model.widths", "widths must be positive");
                  }
                  c.widths = std::move(w);
              },
              [](const ExperimentConfig& c) { return join(c.widths); }},

        NUM_FIELD("optim.lr", train.learning_rate, 0.0, kInf),
        NUM_FIELD("optim.momentum", train.momentum, 0.0, 0.999999),
        NUM_FIELD("optim.weight_decay", train.weight_decay, 0.0, kInf),

        NUM_FIELD("attack.epsilon", train.attack.epsilon, 0.0, 1.0),
        UINT_FIELD("attack.steps", train.attack.steps, 1),
        NUM_FIELD("attack.step_size", train.attack.step_size, 0.0, 1.0),
        BOOL_FIELD("attack.random_init", train.attack.random_init),
        Field{"attack.objective",
              [](ExperimentConfig& c, const std::string& v) {
                  c.train.attack.objective = named("attack.objective", [&] { return parse_attack_objective(v); });
              },
              [](const ExperimentConfig& c) { return std::string(to_string(c.train.attack.objective)); }},
        NUM_FIELD("attack.objective_alpha", train.attack.objective_alpha, 0.0, kInf),

        NUM_FIELD("eval.epsilon", train.eval_attack.epsilon, 0.0, 1.0),
        UINT_FIELD("eval.steps", train.eval_attack.steps, 1),
        NUM_FIELD("eval.step_size", train.eval_attack.step_size, 0.0, 1.0),
        BOOL_FIELD("eval.random_init", train.eval_attack.random_init),

        NUM_FIELD("cure.alpha", train.cure.alpha, 0.0, 1.0),
        NUM_FIELD("cure.p", train.cure.p, 0.0, 100.0),
        NUM_FIELD("cure.gamma", train.cure.gamma, 0.0, kInf),
        NUM_FIELD("cure.rate", train.cure.rate, 0.0, 1.0),
        NUM_FIELD("cure.decay", train.cure.decay, 0.0, 1.0),
        Field{"cure.rate_schedule",
              [](ExperimentConfig& c, const std::string& v) {
                  c.train.cure.schedule = named("cure.rate_schedule", [&] { return parse_rate_schedule(v); });
              },
              [](const ExperimentConfig& c) { return std::string(to_string(c.train.cure.schedule)); }},
        UINT_FIELD("cure.warmup_epochs", train.cure.warmup_epochs, 0),
        Field{"cure.mask_frequency",
              [](ExperimentConfig& c, const std::string& v) {
                  if (v == "batch") {
                      c.train.cure.mask_frequency = MaskFrequency::PerBatch;
                  } else if (v == "epoch") {
                      c.train.cure.mask_frequency = MaskFrequency::PerEpoch;
                  } else {
                      throw ConfigError("cure.mask_frequency", "expected batch or epoch, got '" + v + "'");
                  }
              },
              [](const ExperimentConfig& c) {
                  return std::string(c.train.cure.mask_frequency == MaskFrequency::PerBatch ? "batch" : "epoch");
              }},
        Field{"cure.attack_objective",
              [](ExperimentConfig& c, const std::string& v) {
                  c.train.cure.attack_objective =
                      named("cure.attack_objective", [&] { return parse_attack_objective(v); });
              },
              [](const ExperimentConfig& c) { return std::string(to_string(c.train.cure.attack_objective)); }},

        NUM_FIELD("trades.beta", train.trades_beta, 0.0, kInf),

        Field{"freeze.blocks",
              [](ExperimentConfig& c, const std::string& v) {
                  const auto list = parse_list("freeze.blocks", v);
                  c.freeze.blocks = std::set<std::size_t>(list.begin(), list.end());
              },
              [](const ExperimentConfig& c) { return join(c.freeze.blocks); }},
        BOOL_FIELD("freeze.reinit", freeze.reinit),
        BOOL_FIELD("freeze.train_classifier", freeze.train_classifier),
    };
    return table;
}

#undef NUM_FIELD
#undef UINT_FIELD
#undef BOOL_FIELD

const Field& field(const std::string& key)
{
    for (const auto& f : fields()) {
        if (f.key == key) {
            return f;
        }
    }
    throw ConfigError(key, "unknown key");
}

std::string leaf(const std::string& key)
{
    const auto dot = key.rfind('.');
    return dot == std::string::npos ? key : key.substr(dot + 1);
}

// Cross-field checks and derived values once every source has been applied.
void finish(ExperimentConfig& cfg, const std::set<std::string>& explicit_keys)
{
    auto& t = cfg.train;
    if (!explicit_keys.count("attack.step_size")) {
        t.attack.step_size = t.attack.epsilon / 4.0;
    }
    if (!explicit_keys.count("eval.epsilon")) {
        t.eval_attack.epsilon = t.attack.epsilon;
    }
    if (!explicit_keys.count("eval.step_size")) {
        t.eval_attack.step_size = t.eval_attack.epsilon / 4.0;
    }
    t.eval_attack.objective = AttackObjective::CrossEntropy;
    for (const auto& [prefix, a] : {std::pair<std::string, const AttackConfig*>{"attack", &t.attack},
                                    std::pair<std::string, const AttackConfig*>{"eval", &t.eval_attack}}) {
        if (a->epsilon > 0.0 && !(a->step_size > 0.0 && a->step_size <= 2.0 * a->epsilon)) {
            throw ConfigError(prefix + ".step_size", "must lie in (0, 2 * epsilon]");
        }
    }
    if (cfg.data.source == "csv" && cfg.data.path.empty()) {
        throw ConfigError("data.path", "required when data.source = csv");
    }
    for (const auto b : cfg.freeze.blocks) {
        if (b < 1 || b > cfg.blocks) {
            throw ConfigError("freeze.blocks", "block " + std::to_string(b) + " outside 1.." + std::to_string(cfg.blocks));
        }
    }
    if (cfg.freeze.blocks.empty()) {
        throw ConfigError("freeze.blocks", "must not be empty");
    }
    if (cfg.mode == Mode::CureEff && t.cure.warmup_epochs > t.epochs) {
        throw ConfigError("cure.warmup_epochs", "exceeds epochs");
    }
    t.validate();
}

void apply(ExperimentConfig& cfg, const std::string& key, const std::string& value, std::set<std::string>& seen)
{
    field(key).set(cfg, value);
    seen.insert(key);
}

} // namespace

Mode parse_mode(std::string_view name)
{
    if (name == "st") return Mode::St;
    if (name == "at") return Mode::At;
    if (name == "trades") return Mode::Trades;
    if (name == "cure") return Mode::Cure;
    if (name == "cure-eff") return Mode::CureEff;
    if (name == "freeze") return Mode::Freeze;
    throw InvalidArgument("unknown mode '" + std::string(name) + "'");
}

std::string_view to_string(Mode mode)
{
    switch (mode) {
    case Mode::St: return "st";
    case Mode::At: return "at";
    case Mode::Trades: return "trades";
    case Mode::Cure: return "cure";
    case Mode::CureEff: return "cure-eff";
    case Mode::Freeze: return "freeze";
    }
    return "st";
}

ExperimentConfig default_config()
{
    ExperimentConfig cfg;
    finish(cfg, {});
    return cfg;
}

std::vector<std::string> config_keys()
{
    std::vector<std::string> keys;
    for (const auto& f : fields()) {
        keys.push_back(f.key);
    }
    return keys;
}

std::string resolve_key(std::string_view name)
{
    const std::string n(name);
    std::vector<std::string> hits;
    for (const auto& f : fields()) {
        if (f.key == n) {
            return f.key;
        }
        if (leaf(f.key) == n) {
            hits.push_back(f.key);
        }
    }
    if (hits.size() == 1) {
        return hits.front();
    }
    if (hits.empty()) {
        throw ConfigError(n, "unknown key");
    }
    std::string all;
    for (const auto& h : hits) {
        all += (all.empty() ? "" : ", ") + h;
    }
    throw ConfigError(n, "ambiguous key, matches " + all);
}

ExperimentConfig parse_config_text(std::string_view text, const Overrides& overrides)
{
    ExperimentConfig cfg;
    std::set<std::string> seen;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    std::set<std::string> in_file;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        const std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
        if (body.empty()) {
            continue;
        }
        const auto eq = body.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(body, "line " + std::to_string(lineno) + " is not of the form key = value");
        }
        const std::string key = trim(body.substr(0, eq));
        if (!in_file.insert(key).second) {
            throw ConfigError(key, "set twice (line " + std::to_string(lineno) + ")");
        }
        apply(cfg, key, trim(body.substr(eq + 1)), seen);
    }
    if (const char* env = std::getenv("CURE_FORGE_SEED"); env != nullptr && *env != '\0') {
        apply(cfg, "seed", trim(env), seen);
    }
    for (const auto& [name, value] : overrides) {
        apply(cfg, resolve_key(name), trim(value), seen);
    }
    finish(cfg, seen);
    return cfg;
}

ExperimentConfig parse_config(const std::optional<std::filesystem::path>& file, const Overrides& overrides)
{
    std::string text;
    if (file) {
        std::ifstream in(*file);
        if (!in) {
            throw IoError("cannot read config file " + file->string());
        }
        std::ostringstream ss;
        ss << in.rdbuf();
        text = ss.str();
    }
    return parse_config_text(text, overrides);
}

std::string render_config(const ExperimentConfig& cfg)
{
    std::string out;
    for (const auto& f : fields()) {
        out += f.key + " = " + f.get(cfg) + "\n";
    }
    return out;
}

ArchSpec make_arch(const ExperimentConfig& cfg, std::size_t input_dim, std::size_t num_classes)
{
    return ArchSpec::uniform(input_dim, cfg.blocks, cfg.widths, num_classes);
}

Split load_split(const ExperimentConfig& cfg)
{
    Dataset ds = cfg.data.source == "csv"
                     ? load_csv(cfg.data.path, cfg.data.label_column)
                     : gen_synthetic(parse_synthetic_kind(cfg.data.source), cfg.data.n, cfg.data.noise, cfg.train.seed);
    return split_dataset(ds, cfg.data.test_fraction, cfg.train.seed);
}

} // namespace cure
