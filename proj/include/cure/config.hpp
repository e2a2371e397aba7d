#ifndef CURE_CONFIG_HPP
#define CURE_CONFIG_HPP

#include <cstddef>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cure/data.hpp"
#include "cure/model.hpp"
#include "cure/training.hpp"

namespace cure {

enum class Mode { St, At, Trades, Cure, CureEff, Freeze };

[[nodiscard]] Mode parse_mode(std::string_view name);
[[nodiscard]] std::string_view to_string(Mode mode);

struct DataSpec {
    /// A synthetic kind (two_moons, spirals, gaussians, circles) or "csv".
    std::string source{"two_moons"};
    std::size_t n{2000};
    double noise{0.15};
    std::filesystem::path path;
    std::string label_column{"label"};
    double test_fraction{0.25};
};

struct FreezeSpec {
    std::set<std::size_t> blocks{2, 3};
    bool reinit{true};
    bool train_classifier{true};
};

struct ExperimentConfig {
    Mode mode{Mode::St};
    DataSpec data;
    std::size_t blocks{4};
    std::vector<std::size_t> widths{32, 32};
    /// Desk-scale protocol: eps 0.08, PGD-10 training, PGD-20 evaluation.
    TrainConfig train{default_train_config(0.08)};
    FreezeSpec freeze;
    /// Pretrained checkpoint; required by cure and freeze.
    std::filesystem::path init_checkpoint;
    bool dump_masks{false};
    std::filesystem::path output_dir{"runs/default"};
};

using Overrides = std::vector<std::pair<std::string, std::string>>;

/// Defaults with step sizes resolved to epsilon / 4.
[[nodiscard]] ExperimentConfig default_config();

/// Flat `key = value` text; `#` starts a comment. Precedence, lowest first:
/// defaults, file, CURE_FORGE_SEED, overrides. Override keys may be the full
/// dotted key or an unambiguous last component (`p` for `cure.p`).
[[nodiscard]] ExperimentConfig parse_config(const std::optional<std::filesystem::path>& file,
                                            const Overrides& overrides);

/// Same as above with the config text supplied directly.
[[nodiscard]] ExperimentConfig parse_config_text(std::string_view text, const Overrides& overrides);

/// Every key, in the order render_config emits them.
[[nodiscard]] std::vector<std::string> config_keys();

/// Expands a flag name to its full dotted key; throws ConfigError when the
/// name is unknown or ambiguous.
[[nodiscard]] std::string resolve_key(std::string_view name);

/// Fully resolved config in the file format, one key per line.
[[nodiscard]] std::string render_config(const ExperimentConfig& cfg);

[[nodiscard]] ArchSpec make_arch(const ExperimentConfig& cfg, std::size_t input_dim, std::size_t num_classes);

/// Generates or loads the dataset and splits it with the config seed.
[[nodiscard]] Split load_split(const ExperimentConfig& cfg);

} // namespace cure

#endif // CURE_CONFIG_HPP
