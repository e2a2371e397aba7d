#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "cure/config.hpp"
#include "cure/error.hpp"

using namespace cure;

namespace {

std::string error_key(const std::string& text, const Overrides& ov = {})
{
    try {
        (void)parse_config_text(text, ov);
    } catch (const ConfigError& e) {
        return e.key();
    }
    return "<no error>";
}

struct SeedEnv {
    explicit SeedEnv(const char* v) { ::setenv("CURE_FORGE_SEED", v, 1); }
    ~SeedEnv() { ::unsetenv("CURE_FORGE_SEED"); }
};

} // namespace

TEST(Config, EmptyTextGivesDefaults)
{
    ::unsetenv("CURE_FORGE_SEED");
    const auto c = parse_config_text("", {});
    const auto d = default_config();
    EXPECT_EQ(render_config(c), render_config(d));
    EXPECT_EQ(c.mode, Mode::St);
    EXPECT_EQ(c.train.cure.p, 30.0);
    EXPECT_EQ(c.train.cure.alpha, 0.1);
    EXPECT_EQ(c.train.cure.gamma, 1.0);
    EXPECT_EQ(c.train.cure.rate, 0.2);
    EXPECT_EQ(c.train.cure.decay, 0.999);
    EXPECT_DOUBLE_EQ(c.train.attack.step_size, c.train.attack.epsilon / 4.0);
    EXPECT_EQ(c.train.eval_attack.epsilon, c.train.attack.epsilon);
}

TEST(Config, FileValuesAndComments)
{
    const auto c = parse_config_text("mode = cure   # fine-tune\n\n# comment\ncure.p = 50\nattack.epsilon=0.1\n", {});
    EXPECT_EQ(c.mode, Mode::Cure);
    EXPECT_EQ(c.train.cure.p, 50.0);
    EXPECT_DOUBLE_EQ(c.train.attack.step_size, 0.025);
    EXPECT_DOUBLE_EQ(c.train.eval_attack.epsilon, 0.1);
}

TEST(Config, OverridesBeatFile)
{
    const auto c = parse_config_text("cure.p = 30\n", {{"p", "50"}});
    EXPECT_EQ(c.train.cure.p, 50.0);
    const auto d = parse_config_text("", {{"cure.gamma", "0"}, {"freeze.blocks", "1,4"}, {"widths", "16,8"}});
    EXPECT_EQ(d.train.cure.gamma, 0.0);
    EXPECT_EQ(d.freeze.blocks, (std::set<std::size_t>{1, 4}));
    EXPECT_EQ(d.widths, (std::vector<std::size_t>{16, 8}));
}

TEST(Config, OutOfRangeNamesTheKey)
{
    EXPECT_EQ(error_key("", {{"p", "130"}}), "cure.p");
    try {
        (void)parse_config_text("cure.p = 130\n", {});
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("130"), std::string::npos);
    }
    EXPECT_EQ(error_key("cure.decay = 1.5\n"), "cure.decay");
    EXPECT_EQ(error_key("optim.momentum = 1\n"), "optim.momentum");
}

TEST(Config, UnknownAndAmbiguousKeys)
{
    EXPECT_EQ(error_key("cure.q = 1\n"), "cure.q");
    EXPECT_EQ(error_key("", {{"nonsense", "1"}}), "nonsense");
    EXPECT_EQ(error_key("", {{"epsilon", "0.1"}}), "epsilon");
    EXPECT_EQ(resolve_key("gamma"), "cure.gamma");
    EXPECT_EQ(resolve_key("attack.steps"), "attack.steps");
    EXPECT_THROW((void)resolve_key("steps"), ConfigError);
}

TEST(Config, TypeMismatches)
{
    EXPECT_EQ(error_key("epochs = ten\n"), "epochs");
    EXPECT_EQ(error_key("epochs = -3\n"), "epochs");
    EXPECT_EQ(error_key("attack.random_init = maybe\n"), "attack.random_init");
    EXPECT_EQ(error_key("mode = turbo\n"), "mode");
    EXPECT_EQ(error_key("cure.rate_schedule = cosine\n"), "cure.rate_schedule");
    EXPECT_EQ(error_key("cure.mask_frequency = hourly\n"), "cure.mask_frequency");
}

TEST(Config, StructuralErrors)
{
    EXPECT_EQ(error_key("cure.p = 1\ncure.p = 2\n"), "cure.p");
    EXPECT_EQ(error_key("just a line\n"), "just a line");
    EXPECT_EQ(error_key("data.source = csv\n"), "data.path");
    EXPECT_EQ(error_key("freeze.blocks = 5\n"), "freeze.blocks");
    EXPECT_EQ(error_key("attack.step_size = 1\n"), "attack.step_size");
    EXPECT_EQ(error_key("mode = cure-eff\nepochs = 5\ncure.warmup_epochs = 6\n"), "cure.warmup_epochs");
}

TEST(Config, EnvironmentSeedSitsBetweenFileAndFlags)
{
    SeedEnv env("77");
    EXPECT_EQ(parse_config_text("seed = 3\n", {}).train.seed, 77u);
    EXPECT_EQ(parse_config_text("seed = 3\n", {{"seed", "9"}}).train.seed, 9u);
}

TEST(Config, BadEnvironmentSeedRejected)
{
    SeedEnv env("abc");
    EXPECT_THROW((void)parse_config_text("", {}), ConfigError);
}

TEST(Config, RenderRoundTrips)
{
    ::unsetenv("CURE_FORGE_SEED");
    const auto c = parse_config_text("mode = freeze\nfreeze.blocks = 1,3\nattack.epsilon = 0.05\noptim.lr = 0.015\n", {});
    const auto text = render_config(c);
    EXPECT_EQ(render_config(parse_config_text(text, {})), text);
    for (const auto& key : config_keys()) EXPECT_NE(text.find(key + " = "), std::string::npos) << key;
}

TEST(Config, FileLoadingAndMissingFile)
{
    const auto path = std::filesystem::temp_directory_path() / "cure_config_test.cfg";
    std::ofstream(path) << "epochs = 7\n";
    EXPECT_EQ(parse_config(path, {}).train.epochs, 7u);
    EXPECT_THROW((void)parse_config(path.string() + ".missing", {}), Error);
    EXPECT_EQ(parse_config(std::nullopt, {}).train.epochs, default_config().train.epochs);
}

TEST(Config, ArchitectureFromConfig)
{
    const auto c = parse_config_text("model.blocks = 3\nmodel.widths = 16,16\n", {});
    const auto a = make_arch(c, 2, 2);
    EXPECT_EQ(a.num_blocks(), 3u);
    EXPECT_EQ(a.blocks[0], (std::vector<std::size_t>{16, 16}));
}
