#include <gtest/gtest.h>

#include "histofuse/config.hpp"

using namespace histofuse;

TEST(Config, DefaultsAreValid) {
    const PipelineConfig c;
    EXPECT_NO_THROW(c.validate());
    EXPECT_EQ(c.seed, 7u);
    EXPECT_EQ(c.patch_size, 224);
    EXPECT_EQ(c.patch_stride, 112);
    EXPECT_EQ(c.train.hidden1, 500);
    EXPECT_EQ(c.train.hidden2, 300);
    EXPECT_EQ(c.magnifications(), (std::vector<int>{40, 100, 200, 400}));
}

TEST(Config, ParsesSectionsAndComments) {
    const auto c = parse_config(
        "# comment\n"
        "[run]\n"
        "seed = 42   # trailing\n"
        "\n"
        "[dataset]\n"
        "magnification = 200\n"
        "[ssae]\n"
        "lr = 0.01\n"
        "[fusion]\n"
        "standardize = false\n"
        "[synth]\n"
        "magnifications = 40,100\n");
    EXPECT_EQ(c.seed, 42u);
    EXPECT_EQ(c.magnifications(), std::vector<int>{200});
    EXPECT_EQ(c.train.lr, 0.01);
    EXPECT_FALSE(c.dca_standardize);
    EXPECT_EQ(c.synth.magnifications, (std::vector<int>{40, 100}));
}

TEST(Config, UnknownKeyNamesFileAndLine) {
    try {
        parse_config("[run]\nseed = 1\n[ssae]\nlearning_rate = 0.1\n", "my.cfg");
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("my.cfg:4"), std::string::npos) << msg;
        EXPECT_NE(msg.find("ssae.learning_rate"), std::string::npos) << msg;
    }
}

TEST(Config, RejectsMalformedInput) {
    EXPECT_THROW(parse_config("seed = 1\n"), ConfigError);
    EXPECT_THROW(parse_config("[run\n"), ConfigError);
    EXPECT_THROW(parse_config("[run]\nseed\n"), ConfigError);
    EXPECT_THROW(parse_config("[run]\nseed = abc\n"), ConfigError);
    EXPECT_THROW(parse_config("[patch]\nsize = 64\nstride = 128\n"), ConfigError);
    EXPECT_THROW(parse_config("[dataset]\nmagnification = 50\n"), ConfigError);
    EXPECT_THROW(parse_config("[dataset]\ntrain_ratio = 0.5\n"), ConfigError);
    EXPECT_THROW(load_config("/nonexistent/x.cfg"), ConfigError);
}

TEST(Config, HashIgnoresOutputAndThreads) {
    PipelineConfig a;
    PipelineConfig b = a;
    b.out = "/tmp/elsewhere";
    b.threads = 8;
    EXPECT_EQ(config_hash(a), config_hash(b));
    b.seed = 8;
    EXPECT_NE(config_hash(a), config_hash(b));
    PipelineConfig c;
    c.train.lr = 2e-3;
    EXPECT_NE(config_hash(a), config_hash(c));
    EXPECT_EQ(config_hash(a).size(), 16u);
}

TEST(Config, RenderParsesBack) {
    PipelineConfig c;
    c.seed = 99;
    c.magnification = "100";
    c.synth.magnifications = {40, 400};
    c.dca_standardize = false;
    const auto back = parse_config(render_config(c));
    EXPECT_EQ(config_json(back), config_json(c));
}

TEST(Config, ShippedSyntheticConfigLoads) {
    const auto c = load_config(std::filesystem::path(HISTOFUSE_SOURCE_DIR) / "configs" / "synthetic.cfg");
    EXPECT_EQ(c.patch_size, 64);
    EXPECT_EQ(c.synth.images_per_class, 100);
}
