#include <gtest/gtest.h>

#include <filesystem>

#include "al/config.hpp"
#include "al/error.hpp"

using namespace al;

namespace {

std::string error_of(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, ParsesSectionsAndComments) {
  auto cfg = parse_config(
      "# header\n"
      "experiment.id = abc   # trailing\n"
      "experiment.seed = 42\n"
      "\n"
      "lth.enabled = true\n"
      "lth.iterations = 3\n"
      "lth.rate = 0.8\n"
      "lth.strategy = global_small_weights\n"
      "train.epochs = 4\n"
      "fusion.mode = two_stage\n"
      "dataset.noise = 1.25\n");
  EXPECT_EQ(cfg.id, "abc");
  EXPECT_EQ(cfg.seed, 42u);
  EXPECT_TRUE(cfg.lth);
  EXPECT_EQ(cfg.lth_cfg.iterations, 3u);
  EXPECT_DOUBLE_EQ(cfg.lth_cfg.rate, 0.8);
  EXPECT_EQ(cfg.lth_cfg.strategy, MaskStrategy::global_small_weights);
  EXPECT_EQ(cfg.train.epochs, 4u);
  EXPECT_EQ(cfg.fusion, FusionMode::two_stage);
  EXPECT_DOUBLE_EQ(cfg.synth.noise, 1.25);
}

TEST(Config, Errors) {
  EXPECT_NE(error_of("experiment.seed = 1\nlth.rat = 0.5\n").find("line 2"), std::string::npos);
  EXPECT_NE(error_of("experiment.seed = 1\nlth.rat = 0.5\n").find("lth.rat"), std::string::npos);
  EXPECT_NE(error_of("experiment.seed = 1\nexperiment.seed = 2\n").find("already set on line 1"), std::string::npos);
  EXPECT_NE(error_of("train.epochs = 3\n").find("experiment.seed is required"), std::string::npos);
  EXPECT_NE(error_of("experiment.seed = 1\ntrain.epochs = three\n").find("train.epochs"), std::string::npos);
  EXPECT_NE(error_of("experiment.seed = 1\nnot a line\n").find("line 2"), std::string::npos);
  EXPECT_NE(error_of("experiment.seed = 1\nseed = 4\n").find("no section"), std::string::npos);
  EXPECT_NE(error_of("experiment.seed = 1\narch.student = tiny\n").find("arch.student"), std::string::npos);
  EXPECT_NE(error_of("experiment.seed = 1\nlth.strategy = random\n").find("lth.strategy"), std::string::npos);
  EXPECT_NE(error_of("experiment.seed = 1\naugment.spec_augment = true\naugment.max_time_width = 32\n")
                .find("augment.max_time_width"),
            std::string::npos);
  EXPECT_NE(error_of("experiment.seed = 1\ndataset.unseen = 6\n").find("dataset"), std::string::npos);
  EXPECT_NE(error_of("experiment.seed = 1\naugment.pitch_shift = true\n").find("waveform"), std::string::npos);
  EXPECT_NE(error_of("experiment.seed = 1\ndistill.enabled = true\ndistill.beta = 2\n").find("distill"),
            std::string::npos);
}

TEST(Config, SeedOverrideAndHash) {
  const std::string text = "experiment.seed = 5\ntrain.epochs = 2\n";
  auto a = parse_config(text), b = parse_config(text);
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_EQ(a.canonical(), b.canonical());
  auto c = parse_config(text, 6);
  EXPECT_EQ(c.seed, 6u);
  EXPECT_NE(c.hash(), a.hash());
  EXPECT_EQ(parse_config("train.epochs = 2\n", 5).hash(), a.hash());
  // key order and formatting do not matter
  EXPECT_EQ(parse_config("train.epochs=2\n   experiment.seed   =   5").hash(), a.hash());
  // the output directory is not part of the fingerprint
  EXPECT_EQ(parse_config(text + "experiment.out_dir = elsewhere\n").hash(), a.hash());
}

TEST(Config, NamedSeedStreams) {
  auto a = parse_config("experiment.seed = 5\n");
  std::set<std::uint64_t> streams{a.dataset_seed(), a.init_seed(), a.augment_seed(), a.batch_seed()};
  EXPECT_EQ(streams.size(), 4u);
  auto b = parse_config("experiment.seed = 5\nseed.init = 99\n");
  EXPECT_EQ(b.init_seed(), 99u);
  EXPECT_EQ(b.dataset_seed(), a.dataset_seed());
  EXPECT_EQ(b.augment.seed, a.augment.seed);
  EXPECT_NE(b.hash(), a.hash());
}

TEST(Config, CanonicalRoundTrip) {
  auto a = parse_config(
      "experiment.seed = 11\nlth.enabled = true\nlth.rate = 0.3\ndistill.enabled = true\ndistill.tau = 3.5\n"
      "augment.mixup = true\nquantize.enabled = true\nfusion.mode = mtl\n");
  std::string text;
  std::istringstream in(a.canonical());
  std::string line;
  while (std::getline(in, line)) {
    if (line.find("= derived") == std::string::npos) text += line + "\n";
  }
  auto b = parse_config(text);
  EXPECT_EQ(b.canonical(), a.canonical());
  const std::string canon = a.canonical();
  // every key but experiment.out_dir is listed
  EXPECT_EQ(config_keys().size(), static_cast<std::size_t>(std::count(canon.begin(), canon.end(), '\n')) + 1);
}

TEST(Config, ShippedExamplesParse) {
  for (const auto& e : std::filesystem::directory_iterator(AL_CONFIG_DIR)) {
    if (e.path().extension() != ".cfg") continue;
    EXPECT_NO_THROW(load_config(e.path().string())) << e.path();
  }
}
