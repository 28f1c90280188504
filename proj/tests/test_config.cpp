#include <gtest/gtest.h>

#include <filesystem>

#include "sneakdoor/config.hpp"
#include "sneakdoor/tensor_io.hpp"

using namespace sneakdoor;
using namespace sneakdoor::cli;
namespace fs = std::filesystem;

namespace {

std::string message_of(const std::string& text) {
  try {
    parse_config(text, "cfg.json");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, DeskDefaults) {
  const auto cfg = parse_config("{}", "<t>");
  EXPECT_EQ(cfg.profile, Profile::desk);
  EXPECT_EQ(cfg.dataset.blobs.num_classes, 4);
  EXPECT_EQ(cfg.dataset.blobs.per_class, 250);
  EXPECT_EQ(cfg.condense.ipc, 10);
  EXPECT_EQ(cfg.attack.alpha, 0.25);
  EXPECT_EQ(cfg.attack.epsilon, 0.5);
  EXPECT_EQ(cfg.attack.rho, 0.5);
  EXPECT_EQ(cfg.eval.train.epochs, 300);
  EXPECT_EQ(cfg.bounds.lambda, 1e-3);
  EXPECT_EQ(cfg.bounds.rho_sweep, (std::vector<double>{0, 0.1, 0.25, 0.5}));
}

TEST(Config, PaperProfile) {
  const auto cfg = parse_config("{\"profile\": \"paper\"}", "<t>");
  EXPECT_EQ(cfg.profile, Profile::paper);
  EXPECT_EQ(cfg.condense.ipc, 50);
  EXPECT_EQ(cfg.condense.iterations, 20000);
  EXPECT_EQ(cfg.condense.synthesis_lr, 1.0);
  EXPECT_EQ(cfg.condense.batch_real, 256u);
  EXPECT_EQ(cfg.attack.generator_lr, 5e-5);
  EXPECT_EQ(cfg.attack.surrogate_train.epochs, 50);
  EXPECT_EQ(cfg.attack.surrogate_train.sgd.lr, 0.01);
  EXPECT_EQ(cfg.attack.surrogate_train.sgd.momentum, 0.9);
  EXPECT_EQ(cfg.attack.surrogate_train.sgd.weight_decay, 5e-4);
  EXPECT_EQ(cfg.eval.train.epochs, 10000);
  EXPECT_EQ(cfg.eval.train.batch_size, 256u);
  EXPECT_THROW(parse_config("{\"profile\": \"paper\"}", "<t>", Profile::desk), ConfigError);
  EXPECT_EQ(parse_config("{}", "<t>", Profile::paper).profile, Profile::paper);
}

TEST(Config, SeedsDeriveFromGlobalSeed) {
  const auto a = parse_config("{\"seed\": 3}", "<t>");
  const auto b = parse_config("{\"seed\": 3}", "<t>");
  const auto c = parse_config("{\"seed\": 3}", "<t>", std::nullopt, 4);
  EXPECT_EQ(to_json(a), to_json(b));
  EXPECT_EQ(run_id(a), run_id(b));
  EXPECT_EQ(c.seed, 4u);
  EXPECT_NE(run_id(a), run_id(c));
  EXPECT_EQ(a.condense.seed, attack::stage_seed(3, "condense"));
  EXPECT_EQ(a.attack.seed, attack::stage_seed(3, "attack"));
  EXPECT_NE(a.condense.seed, a.attack.seed);
  EXPECT_EQ(seeds_json(a).at("global"), 3);
}

TEST(Config, EchoParsesBackToSameConfig) {
  const auto a = parse_config(
      "{\"seed\": 9, \"attack\": {\"rho\": 0.25, \"pair_override\": {\"source\": 1, \"target\": 0}},"
      " \"condense\": {\"augment\": {\"flip\": true}}, \"eval\": {\"method\": \"x\"}}",
      "<t>");
  const auto b = parse_config(to_json(a).dump(), "<echo>");
  EXPECT_EQ(to_json(a), to_json(b));
}

TEST(Config, ErrorsCarryLineNumbers) {
  EXPECT_EQ(message_of("{\n  \"seed\": 1,\n  \"condense\": {\n    \"ipc\": 0\n  }\n}"),
            "cfg.json:4: condense: ipc must be >= 1");
  EXPECT_NE(message_of("{\n  \"attack\": {\n    \"seed\": 4\n  }\n}").find("cfg.json:3:"),
            std::string::npos);
  EXPECT_NE(message_of("{\n  \"bogus\": 1\n}").find("cfg.json:2:"), std::string::npos);
  EXPECT_NE(message_of("{\n  \"seed\": 1,\n  ]").find("cfg.json:3:"), std::string::npos);
  EXPECT_NE(message_of("{\"dataset\": {\"kind\": \"tarball\"}}").find("kind"), std::string::npos);
  EXPECT_NE(message_of("{\"seed\": -1}").find("seed"), std::string::npos);
}

TEST(Config, ArchitectureInputFollowsDataset) {
  const auto cfg = parse_config("{\"dataset\": {\"shape\": [1, 8, 8]}}", "<t>");
  EXPECT_EQ(cfg.condense.encoder.input, (ImageShape{1, 8, 8}));
  EXPECT_EQ(cfg.attack.surrogate_arch.input, (ImageShape{1, 8, 8}));
  EXPECT_EQ(cfg.eval.arch.input, (ImageShape{1, 8, 8}));
  EXPECT_THROW(parse_config("{\"dataset\": {\"shape\": [1, 8, 8]},"
                            " \"condense\": {\"encoder\": {\"input\": [1, 16, 16]}}}",
                            "<t>"),
               ConfigError);
}

TEST(Config, ManifestDatasetRelativeToConfig) {
  const auto dir = fs::temp_directory_path() / "sneakdoor_cfg_manifest";
  fs::remove_all(dir);
  fs::create_directories(dir / "data");
  const auto ds = generate_blobs(2, 5, {1, 8, 8}, 0.2, 1);
  save_dataset(ds, dir / "data" / "toy.json", "toy", 1);
  io::write_text(dir / "cfg.json",
                 "{\"dataset\": {\"kind\": \"manifest\", \"path\": \"data/toy.json\", \"name\": \"toy\"}}");
  const auto cfg = load_config(dir / "cfg.json");
  EXPECT_EQ(cfg.condense.encoder.input, (ImageShape{1, 8, 8}));
  const auto [train, test] = load_splits(cfg);
  EXPECT_EQ(train.size() + test.size(), 10u);
  EXPECT_THROW(load_config(dir / "missing.json"), ConfigError);
}
