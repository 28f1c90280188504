#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "sneakdoor/attack.hpp"
#include "sneakdoor/condense.hpp"
#include "sneakdoor/datasets.hpp"
#include "sneakdoor/metrics.hpp"

namespace sneakdoor::cli {

// Usage or configuration problem; maps to exit code 2. The message carries
// "path:line:" when the problem can be located in a config file.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Profile { desk, paper };
Profile profile_from_name(const std::string& name);
std::string profile_name(Profile p);

struct DatasetSpec {
  std::string kind = "blobs";  // "blobs" or "manifest"
  std::string name = "blobs4";
  BlobSpec blobs{};
  std::filesystem::path manifest;
  double train_fraction = 0.8;
  std::uint64_t split_seed = 0;
};

struct EvalConfig {
  nn::Architecture arch{};
  nn::TrainConfig train{};
  metrics::IsDaggerMode is_dagger_mode = metrics::IsDaggerMode::times_1e_4;
  std::size_t naive_patch_size = 3;
  double naive_patch_value = 1.0;
  std::size_t ssim_window = 8;
  std::string method = "sneakdoor";
};

struct BoundsConfig {
  std::vector<double> rho_sweep{0.0, 0.1, 0.25, 0.5};
  int encoder_seeds = 4;
  double lambda = 1e-3;
  std::size_t lipschitz_pairs = 2000;
  std::uint64_t seed = 0;
};

struct RunConfig {
  Profile profile = Profile::desk;
  std::uint64_t seed = 0;
  DatasetSpec dataset;
  condense::CondenseConfig condense;
  attack::AttackConfig attack;
  EvalConfig eval;
  BoundsConfig bounds;
};

// Defaults of a profile with stage seeds derived from `seed`.
RunConfig default_config(Profile profile, std::uint64_t seed = 0);

// Parses a JSON config on top of the profile defaults. The profile is the
// explicit one if given, else the config's "profile" key, else desk; an
// explicit profile that contradicts the key is an error. Stage seeds are
// always derived from the top-level seed (or the override). Throws
// ConfigError with "origin:line: message".
RunConfig parse_config(std::string_view text, std::string_view origin,
                       std::optional<Profile> profile = std::nullopt,
                       std::optional<std::uint64_t> seed_override = std::nullopt);
RunConfig load_config(const std::filesystem::path& path, std::optional<Profile> profile = std::nullopt,
                      std::optional<std::uint64_t> seed_override = std::nullopt);

// Recomputes every stage seed from cfg.seed.
void derive_seeds(RunConfig& cfg);

nlohmann::json to_json(const RunConfig& cfg);
nlohmann::json seeds_json(const RunConfig& cfg);
std::string run_id(const RunConfig& cfg);

// Builds (or loads) the dataset and returns the stratified (train, test) split.
std::pair<LabeledDataset, LabeledDataset> load_splits(const RunConfig& cfg);

}  // namespace sneakdoor::cli
