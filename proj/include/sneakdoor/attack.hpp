#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <json.hpp>

#include "sneakdoor/condense.hpp"
#include "sneakdoor/datasets.hpp"
#include "sneakdoor/nn.hpp"

namespace sneakdoor::attack {

struct ConfusionMatrix {
  int num_classes = 0;
  std::vector<std::int64_t> counts;  // row-major, counts[i * k + j]: label i predicted j
  std::vector<double> rows;          // counts normalized per row; all-zero for empty rows
  std::vector<bool> empty_rows;

  double at(int i, int j) const { return rows[static_cast<std::size_t>(i * num_classes + j)]; }
  std::int64_t count(int i, int j) const {
    return counts[static_cast<std::size_t>(i * num_classes + j)];
  }
};

ConfusionMatrix confusion_from_counts(int num_classes, std::vector<std::int64_t> counts);
ConfusionMatrix confusion_from_predictions(int num_classes, std::span<const std::int32_t> labels,
                                           std::span<const std::int32_t> predictions);
ConfusionMatrix confusion(const nn::ModelBundle& model, const LabeledDataset& ds);

nlohmann::json to_json(const ConfusionMatrix& cm);
ConfusionMatrix confusion_from_json(const nlohmann::json& j);

struct ClassPair {
  int source = 0;
  int target = 1;
  double rate = 0.0;

  bool operator==(const ClassPair&) const = default;
};

nlohmann::json to_json(const ClassPair& pair);
ClassPair pair_from_json(const nlohmann::json& j);

// Fraction of predictions equal to j.
double misclassification_rate_from_predictions(std::span<const std::int32_t> predictions, int j);
// O_{i->j} over min(sample_n, |T_i|) class-i samples drawn without replacement.
double misclassification_rate(const nn::ModelBundle& model, const LabeledDataset& ds, int i, int j,
                              std::size_t sample_n, std::uint64_t seed);

// Off-diagonal argmax, lexicographically smallest (i, j) on ties.
ClassPair select_pair(const ConfusionMatrix& cm);

struct AttackConfig {
  double alpha = 0.25;
  double epsilon = 0.5;
  double rho = 0.5;
  double generator_lr = 5e-5;
  int generator_steps = 500;
  std::size_t generator_batch = 64;
  // Stop once this fraction of a source batch is sent to the target
  // (evaluated every 10 steps); values >= 1 never stop early.
  double stop_fooling_rate = 1.0;
  nn::GeneratorSpec generator{};
  bool co_train_surrogate = false;
  std::optional<ClassPair> pair_override;
  nn::Architecture surrogate_arch{};
  nn::TrainConfig surrogate_train{};
  std::uint64_t seed = 0;
};

void validate(const AttackConfig& cfg);
// {"epochs","batch_size","lr","momentum","weight_decay"}; the seed is not serialized.
nlohmann::json train_config_to_json(const nn::TrainConfig& t);
nn::TrainConfig train_config_from_json(const nlohmann::json& j, nn::TrainConfig defaults = {});
nlohmann::json to_json(const AttackConfig& cfg);
AttackConfig attack_config_from_json(const nlohmann::json& j, AttackConfig defaults = {});

// clip(x + alpha * clamp(raw, -eps, eps), 0, 1), elementwise.
Tensor apply_trigger_from_raw(const Tensor& x, const Tensor& raw, double alpha, double epsilon);
Tensor apply_trigger(const Tensor& x, const nn::GeneratorNet& gen, double alpha, double epsilon);

struct GeneratorLog {
  double initial_holdout_loss = 0.0;
  double final_holdout_loss = 0.0;
  double final_fooling_rate = 0.0;
  int steps_run = 0;
  std::vector<double> losses;  // minibatch loss per step
};

struct GeneratorResult {
  nn::GeneratorNet generator;
  nn::ModelBundle surrogate;  // unchanged unless co_train_surrogate
  GeneratorLog log;
};

// Adam on cross-entropy toward `target` of the frozen model evaluated on
// triggered source images, differentiating through both clamps. 20% of the
// source samples (at least one, when there are two or more) are held out for
// the logged before/after loss. With co_train_surrogate the surrogate also
// takes an SGD step per iteration on `clean` plus the triggered batch.
GeneratorResult train_generator(const nn::GeneratorNet& gen, const nn::ModelBundle& model,
                                const LabeledDataset& source, int target, const AttackConfig& cfg,
                                const LabeledDataset* clean = nullptr);

// Every source image triggered, all labelled `target`.
LabeledDataset build_triggered(const LabeledDataset& source, const nn::GeneratorNet& gen,
                               double alpha, double epsilon, int target);

// floor(rho * N) with a 1e-9 guard against representation error in rho * N.
std::size_t poison_count(double rho, std::size_t clean_count);

// Clean target samples followed by floor(rho * N) triggered samples drawn
// without replacement.
LabeledDataset build_mixed(const LabeledDataset& target_slice, const LabeledDataset& triggered,
                           double rho, std::uint64_t seed);

enum class Corner { top_left, top_right, bottom_left, bottom_right };

// Overwrites a patch_size x patch_size square at `corner` in every channel.
Tensor naive_patch_trigger(const Tensor& x, double patch_value, std::size_t patch_size,
                           Corner corner = Corner::bottom_right);

struct SneakdoorResult {
  condense::SyntheticSet s_clean;
  condense::SyntheticSet s_poison;
  Tensor init_images;
  nn::ModelBundle surrogate;
  ConfusionMatrix confusion;
  ClassPair pair;
  nn::GeneratorNet generator;
  GeneratorLog generator_log;
  std::size_t num_poison = 0;
  std::vector<condense::TracePoint> clean_trace;
  std::vector<condense::TracePoint> poison_trace;
  std::vector<double> surrogate_losses;
};

// Stage seeds derived from the attack seed.
std::uint64_t stage_seed(std::uint64_t seed, std::string_view stage);

// condense -> surrogate on S_clean -> confusion on ds -> select_pair ->
// train_generator -> build_triggered -> build_mixed -> recondense_class;
// S_poison is S_clean with only the target slice replaced.
SneakdoorResult run_sneakdoor(const LabeledDataset& ds, const condense::CondenseConfig& ccfg,
                              const AttackConfig& acfg);

// Recondenses the target slice of an existing clean run for another rho,
// reusing the same generator and initializer.
condense::SyntheticSet poison_with_rho(const LabeledDataset& ds,
                                       const condense::SyntheticSet& s_clean,
                                       const Tensor& init_images,
                                       const condense::CondenseConfig& ccfg,
                                       const nn::GeneratorNet& gen, const ClassPair& pair,
                                       const AttackConfig& acfg, double rho);

}  // namespace sneakdoor::attack
