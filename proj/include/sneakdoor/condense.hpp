#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "sneakdoor/datasets.hpp"
#include "sneakdoor/nn.hpp"
#include "sneakdoor/tensor.hpp"

namespace sneakdoor::condense {

// Condensed images S: ipc images per class, class-major order
// (class 0 images first), pixels in [0,1].
struct SyntheticSet {
  Tensor images;
  std::vector<std::int32_t> labels;
  int num_classes = 0;
  int ipc = 0;
  std::uint64_t seed = 0;
  std::string config_hash;

  ImageShape image_shape() const;
  // Rows [c * ipc, (c + 1) * ipc).
  Tensor class_images(int c) const;
  void set_class_images(int c, const Tensor& slice);

  bool operator==(const SyntheticSet&) const = default;
};

SyntheticSet make_synthetic(Tensor images, int num_classes, int ipc, std::uint64_t seed,
                            std::string config_hash);

void save_synthetic(const std::filesystem::path& path, const SyntheticSet& set);
SyntheticSet load_synthetic(const std::filesystem::path& path);

struct AugmentSpec {
  bool flip = false;
  int shift = 0;        // max |dx|, |dy| in pixels; 0 disables
  bool scale = false;   // uniform factor in [0.9, 1.1]

  bool enabled() const { return flip || shift > 0 || scale; }
  bool operator==(const AugmentSpec&) const = default;
};

// One draw of the augmentation parameters.
struct Omega {
  bool flip = false;
  int dx = 0;  // content moves right by dx
  int dy = 0;  // content moves down by dy
  double scale = 1.0;
};

Omega draw_omega(const AugmentSpec& spec, std::uint64_t seed, std::uint64_t iteration,
                 std::uint64_t draw);

// Geometric transform shared by every image and channel of the batch:
// out(y, x) samples the input bilinearly at the pre-image of (y, x) under
// flip -> shift -> scale about the centre; samples outside the image are 0.
Tensor apply_augment(const Tensor& batch, const Omega& omega);
// Adjoint of apply_augment (scatters gradients back to source pixels).
Tensor augment_adjoint(const Tensor& grad, const Omega& omega, const Shape& input_shape);

// ||mean(real) - mean(syn)||^2 over rows.
double mean_embedding_mmd(const Tensor& real_feats, const Tensor& syn_feats);

struct RegularizerValue {
  double value = 0.0;
  Tensor gradient;
};
// 1/2 ||S - S_init||^2; strongly convex with mu_R = 1.
RegularizerValue regularizer(const Tensor& syn, const Tensor& syn_init);
inline constexpr double kRegularizerStrongConvexity = 1.0;

struct CondenseConfig {
  int ipc = 10;
  int iterations = 400;
  double synthesis_lr = 0.01;
  std::size_t batch_real = 64;
  int encoder_seeds_per_step = 1;
  double reg_weight = 0.0;  // lambda
  AugmentSpec augment{};
  nn::Architecture encoder{};
  int log_every = 10;
  std::uint64_t seed = 0;
};

void validate(const CondenseConfig& cfg);
nlohmann::json to_json(const CondenseConfig& cfg);
CondenseConfig condense_config_from_json(const nlohmann::json& j, CondenseConfig defaults = {});
std::string config_hash(const CondenseConfig& cfg);

// Matches the hyperparameters used for malicious condensation at full scale.
CondenseConfig paper_defaults();

struct TracePoint {
  int iteration = 0;
  double objective = 0.0;
  double ema = 0.0;
  double best = 0.0;
};

struct CondenseResult {
  SyntheticSet set;
  Tensor init_images;  // S_init, the regularizer anchor
  std::vector<TracePoint> trace;
};

struct ClassCondenseResult {
  Tensor images;
  std::vector<TracePoint> trace;
};

// ipc distinct random real samples per class, class-major.
Tensor initialize_synthetic(const LabeledDataset& ds, const CondenseConfig& cfg);

CondenseResult condense(const LabeledDataset& ds, const CondenseConfig& cfg);

// Condenses a single class from `mixed` starting at `init_slice` (which is
// also the regularizer anchor). Uses the same per-class random streams as
// condense(), so recondensing the untouched class rows from that class's
// initializer reproduces the condense() slice bit for bit.
ClassCondenseResult recondense_class(const LabeledDataset& mixed, const Tensor& init_slice,
                                     int class_id, const CondenseConfig& cfg);

void write_trace_csv(const std::filesystem::path& path, const std::vector<TracePoint>& trace);

}  // namespace sneakdoor::condense
