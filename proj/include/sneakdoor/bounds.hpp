#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sneakdoor/nn.hpp"
#include "sneakdoor/tensor.hpp"

// Empirical checks of the latent-perturbation and condensation-discrepancy
// bounds. The feature space is the encoder's embedding space with the
// Euclidean norm; every "manifold" is a finite embedding cloud, so verdicts
// are sanity checks of the bounds' shape rather than certificates.
namespace sneakdoor::bounds {

enum class Interpretation { none, union_mixture, convex_mixture };
std::string interpretation_name(Interpretation i);

struct BoundEstimates {
  double l_f_hat = 0.0;
  double gamma_hat = 0.0;  // l_f_hat * alpha
  double delta_hat = 0.0;
  double mu_r = 1.0;
  double lambda = 0.0;
  double rho = 0.0;
  double epsilon = 0.0;
  double alpha = 0.0;
  std::size_t lipschitz_pairs = 0;
  std::size_t source_points = 0;
  std::size_t clean_points = 0;
};

struct BoundVerdict {
  std::string theorem;
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds = false;
  Interpretation interpretation = Interpretation::none;
  std::string mode;  // e.g. "inclusion" / "independent" for the lemma
  BoundEstimates estimates;
};

inline constexpr double kVerdictSlack = 1e-9;
BoundVerdict make_verdict(std::string theorem, double lhs, double rhs, Interpretation interp,
                          const BoundEstimates& est, std::string mode = {});

nlohmann::json to_json(const BoundVerdict& v);
nlohmann::json to_json(const std::vector<BoundVerdict>& verdicts);

struct PairIndex {
  std::size_t a = 0;
  std::size_t b = 0;
};

// Max over pairs of ||f_a - f_b||_2 / ||x_a - x_b||_inf, skipping pairs whose
// inputs are closer than 1e-9. Rows of inputs/feats correspond. A sampled
// lower bound on the Lipschitz constant. EstimationError without valid pairs.
double lipschitz_ratio(const Tensor& inputs, const Tensor& feats, std::span<const PairIndex> pairs);

struct LipschitzPool {
  Tensor inputs;               // [n, ...]
  std::vector<PairIndex> pairs;
};

// Pool of ds images plus, when `triggered` is non-empty, every (x, x~) pair
// (rows of `originals` and `triggered` correspond). `pair_samples` random
// pairs of the dataset images, or all of them when that is fewer.
LipschitzPool lipschitz_pool(const Tensor& images, std::size_t pair_samples, std::uint64_t seed,
                             const Tensor& originals = {}, const Tensor& triggered = {});

double estimate_lipschitz(const nn::ModelBundle& model, const LipschitzPool& pool);
double estimate_lipschitz(const nn::ModelBundle& model, const Tensor& images,
                          std::size_t pair_samples, std::uint64_t seed,
                          const Tensor& originals = {}, const Tensor& triggered = {});

// sup over source rows of the min Euclidean distance to a clean row.
double estimate_hausdorff(const Tensor& source_feats, const Tensor& clean_feats);

BoundVerdict check_lemma1(const nn::ModelBundle& model, const nn::GeneratorNet& gen,
                          const Tensor& source, double alpha, double epsilon, double l_f_hat,
                          std::string mode);

// E_{z ~ mixed}[min_clean ||z - z_c||] <= rho (gamma eps + delta). Clean
// points contribute 0; convex_mixture weights triggered points by rho,
// union_mixture by k / (N + k) with k = floor(rho N).
BoundVerdict check_theorem1(const Tensor& clean_feats, const Tensor& triggered_feats, double rho,
                            double gamma_hat, double epsilon, double delta_hat,
                            Interpretation interpretation, BoundEstimates est = {});

// lhs = mean over encoders of ||mu(S_clean) - mu(S_poison)||; rhs =
// L^2 rho (gamma eps + delta) / (lambda mu_R). ArgumentError when lambda <= 0.
BoundVerdict check_theorem2(const Tensor& s_clean_slice, const Tensor& s_poison_slice,
                            std::span<const nn::ModelBundle> encoders, double l_f_hat, double rho,
                            double gamma_hat, double epsilon, double delta_hat, double lambda,
                            double mu_r, Interpretation interpretation, BoundEstimates est = {});

// Interpretation -> effective triggered weight in the mixture.
double triggered_weight(Interpretation interpretation, double rho, std::size_t clean_count);

}  // namespace sneakdoor::bounds
