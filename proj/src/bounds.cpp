#include "sneakdoor/bounds.hpp"

#include <algorithm>
#include <cmath>

#include "sneakdoor/attack.hpp"
#include "sneakdoor/condense.hpp"
#include "sneakdoor/errors.hpp"
#include "sneakdoor/kernels.hpp"
#include "sneakdoor/rng.hpp"

namespace sneakdoor::bounds {

std::string interpretation_name(Interpretation i) {
  switch (i) {
    case Interpretation::none: return "none";
    case Interpretation::union_mixture: return "union_mixture";
    case Interpretation::convex_mixture: return "convex_mixture";
  }
  return "none";
}

BoundVerdict make_verdict(std::string theorem, double lhs, double rhs, Interpretation interp,
                          const BoundEstimates& est, std::string mode) {
  BoundVerdict v;
  v.theorem = std::move(theorem);
  v.lhs = lhs;
  v.rhs = rhs;
  v.holds = lhs <= rhs + kVerdictSlack;
  v.interpretation = interp;
  v.mode = std::move(mode);
  v.estimates = est;
  return v;
}

nlohmann::json to_json(const BoundVerdict& v) {
  const auto& e = v.estimates;
  nlohmann::json j{{"theorem", v.theorem},
                   {"lhs", v.lhs},
                   {"rhs", v.rhs},
                   {"holds", v.holds},
                   {"interpretation", interpretation_name(v.interpretation)},
                   {"estimates",
                    {{"l_f_hat", e.l_f_hat},
                     {"gamma_hat", e.gamma_hat},
                     {"delta_hat", e.delta_hat},
                     {"lambda", e.lambda},
                     {"mu_r", e.mu_r},
                     {"rho", e.rho},
                     {"epsilon", e.epsilon},
                     {"alpha", e.alpha},
                     {"lipschitz_pairs", e.lipschitz_pairs},
                     {"source_points", e.source_points},
                     {"clean_points", e.clean_points}}},
                   {"caveat",
                    "estimated on finite embedding clouds; l_f_hat is a sampled lower bound"}};
  if (!v.mode.empty()) j["mode"] = v.mode;
  return j;
}

nlohmann::json to_json(const std::vector<BoundVerdict>& verdicts) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& v : verdicts) arr.push_back(to_json(v));
  return arr;
}

double lipschitz_ratio(const Tensor& inputs, const Tensor& feats, std::span<const PairIndex> pairs) {
  if (inputs.rank() < 1 || feats.rank() < 1 || inputs.dim(0) != feats.dim(0)) {
    throw ArgumentError("lipschitz_ratio: inputs and features must have matching rows");
  }
  const std::size_t n = inputs.dim(0);
  const std::size_t di = inputs.row_size(), df = feats.row_size();
  double best = 0.0;
  bool any = false;
  for (const auto& p : pairs) {
    if (p.a >= n || p.b >= n) throw ArgumentError("lipschitz_ratio: pair index out of range");
    double dx = 0.0;
    for (std::size_t k = 0; k < di; ++k) {
      dx = std::max(dx, std::abs(inputs[p.a * di + k] - inputs[p.b * di + k]));
    }
    if (dx < 1e-9) continue;
    double ss = 0.0;
    for (std::size_t k = 0; k < df; ++k) {
      const double d = feats[p.a * df + k] - feats[p.b * df + k];
      ss += d * d;
    }
    best = std::max(best, std::sqrt(ss) / dx);
    any = true;
  }
  if (!any) throw EstimationError("no input pair is separated by at least 1e-9 in l-infinity");
  return best;
}

LipschitzPool lipschitz_pool(const Tensor& images, std::size_t pair_samples, std::uint64_t seed,
                             const Tensor& originals, const Tensor& triggered) {
  if (images.rank() < 1) throw ArgumentError("lipschitz_pool needs an image batch");
  if (originals.shape() != triggered.shape()) {
    throw ArgumentError("lipschitz_pool: originals and triggered must have the same shape");
  }
  LipschitzPool pool;
  const std::size_t n = images.dim(0);
  const bool with_trigger = !triggered.empty();
  pool.inputs = with_trigger ? concat_rows(concat_rows(images, originals), triggered) : images;

  const std::size_t all_pairs = n * (n - (n > 0 ? 1 : 0)) / 2;
  if (all_pairs <= pair_samples) {
    for (std::size_t a = 0; a < n; ++a) {
      for (std::size_t b = a + 1; b < n; ++b) pool.pairs.push_back({a, b});
    }
  } else {
    Rng rng = Rng(seed).stream("lipschitz_pairs");
    for (std::size_t s = 0; s < pair_samples; ++s) {
      const auto a = static_cast<std::size_t>(rng.below(n));
      auto b = static_cast<std::size_t>(rng.below(n - 1));
      if (b >= a) ++b;
      pool.pairs.push_back({a, b});
    }
  }
  if (with_trigger) {
    const std::size_t m = originals.dim(0);
    for (std::size_t i = 0; i < m; ++i) pool.pairs.push_back({n + i, n + m + i});
  }
  return pool;
}

double estimate_lipschitz(const nn::ModelBundle& model, const LipschitzPool& pool) {
  if (pool.inputs.rank() < 1 || pool.inputs.dim(0) < 2) {
    throw ArgumentError("estimate_lipschitz needs at least two samples");
  }
  return lipschitz_ratio(pool.inputs, nn::forward_features(model, pool.inputs), pool.pairs);
}

double estimate_lipschitz(const nn::ModelBundle& model, const Tensor& images,
                          std::size_t pair_samples, std::uint64_t seed, const Tensor& originals,
                          const Tensor& triggered) {
  return estimate_lipschitz(model, lipschitz_pool(images, pair_samples, seed, originals, triggered));
}

double estimate_hausdorff(const Tensor& source_feats, const Tensor& clean_feats) {
  if (source_feats.rank() < 1 || clean_feats.rank() < 1 || source_feats.dim(0) == 0 ||
      clean_feats.dim(0) == 0) {
    throw ArgumentError("estimate_hausdorff needs two non-empty clouds");
  }
  if (source_feats.row_size() != clean_feats.row_size()) {
    throw ArgumentError("estimate_hausdorff: dimension mismatch");
  }
  std::vector<double> d(source_feats.dim(0));
  kernels::nearest_distances(source_feats.values(), clean_feats.values(), source_feats.row_size(), d);
  return *std::max_element(d.begin(), d.end());
}

BoundVerdict check_lemma1(const nn::ModelBundle& model, const nn::GeneratorNet& gen,
                          const Tensor& source, double alpha, double epsilon, double l_f_hat,
                          std::string mode) {
  if (source.rank() < 1 || source.dim(0) == 0) throw ArgumentError("check_lemma1 needs samples");
  const Tensor triggered = attack::apply_trigger(source, gen, alpha, epsilon);
  const Tensor f0 = nn::forward_features(model, source);
  const Tensor f1 = nn::forward_features(model, triggered);
  const std::size_t n = source.dim(0), d = f0.row_size();
  double lhs = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double ss = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      const double diff = f1[i * d + k] - f0[i * d + k];
      ss += diff * diff;
    }
    lhs = std::max(lhs, std::sqrt(ss));
  }
  BoundEstimates est;
  est.l_f_hat = l_f_hat;
  est.gamma_hat = l_f_hat * alpha;
  est.alpha = alpha;
  est.epsilon = epsilon;
  est.source_points = n;
  return make_verdict("lemma1", lhs, l_f_hat * alpha * epsilon, Interpretation::none, est,
                      std::move(mode));
}

double triggered_weight(Interpretation interpretation, double rho, std::size_t clean_count) {
  if (!(rho >= 0.0 && rho <= 1.0)) throw ArgumentError("rho must lie in [0, 1]");
  switch (interpretation) {
    case Interpretation::convex_mixture: return rho;
    case Interpretation::union_mixture: {
      const std::size_t k = attack::poison_count(rho, clean_count);
      if (k == 0) return 0.0;
      return static_cast<double>(k) / static_cast<double>(clean_count + k);
    }
    case Interpretation::none: break;
  }
  throw ArgumentError("a mixture interpretation is required");
}

BoundVerdict check_theorem1(const Tensor& clean_feats, const Tensor& triggered_feats, double rho,
                            double gamma_hat, double epsilon, double delta_hat,
                            Interpretation interpretation, BoundEstimates est) {
  if (clean_feats.rank() < 1 || triggered_feats.rank() < 1 || clean_feats.dim(0) == 0 ||
      triggered_feats.dim(0) == 0) {
    throw ArgumentError("check_theorem1 needs non-empty clouds");
  }
  if (clean_feats.row_size() != triggered_feats.row_size()) {
    throw ArgumentError("check_theorem1: dimension mismatch");
  }
  const double w = triggered_weight(interpretation, rho, clean_feats.dim(0));
  std::vector<double> d(triggered_feats.dim(0));
  kernels::nearest_distances(triggered_feats.values(), clean_feats.values(),
                             clean_feats.row_size(), d);
  double mean = 0.0;
  for (double v : d) mean += v;
  mean /= static_cast<double>(d.size());
  est.rho = rho;
  est.gamma_hat = gamma_hat;
  est.epsilon = epsilon;
  est.delta_hat = delta_hat;
  est.source_points = triggered_feats.dim(0);
  est.clean_points = clean_feats.dim(0);
  const double lhs = w == 0.0 ? 0.0 : w * mean;
  const double rhs = w * (gamma_hat * epsilon + delta_hat);
  return make_verdict("theorem1", lhs, rhs, interpretation, est);
}

BoundVerdict check_theorem2(const Tensor& s_clean_slice, const Tensor& s_poison_slice,
                            std::span<const nn::ModelBundle> encoders, double l_f_hat, double rho,
                            double gamma_hat, double epsilon, double delta_hat, double lambda,
                            double mu_r, Interpretation interpretation, BoundEstimates est) {
  if (!(lambda > 0.0)) throw ArgumentError("MMD bound needs lambda > 0");
  if (!(mu_r > 0.0)) throw ArgumentError("MMD bound needs mu_R > 0");
  if (encoders.empty()) throw ArgumentError("MMD bound needs at least one encoder");
  if (s_clean_slice.shape() != s_poison_slice.shape()) {
    throw ArgumentError("check_theorem2: slice shapes differ");
  }
  const std::size_t clean_count = est.clean_points > 0 ? est.clean_points : s_clean_slice.dim(0);
  const double w = triggered_weight(interpretation, rho, clean_count);
  double lhs = 0.0;
  for (const auto& enc : encoders) {
    const double mmd = condense::mean_embedding_mmd(nn::forward_features(enc, s_clean_slice),
                                                    nn::forward_features(enc, s_poison_slice));
    lhs += std::sqrt(mmd);
  }
  lhs /= static_cast<double>(encoders.size());
  est.l_f_hat = l_f_hat;
  est.rho = rho;
  est.gamma_hat = gamma_hat;
  est.epsilon = epsilon;
  est.delta_hat = delta_hat;
  est.lambda = lambda;
  est.mu_r = mu_r;
  est.clean_points = clean_count;
  const double rhs = l_f_hat * l_f_hat * w * (gamma_hat * epsilon + delta_hat) / (lambda * mu_r);
  return make_verdict("theorem2", lhs, rhs, interpretation, est);
}

}  // namespace sneakdoor::bounds
