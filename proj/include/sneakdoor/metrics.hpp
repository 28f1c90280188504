#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "sneakdoor/datasets.hpp"
#include "sneakdoor/nn.hpp"

namespace sneakdoor::metrics {

double asr(const nn::ModelBundle& model, const Tensor& source_test, const nn::GeneratorNet& gen,
           double alpha, double epsilon, int target);
// Fraction of predictions equal to target.
double asr_from_predictions(std::span<const std::int32_t> predictions, int target);

double cta(const nn::ModelBundle& model, const LabeledDataset& clean_test);
double accuracy(std::span<const std::int32_t> predictions, std::span<const std::int32_t> labels);

// 10 log10(max^2 / MSE); +infinity when the inputs are identical.
double psnr(const Tensor& x, const Tensor& x_tilde, double max_value = 1.0);

struct SsimOptions {
  std::size_t window = 8;
  double dynamic_range = 1.0;
};
// Single-scale SSIM with a uniform window at stride 1 on the channel-mean
// grayscale image, population statistics per window. Batches [n,c,h,w] are
// averaged over images; a 3-axis tensor is treated as one image.
double ssim(const Tensor& x, const Tensor& x_tilde, const SsimOptions& opts = {});

inline constexpr double kProbabilityFloor = 1e-12;

// Mean over rows of KL(p_i || mean_i p_i), natural log, p floored at 1e-12.
double kl_is_from_probabilities(const Tensor& probs);
double kl_is(const Tensor& samples, const nn::ModelBundle& scorer);
Tensor softmax_rows(const Tensor& logits);

enum class IsDaggerMode { times_1e_4, times_exp_neg4 };
IsDaggerMode is_dagger_mode_from_name(const std::string& name);
std::string is_dagger_mode_name(IsDaggerMode mode);
// (1e-3 - is_raw) * 1e-4, or * exp(-4).
double is_dagger(double is_raw, IsDaggerMode mode = IsDaggerMode::times_1e_4);

struct MetricsReport {
  double asr = 0.0;
  double cta = 0.0;
  double psnr_db = 0.0;
  double ssim = 0.0;
  double is_raw = 0.0;
  double is_dagger = 0.0;
  std::size_t n_t = 0;
  std::size_t n_c = 0;
  nlohmann::json config = nlohmann::json::object();
  nlohmann::json extra = nlohmann::json::object();
};

// +inf <-> "inf".
nlohmann::json real_to_json(double value);
double real_from_json(const nlohmann::json& j);

nlohmann::json to_json(const MetricsReport& report);
MetricsReport report_from_json(const nlohmann::json& j);
// Keys metrics.json must carry.
const std::vector<std::string>& required_metric_keys();

struct CsvRow {
  std::string dataset;
  std::string method;
  std::uint64_t seed = 0;
  std::string run_id;
  MetricsReport report;
};
// %.17g, with inf spelled "inf".
std::string format_real(double v);
std::string csv_header();
std::string csv_line(const CsvRow& row);

}  // namespace sneakdoor::metrics
