#include "sneakdoor/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "sneakdoor/attack.hpp"
#include "sneakdoor/errors.hpp"

namespace sneakdoor::metrics {

double asr_from_predictions(std::span<const std::int32_t> predictions, int target) {
  if (predictions.empty()) throw ArgumentError("asr over an empty set");
  const auto hits = std::count(predictions.begin(), predictions.end(), target);
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

double asr(const nn::ModelBundle& model, const Tensor& source_test, const nn::GeneratorNet& gen,
           double alpha, double epsilon, int target) {
  if (source_test.rank() == 0 || source_test.dim(0) == 0) throw ArgumentError("asr over an empty set");
  const Tensor triggered = attack::apply_trigger(source_test, gen, alpha, epsilon);
  return asr_from_predictions(nn::predict(model, triggered), target);
}

double accuracy(std::span<const std::int32_t> predictions, std::span<const std::int32_t> labels) {
  if (predictions.size() != labels.size()) throw ArgumentError("accuracy: size mismatch");
  if (predictions.empty()) throw ArgumentError("accuracy over an empty set");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predictions[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double cta(const nn::ModelBundle& model, const LabeledDataset& clean_test) {
  if (clean_test.empty()) throw ArgumentError("cta over an empty set");
  return accuracy(nn::predict(model, clean_test.images()), clean_test.labels());
}

double psnr(const Tensor& x, const Tensor& x_tilde, double max_value) {
  if (x.shape() != x_tilde.shape()) throw ArgumentError("psnr: shape mismatch");
  if (x.empty()) throw ArgumentError("psnr of empty tensors");
  double se = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - x_tilde[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(x.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(max_value * max_value / mse);
}

namespace {

// Channel-mean grayscale planes, [n][h*w].
std::vector<double> grayscale(const Tensor& t, std::size_t n, std::size_t c, std::size_t plane) {
  std::vector<double> g(n * plane, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* src = t.data() + (i * c + ch) * plane;
      for (std::size_t p = 0; p < plane; ++p) g[i * plane + p] += src[p];
    }
    for (std::size_t p = 0; p < plane; ++p) g[i * plane + p] /= static_cast<double>(c);
  }
  return g;
}

}  // namespace

double ssim(const Tensor& x, const Tensor& x_tilde, const SsimOptions& opts) {
  if (x.shape() != x_tilde.shape()) throw ArgumentError("ssim: shape mismatch");
  if (x.rank() != 3 && x.rank() != 4) throw ArgumentError("ssim expects [c,h,w] or [n,c,h,w]");
  const std::size_t off = x.rank() == 4 ? 1 : 0;
  const std::size_t n = off ? x.dim(0) : 1;
  const std::size_t c = x.dim(off), h = x.dim(off + 1), w = x.dim(off + 2);
  const std::size_t win = opts.window;
  if (win == 0 || h < win || w < win) throw ArgumentError("ssim: image smaller than the window");
  if (n == 0) throw ArgumentError("ssim of an empty batch");
  const double c1 = (0.01 * opts.dynamic_range) * (0.01 * opts.dynamic_range);
  const double c2 = (0.03 * opts.dynamic_range) * (0.03 * opts.dynamic_range);
  const std::size_t plane = h * w;
  const auto ga = grayscale(x, n, c, plane);
  const auto gb = grayscale(x_tilde, n, c, plane);
  const double count = static_cast<double>(win * win);

  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* a = ga.data() + i * plane;
    const double* b = gb.data() + i * plane;
    double image_sum = 0.0;
    for (std::size_t y0 = 0; y0 + win <= h; ++y0) {
      for (std::size_t x0 = 0; x0 + win <= w; ++x0) {
        double sa = 0, sb = 0;
        for (std::size_t y = y0; y < y0 + win; ++y) {
          for (std::size_t xx = x0; xx < x0 + win; ++xx) {
            sa += a[y * w + xx];
            sb += b[y * w + xx];
          }
        }
        const double ma = sa / count, mb = sb / count;
        double va = 0, vb = 0, cov = 0;
        for (std::size_t y = y0; y < y0 + win; ++y) {
          for (std::size_t xx = x0; xx < x0 + win; ++xx) {
            const double da = a[y * w + xx] - ma, db = b[y * w + xx] - mb;
            va += da * da;
            vb += db * db;
            cov += da * db;
          }
        }
        va /= count;
        vb /= count;
        cov /= count;
        image_sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
                     ((ma * ma + mb * mb + c1) * (va + vb + c2));
      }
    }
    total += image_sum / static_cast<double>((h - win + 1) * (w - win + 1));
  }
  return total / static_cast<double>(n);
}

Tensor softmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw ArgumentError("softmax_rows expects a matrix");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  Tensor p(logits.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const double* z = logits.data() + i * k;
    const double zmax = *std::max_element(z, z + k);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      p[i * k + j] = std::exp(z[j] - zmax);
      sum += p[i * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) p[i * k + j] /= sum;
  }
  return p;
}

double kl_is_from_probabilities(const Tensor& probs) {
  if (probs.rank() != 2 || probs.dim(0) == 0) throw ArgumentError("kl_is needs a non-empty [n,k]");
  const std::size_t n = probs.dim(0), k = probs.dim(1);
  std::vector<double> p(n * k);
  for (std::size_t i = 0; i < n * k; ++i) p[i] = std::max(probs[i], kProbabilityFloor);
  std::vector<double> marginal(k, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) marginal[j] += p[i * k + j];
  }
  for (auto& m : marginal) m /= static_cast<double>(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double kl = 0.0;
    for (std::size_t j = 0; j < k; ++j) kl += p[i * k + j] * std::log(p[i * k + j] / marginal[j]);
    total += kl;
  }
  return std::max(0.0, total / static_cast<double>(n));
}

double kl_is(const Tensor& samples, const nn::ModelBundle& scorer) {
  return kl_is_from_probabilities(softmax_rows(nn::forward_logits(scorer, samples)));
}

IsDaggerMode is_dagger_mode_from_name(const std::string& name) {
  if (name == "times_1e-4") return IsDaggerMode::times_1e_4;
  if (name == "times_exp_-4") return IsDaggerMode::times_exp_neg4;
  throw ArgumentError("unknown is_dagger_mode '" + name + "' (times_1e-4 | times_exp_-4)");
}

std::string is_dagger_mode_name(IsDaggerMode mode) {
  return mode == IsDaggerMode::times_1e_4 ? "times_1e-4" : "times_exp_-4";
}

double is_dagger(double is_raw, IsDaggerMode mode) {
  const double factor = mode == IsDaggerMode::times_1e_4 ? 1e-4 : std::exp(-4.0);
  return (1e-3 - is_raw) * factor;
}

nlohmann::json real_to_json(double value) {
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  if (std::isnan(value)) return "nan";
  return value;
}

double real_from_json(const nlohmann::json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    throw FormatError("expected a number or \"inf\", got \"" + s + "\"");
  }
  if (!j.is_number()) throw FormatError("expected a number");
  return j.get<double>();
}

const std::vector<std::string>& required_metric_keys() {
  static const std::vector<std::string> keys{"asr",    "cta",       "psnr_db", "ssim", "is_raw",
                                             "is_dagger", "n_t", "n_c",     "config"};
  return keys;
}

nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json j{{"asr", r.asr},
                   {"cta", r.cta},
                   {"psnr_db", real_to_json(r.psnr_db)},
                   {"ssim", r.ssim},
                   {"is_raw", r.is_raw},
                   {"is_dagger", r.is_dagger},
                   {"n_t", r.n_t},
                   {"n_c", r.n_c},
                   {"config", r.config}};
  if (!r.extra.empty()) j["extra"] = r.extra;
  return j;
}

MetricsReport report_from_json(const nlohmann::json& j) {
  for (const auto& key : required_metric_keys()) {
    if (!j.contains(key)) throw FormatError("metrics report is missing '" + key + "'");
  }
  try {
    MetricsReport r;
    r.asr = real_from_json(j.at("asr"));
    r.cta = real_from_json(j.at("cta"));
    r.psnr_db = real_from_json(j.at("psnr_db"));
    r.ssim = real_from_json(j.at("ssim"));
    r.is_raw = real_from_json(j.at("is_raw"));
    r.is_dagger = real_from_json(j.at("is_dagger"));
    r.n_t = j.at("n_t").get<std::size_t>();
    r.n_c = j.at("n_c").get<std::size_t>();
    r.config = j.at("config");
    if (j.contains("extra")) r.extra = j.at("extra");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("metrics report: ") + e.what());
  }
}

std::string csv_header() {
  return "dataset,method,seed,run_id,asr,cta,psnr_db,ssim,is_raw,is_dagger,n_t,n_c";
}

std::string format_real(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string csv_line(const CsvRow& row) {
  const auto& r = row.report;
  return row.dataset + "," + row.method + "," + std::to_string(row.seed) + "," + row.run_id + "," +
         format_real(r.asr) + "," + format_real(r.cta) + "," + format_real(r.psnr_db) + "," +
         format_real(r.ssim) + "," + format_real(r.is_raw) + "," + format_real(r.is_dagger) + "," +
         std::to_string(r.n_t) + "," + std::to_string(r.n_c);
}

}  // namespace sneakdoor::metrics
