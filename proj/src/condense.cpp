#include "sneakdoor/condense.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "sneakdoor/errors.hpp"
#include "sneakdoor/rng.hpp"
#include "sneakdoor/tensor_io.hpp"

namespace sneakdoor::condense {

ImageShape SyntheticSet::image_shape() const {
  if (images.rank() != 4) return {};
  return {images.dim(1), images.dim(2), images.dim(3)};
}

Tensor SyntheticSet::class_images(int c) const {
  if (c < 0 || c >= num_classes) throw ArgumentError("class id out of range");
  const auto k = static_cast<std::size_t>(ipc);
  return slice_rows(images, static_cast<std::size_t>(c) * k, k);
}

void SyntheticSet::set_class_images(int c, const Tensor& slice) {
  if (c < 0 || c >= num_classes) throw ArgumentError("class id out of range");
  const auto k = static_cast<std::size_t>(ipc);
  if (slice.rank() != 4 || slice.dim(0) != k || slice.row_size() != images.row_size()) {
    throw ArgumentError("class slice has shape " + shape_to_string(slice.shape()));
  }
  std::copy(slice.values().begin(), slice.values().end(),
            images.data() + static_cast<std::size_t>(c) * k * images.row_size());
}

SyntheticSet make_synthetic(Tensor images, int num_classes, int ipc, std::uint64_t seed,
                            std::string config_hash) {
  if (num_classes < 1 || ipc < 1) throw ArgumentError("synthetic set needs num_classes, ipc >= 1");
  if (images.rank() != 4 || images.dim(0) != static_cast<std::size_t>(num_classes * ipc)) {
    throw ArgumentError("synthetic images must be [num_classes * ipc, c, h, w], got " +
                        shape_to_string(images.shape()));
  }
  for (double v : images.values()) {
    if (!(v >= 0.0 && v <= 1.0)) throw ArgumentError("synthetic pixel outside [0,1]");
  }
  SyntheticSet s;
  s.images = std::move(images);
  s.num_classes = num_classes;
  s.ipc = ipc;
  s.seed = seed;
  s.config_hash = std::move(config_hash);
  s.labels.reserve(s.images.dim(0));
  for (int c = 0; c < num_classes; ++c) s.labels.insert(s.labels.end(), ipc, c);
  return s;
}

void save_synthetic(const std::filesystem::path& path, const SyntheticSet& set) {
  const nlohmann::json extra{{"role", "synthetic"},
                             {"ipc", set.ipc},
                             {"num_classes", set.num_classes},
                             {"seed", set.seed},
                             {"config_hash", set.config_hash}};
  io::write_real_tensor(path, set.images.shape(), set.images.values(), io::DType::f64, extra);
}

SyntheticSet load_synthetic(const std::filesystem::path& path) {
  io::TensorFile f = io::read_tensor(path);
  try {
    if (f.header.value("role", std::string()) != "synthetic") {
      throw FormatError(path.string() + ": not a synthetic set");
    }
    if (f.dtype == io::DType::i32) throw FormatError(path.string() + ": integer payload");
    return make_synthetic(Tensor(f.shape, std::move(f.reals)), f.header.at("num_classes").get<int>(),
                          f.header.at("ipc").get<int>(), f.header.at("seed").get<std::uint64_t>(),
                          f.header.at("config_hash").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  } catch (const ArgumentError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

Omega draw_omega(const AugmentSpec& spec, std::uint64_t seed, std::uint64_t iteration,
                 std::uint64_t draw) {
  Omega w;
  if (!spec.enabled()) return w;
  Rng rng = Rng(seed).stream("augment", iteration, draw);
  if (spec.flip) w.flip = rng.uniform() < 0.5;
  if (spec.shift > 0) {
    const auto span = static_cast<std::uint64_t>(2 * spec.shift + 1);
    w.dx = static_cast<int>(rng.below(span)) - spec.shift;
    w.dy = static_cast<int>(rng.below(span)) - spec.shift;
  }
  if (spec.scale) w.scale = rng.uniform(0.9, 1.1);
  return w;
}

namespace {

bool is_identity(const Omega& w) { return !w.flip && w.dx == 0 && w.dy == 0 && w.scale == 1.0; }

// Source taps of one output pixel: up to four (index, weight) pairs.
struct Taps {
  std::size_t index[4];
  double weight[4];
  int count = 0;
};

// Bilinear taps for every output pixel of an h x w plane.
std::vector<Taps> build_taps(const Omega& w, std::size_t h, std::size_t wd) {
  std::vector<Taps> taps(h * wd);
  const double cy = (static_cast<double>(h) - 1.0) / 2.0;
  const double cx = (static_cast<double>(wd) - 1.0) / 2.0;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < wd; ++x) {
      // Invert scale, then shift, then flip.
      double sy = cy + (static_cast<double>(y) - cy) / w.scale;
      double sx = cx + (static_cast<double>(x) - cx) / w.scale;
      sy -= w.dy;
      sx -= w.dx;
      if (w.flip) sx = static_cast<double>(wd) - 1.0 - sx;
      const double fy = std::floor(sy), fx = std::floor(sx);
      const double ty = sy - fy, tx = sx - fx;
      Taps& t = taps[y * wd + x];
      const long y0 = static_cast<long>(fy), x0 = static_cast<long>(fx);
      const double wy[2] = {1.0 - ty, ty};
      const double wx[2] = {1.0 - tx, tx};
      for (int a = 0; a < 2; ++a) {
        for (int b = 0; b < 2; ++b) {
          const double wt = wy[a] * wx[b];
          const long yy = y0 + a, xx = x0 + b;
          if (wt == 0.0 || yy < 0 || xx < 0 || yy >= static_cast<long>(h) ||
              xx >= static_cast<long>(wd)) {
            continue;
          }
          t.index[t.count] = static_cast<std::size_t>(yy) * wd + static_cast<std::size_t>(xx);
          t.weight[t.count] = wt;
          ++t.count;
        }
      }
    }
  }
  return taps;
}

void check_image_batch(const Tensor& t, const char* what) {
  if (t.rank() != 4) {
    throw ArgumentError(std::string(what) + " must be [n, c, h, w], got " +
                        shape_to_string(t.shape()));
  }
}

}  // namespace

Tensor apply_augment(const Tensor& batch, const Omega& omega) {
  check_image_batch(batch, "augmentation input");
  if (is_identity(omega)) return batch;
  const std::size_t h = batch.dim(2), w = batch.dim(3), plane = h * w;
  const auto taps = build_taps(omega, h, w);
  Tensor out(batch.shape());
  const std::size_t planes = batch.dim(0) * batch.dim(1);
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = batch.data() + p * plane;
    double* dst = out.data() + p * plane;
    for (std::size_t q = 0; q < plane; ++q) {
      double acc = 0.0;
      for (int k = 0; k < taps[q].count; ++k) acc += taps[q].weight[k] * src[taps[q].index[k]];
      dst[q] = acc;
    }
  }
  return out;
}

Tensor augment_adjoint(const Tensor& grad, const Omega& omega, const Shape& input_shape) {
  check_image_batch(grad, "augmentation gradient");
  if (grad.shape() != input_shape) throw ArgumentError("augmentation adjoint shape mismatch");
  if (is_identity(omega)) return grad;
  const std::size_t h = grad.dim(2), w = grad.dim(3), plane = h * w;
  const auto taps = build_taps(omega, h, w);
  Tensor out(input_shape);
  const std::size_t planes = grad.dim(0) * grad.dim(1);
  for (std::size_t p = 0; p < planes; ++p) {
    const double* g = grad.data() + p * plane;
    double* dst = out.data() + p * plane;
    for (std::size_t q = 0; q < plane; ++q) {
      for (int k = 0; k < taps[q].count; ++k) dst[taps[q].index[k]] += taps[q].weight[k] * g[q];
    }
  }
  return out;
}

namespace {

std::vector<double> row_mean(const Tensor& feats) {
  const std::size_t n = feats.dim(0), d = feats.row_size();
  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) mean[j] += feats[i * d + j];
  }
  for (auto& m : mean) m /= static_cast<double>(n);
  return mean;
}

}  // namespace

double mean_embedding_mmd(const Tensor& real_feats, const Tensor& syn_feats) {
  if (real_feats.rank() < 1 || syn_feats.rank() < 1 || real_feats.dim(0) == 0 ||
      syn_feats.dim(0) == 0) {
    throw ArgumentError("mean_embedding_mmd needs non-empty feature sets");
  }
  if (real_feats.row_size() != syn_feats.row_size()) {
    throw ArgumentError("mean_embedding_mmd: feature dimensions differ");
  }
  const auto a = row_mean(real_feats);
  const auto b = row_mean(syn_feats);
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
  return s;
}

RegularizerValue regularizer(const Tensor& syn, const Tensor& syn_init) {
  if (syn.shape() != syn_init.shape()) throw ArgumentError("regularizer shape mismatch");
  RegularizerValue r;
  r.gradient = Tensor(syn.shape());
  double s = 0.0;
  for (std::size_t i = 0; i < syn.size(); ++i) {
    const double d = syn[i] - syn_init[i];
    r.gradient[i] = d;
    s += d * d;
  }
  r.value = 0.5 * s;
  return r;
}

void validate(const CondenseConfig& cfg) {
  if (cfg.ipc < 1) throw ArgumentError("ipc must be >= 1");
  if (cfg.iterations < 0) throw ArgumentError("iterations must be >= 0");
  if (!(cfg.synthesis_lr >= 0.0)) throw ArgumentError("synthesis_lr must be >= 0");
  if (cfg.batch_real < 1) throw ArgumentError("batch_real must be >= 1");
  if (cfg.encoder_seeds_per_step < 1) throw ArgumentError("encoder_seeds_per_step must be >= 1");
  if (!(cfg.reg_weight >= 0.0)) throw ArgumentError("reg_weight (lambda) must be >= 0");
  if (cfg.augment.shift < 0) throw ArgumentError("augment.shift must be >= 0");
  if (cfg.log_every < 1) throw ArgumentError("log_every must be >= 1");
  nn::validate(cfg.encoder);
}

nlohmann::json to_json(const CondenseConfig& cfg) {
  return {{"ipc", cfg.ipc},
          {"iterations", cfg.iterations},
          {"synthesis_lr", cfg.synthesis_lr},
          {"batch_real", cfg.batch_real},
          {"encoder_seeds_per_step", cfg.encoder_seeds_per_step},
          {"reg_weight", cfg.reg_weight},
          {"augment",
           {{"flip", cfg.augment.flip}, {"shift", cfg.augment.shift}, {"scale", cfg.augment.scale}}},
          {"encoder", nn::to_json(cfg.encoder)},
          {"log_every", cfg.log_every},
          {"seed", cfg.seed}};
}

namespace {

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const char* what) {
  if (!j.is_object()) throw ArgumentError(std::string(what) + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ArgumentError(std::string("unknown key '") + key + "' in " + what);
  }
}

}  // namespace

CondenseConfig condense_config_from_json(const nlohmann::json& j, CondenseConfig cfg) {
  reject_unknown(j,
                 {"ipc", "iterations", "synthesis_lr", "batch_real", "encoder_seeds_per_step",
                  "reg_weight", "augment", "encoder", "log_every", "seed"},
                 "condense config");
  try {
    cfg.ipc = j.value("ipc", cfg.ipc);
    cfg.iterations = j.value("iterations", cfg.iterations);
    cfg.synthesis_lr = j.value("synthesis_lr", cfg.synthesis_lr);
    cfg.batch_real = j.value("batch_real", cfg.batch_real);
    cfg.encoder_seeds_per_step = j.value("encoder_seeds_per_step", cfg.encoder_seeds_per_step);
    cfg.reg_weight = j.value("reg_weight", cfg.reg_weight);
    cfg.log_every = j.value("log_every", cfg.log_every);
    cfg.seed = j.value("seed", cfg.seed);
    if (j.contains("augment")) {
      const auto& a = j.at("augment");
      reject_unknown(a, {"flip", "shift", "scale"}, "augment");
      cfg.augment.flip = a.value("flip", cfg.augment.flip);
      cfg.augment.shift = a.value("shift", cfg.augment.shift);
      cfg.augment.scale = a.value("scale", cfg.augment.scale);
    }
    if (j.contains("encoder")) {
      nlohmann::json merged = nn::to_json(cfg.encoder);
      reject_unknown(j.at("encoder"), {"kind", "widths", "activation", "input"}, "encoder");
      merged.update(j.at("encoder"));
      cfg.encoder = nn::architecture_from_json(merged);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ArgumentError(std::string("condense config: ") + e.what());
  }
  validate(cfg);
  return cfg;
}

std::string config_hash(const CondenseConfig& cfg) { return io::hash_hex(to_json(cfg).dump()); }

CondenseConfig paper_defaults() {
  CondenseConfig cfg;
  cfg.ipc = 50;
  cfg.iterations = 20000;
  cfg.synthesis_lr = 1.0;
  cfg.batch_real = 256;
  return cfg;
}

namespace {

void check_encoder_input(const CondenseConfig& cfg, ImageShape shape) {
  if (!(cfg.encoder.input == shape)) {
    throw ArgumentError("encoder input shape does not match the dataset image shape");
  }
}

Tensor class_initializer(const LabeledDataset& ds, int c, const CondenseConfig& cfg) {
  const auto n = ds.class_size(c);
  const auto k = static_cast<std::size_t>(cfg.ipc);
  if (n < k) {
    throw ArgumentError("class " + std::to_string(c) + " has " + std::to_string(n) +
                        " samples, fewer than ipc = " + std::to_string(cfg.ipc));
  }
  Rng rng = Rng(cfg.seed).stream("init", static_cast<std::uint64_t>(c));
  const auto picks = rng.sample_without_replacement(n, k);
  std::vector<std::size_t> positions(k);
  for (std::size_t i = 0; i < k; ++i) positions[i] = ds.class_index()[static_cast<std::size_t>(c)][picks[i]];
  return gather_rows(ds.images(), positions);
}

// Uniform b-subset of n rows: the rows with the b smallest per-row keys,
// returned in ascending row order. A row's key depends only on its index, so
// appending rows (the poisoned mixture) keeps every clean row's key and the
// batch changes only where an appended row displaces a clean one.
std::vector<std::size_t> real_batch_rows(const Rng& rng, std::size_t n, std::size_t b) {
  std::vector<std::pair<std::uint64_t, std::size_t>> keyed(n);
  for (std::size_t j = 0; j < n; ++j) keyed[j] = {rng.stream(static_cast<std::uint64_t>(j)).next_u64(), j};
  std::nth_element(keyed.begin(), keyed.begin() + static_cast<long>(b), keyed.end());
  std::vector<std::size_t> rows(b);
  for (std::size_t i = 0; i < b; ++i) rows[i] = keyed[i].second;
  std::sort(rows.begin(), rows.end());
  return rows;
}

// Distribution matching for one class. `real` holds that class's samples in
// storage order. Every random draw is keyed by (seed, class, iteration) or
// (seed, iteration) so the result depends only on the real rows, the
// initializer and the config.
Tensor condense_one_class(const Tensor& real, const Tensor& init, int c, const CondenseConfig& cfg,
                          std::vector<double>& objectives) {
  const nn::Network encoder = nn::build_feature_network(cfg.encoder);
  const Rng root(cfg.seed);
  const std::size_t n = real.dim(0);
  const std::size_t b = std::min(cfg.batch_real, n);
  const std::size_t m = init.dim(0);
  const auto cls = static_cast<std::uint64_t>(c);
  const auto encoders = static_cast<std::size_t>(cfg.encoder_seeds_per_step);

  Tensor syn = init;
  nn::AdamState adam;
  nn::AdamConfig adam_cfg;
  adam_cfg.lr = cfg.synthesis_lr;
  objectives.assign(static_cast<std::size_t>(cfg.iterations), 0.0);
  Tensor total_grad(syn.shape());

  for (int it = 0; it < cfg.iterations; ++it) {
    const auto iter = static_cast<std::uint64_t>(it);
    const Tensor real_batch = gather_rows(real, real_batch_rows(root.stream("real", cls, iter), n, b));

    std::fill(total_grad.values().begin(), total_grad.values().end(), 0.0);
    double objective = 0.0;
    for (std::size_t e = 0; e < encoders; ++e) {
      Rng enc_rng = root.stream("encoder", iter, static_cast<std::uint64_t>(e));
      const auto params = encoder.init_params(enc_rng);
      const Omega omega = draw_omega(cfg.augment, cfg.seed, iter, cls * encoders + e);

      const Tensor real_feats = encoder.forward(params, apply_augment(real_batch, omega));
      nn::Network::Tape tape;
      const Tensor syn_aug = apply_augment(syn, omega);
      const Tensor syn_feats = encoder.forward(params, syn_aug, &tape);

      const auto mr = row_mean(real_feats);
      const auto ms = row_mean(syn_feats);
      const std::size_t d = mr.size();
      double mmd = 0.0;
      Tensor g(syn_feats.shape());
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = ms[j] - mr[j];
        mmd += diff * diff;
        const double gj = 2.0 * diff / static_cast<double>(m) / static_cast<double>(encoders);
        for (std::size_t i = 0; i < m; ++i) g[i * d + j] = gj;
      }
      objective += mmd / static_cast<double>(encoders);
      const Tensor g_aug = encoder.backward(params, tape, g, {}, true);
      const Tensor g_syn = augment_adjoint(g_aug, omega, syn.shape());
      for (std::size_t k = 0; k < syn.size(); ++k) total_grad[k] += g_syn[k];
    }
    if (cfg.reg_weight > 0.0) {
      const auto reg = regularizer(syn, init);
      objective += cfg.reg_weight * reg.value;
      for (std::size_t k = 0; k < syn.size(); ++k) total_grad[k] += cfg.reg_weight * reg.gradient[k];
    }
    nn::check_finite(total_grad.values(), "condensation gradient");
    objectives[static_cast<std::size_t>(it)] = objective;

    nn::adam_step(syn.values(), total_grad.values(), adam_cfg, adam);
    for (auto& v : syn.values()) v = std::clamp(v, 0.0, 1.0);
  }
  return syn;
}

std::vector<TracePoint> make_trace(const std::vector<double>& objectives, int log_every) {
  std::vector<TracePoint> trace;
  double ema = 0.0, best = 0.0;
  for (std::size_t i = 0; i < objectives.size(); ++i) {
    const double v = objectives[i];
    ema = i == 0 ? v : 0.9 * ema + 0.1 * v;
    best = i == 0 ? v : std::min(best, v);
    const bool last = i + 1 == objectives.size();
    if (i % static_cast<std::size_t>(log_every) == 0 || last) {
      trace.push_back({static_cast<int>(i), v, ema, best});
    }
  }
  return trace;
}

}  // namespace

Tensor initialize_synthetic(const LabeledDataset& ds, const CondenseConfig& cfg) {
  validate(cfg);
  if (ds.empty()) throw ArgumentError("cannot condense an empty dataset");
  Tensor out;
  for (int c = 0; c < ds.num_classes(); ++c) {
    Tensor slice = class_initializer(ds, c, cfg);
    out = c == 0 ? std::move(slice) : concat_rows(out, slice);
  }
  return out;
}

CondenseResult condense(const LabeledDataset& ds, const CondenseConfig& cfg) {
  validate(cfg);
  if (ds.empty()) throw ArgumentError("cannot condense an empty dataset");
  check_encoder_input(cfg, ds.image_shape());
  const Tensor init = initialize_synthetic(ds, cfg);
  CondenseResult result;
  result.init_images = init;
  result.set = make_synthetic(init, ds.num_classes(), cfg.ipc, cfg.seed, config_hash(cfg));
  std::vector<double> total(static_cast<std::size_t>(cfg.iterations), 0.0);
  std::vector<double> objectives;
  for (int c = 0; c < ds.num_classes(); ++c) {
    const Tensor real = ds.class_slice(c).images();
    const Tensor slice = condense_one_class(real, result.set.class_images(c), c, cfg, objectives);
    result.set.set_class_images(c, slice);
    for (std::size_t i = 0; i < total.size(); ++i) total[i] += objectives[i];
  }
  result.trace = make_trace(total, cfg.log_every);
  return result;
}

ClassCondenseResult recondense_class(const LabeledDataset& mixed, const Tensor& init_slice,
                                     int class_id, const CondenseConfig& cfg) {
  validate(cfg);
  if (mixed.empty()) throw ArgumentError("recondense_class needs a non-empty mixture");
  for (auto label : mixed.labels()) {
    if (label != class_id) throw ArgumentError("recondense_class: mixture contains other labels");
  }
  check_encoder_input(cfg, mixed.image_shape());
  if (init_slice.rank() != 4 || init_slice.dim(0) != static_cast<std::size_t>(cfg.ipc) ||
      init_slice.row_size() != mixed.images().row_size()) {
    throw ArgumentError("recondense_class: initial slice must be [ipc, c, h, w]");
  }
  std::vector<double> objectives;
  ClassCondenseResult r;
  r.images = condense_one_class(mixed.images(), init_slice, class_id, cfg, objectives);
  r.trace = make_trace(objectives, cfg.log_every);
  return r;
}

void write_trace_csv(const std::filesystem::path& path, const std::vector<TracePoint>& trace) {
  std::string text = "iteration,objective,ema,best\n";
  char buf[128];
  for (const auto& p : trace) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g\n", p.iteration, p.objective, p.ema,
                  p.best);
    text += buf;
  }
  io::write_text(path, text);
}

}  // namespace sneakdoor::condense
