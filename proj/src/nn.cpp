#include "sneakdoor/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sneakdoor/errors.hpp"
#include "sneakdoor/kernels.hpp"
#include "sneakdoor/tensor_io.hpp"

namespace sneakdoor::nn {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

std::string arch_kind_name(ArchKind k) {
  switch (k) {
    case ArchKind::conv_small: return "conv_small";
    case ArchKind::mlp: return "mlp";
    case ArchKind::linear: return "linear";
  }
  return "conv_small";
}

std::string activation_name(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }

std::size_t layer_param_count(const Layer& layer) {
  return std::visit(overloaded{
                        [](const Conv2d& c) {
                          return c.out_channels * c.in_channels * c.kernel * c.kernel +
                                 c.out_channels;
                        },
                        [](const Dense& d) { return d.out * d.in + d.out; },
                        [](const auto&) { return std::size_t{0}; },
                    },
                    layer);
}

Shape layer_output_shape(const Layer& layer, const Shape& in) {
  return std::visit(
      overloaded{
          [&](const Conv2d& c) -> Shape {
            if (in.size() != 3 || in[0] != c.in_channels) {
              throw ArgumentError("conv layer expects " + std::to_string(c.in_channels) +
                                  " input channels, got shape " + shape_to_string(in));
            }
            if (in[1] + 2 * c.pad < c.kernel || in[2] + 2 * c.pad < c.kernel) {
              throw ArgumentError("conv kernel larger than padded input");
            }
            return {c.out_channels, in[1] + 2 * c.pad - c.kernel + 1,
                    in[2] + 2 * c.pad - c.kernel + 1};
          },
          [&](const Dense& d) -> Shape {
            if (shape_numel(in) != d.in) {
              throw ArgumentError("dense layer expects " + std::to_string(d.in) +
                                  " inputs, got shape " + shape_to_string(in));
            }
            return {d.out};
          },
          [&](const Act&) -> Shape { return in; },
          [&](const AvgPool2&) -> Shape {
            if (in.size() != 3 || in[1] % 2 != 0 || in[2] % 2 != 0) {
              throw ArgumentError("2x2 pooling needs even spatial size, got " +
                                  shape_to_string(in));
            }
            return {in[0], in[1] / 2, in[2] / 2};
          },
          [&](const Upsample2&) -> Shape {
            if (in.size() != 3) throw ArgumentError("upsampling needs a [c,h,w] input");
            return {in[0], in[1] * 2, in[2] * 2};
          },
      },
      layer);
}

Shape with_batch(std::size_t n, const Shape& s) {
  Shape out{n};
  out.insert(out.end(), s.begin(), s.end());
  return out;
}

// `in` is the per-sample [c, h, w] shape.
kernels::ConvDims conv_dims(const Conv2d& c, std::size_t batch, const Shape& in) {
  kernels::ConvDims d;
  d.batch = batch;
  d.in_channels = c.in_channels;
  d.height = in[1];
  d.width = in[2];
  d.out_channels = c.out_channels;
  d.kernel = c.kernel;
  d.pad = c.pad;
  return d;
}

}  // namespace

void validate(const Architecture& arch) {
  if (arch.input.numel() == 0) throw ArgumentError("architecture input shape is empty");
  if (arch.widths.empty()) throw ArgumentError("architecture needs at least one width");
  for (auto w : arch.widths) {
    if (w == 0) throw ArgumentError("architecture widths must be positive");
  }
  if (arch.kind == ArchKind::linear && arch.widths.size() != 1) {
    throw ArgumentError("linear architecture takes exactly one width (embed_dim)");
  }
  if (arch.kind == ArchKind::conv_small) {
    const std::size_t factor = std::size_t{1} << arch.widths.size();
    if (arch.input.height % factor != 0 || arch.input.width % factor != 0) {
      throw ArgumentError("conv_small with " + std::to_string(arch.widths.size()) +
                          " blocks needs height and width divisible by " + std::to_string(factor));
    }
  }
}

nlohmann::json to_json(const Architecture& arch) {
  return {{"kind", arch_kind_name(arch.kind)},
          {"widths", arch.widths},
          {"activation", activation_name(arch.activation)},
          {"input", {arch.input.channels, arch.input.height, arch.input.width}}};
}

Architecture architecture_from_json(const nlohmann::json& j) {
  Architecture a;
  const auto kind = j.value("kind", std::string("conv_small"));
  if (kind == "conv_small") {
    a.kind = ArchKind::conv_small;
  } else if (kind == "mlp") {
    a.kind = ArchKind::mlp;
  } else if (kind == "linear") {
    a.kind = ArchKind::linear;
  } else {
    throw ArgumentError("unknown architecture kind '" + kind + "'");
  }
  if (j.contains("widths")) a.widths = j.at("widths").get<std::vector<std::size_t>>();
  const auto act = j.value("activation", std::string("relu"));
  if (act == "relu") {
    a.activation = Activation::relu;
  } else if (act == "tanh") {
    a.activation = Activation::tanh;
  } else {
    throw ArgumentError("unknown activation '" + act + "'");
  }
  if (j.contains("input")) {
    const auto in = j.at("input").get<std::vector<std::size_t>>();
    if (in.size() != 3) throw ArgumentError("architecture input must be [c,h,w]");
    a.input = {in[0], in[1], in[2]};
  }
  return a;
}

Network::Network(Shape sample_shape, std::vector<Layer> layers) : layers_(std::move(layers)) {
  shapes_.push_back(std::move(sample_shape));
  for (const auto& layer : layers_) {
    offsets_.push_back(num_params_);
    num_params_ += layer_param_count(layer);
    shapes_.push_back(layer_output_shape(layer, shapes_.back()));
  }
}

std::vector<double> Network::init_params(Rng& rng) const {
  std::vector<double> params(num_params_, 0.0);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const std::size_t off = offsets_[i];
    std::visit(overloaded{
                   [&](const Conv2d& c) {
                     const double fan_in = static_cast<double>(c.in_channels * c.kernel * c.kernel);
                     const double sd = c.init_gain * std::sqrt(2.0 / fan_in);
                     const std::size_t nw = c.out_channels * c.in_channels * c.kernel * c.kernel;
                     for (std::size_t k = 0; k < nw; ++k) params[off + k] = sd * rng.normal();
                   },
                   [&](const Dense& d) {
                     const double sd = d.init_gain * std::sqrt(2.0 / static_cast<double>(d.in));
                     for (std::size_t k = 0; k < d.out * d.in; ++k) {
                       params[off + k] = sd * rng.normal();
                     }
                   },
                   [](const auto&) {},
               },
               layers_[i]);
  }
  return params;
}

void Network::check_batch(const Tensor& batch) const {
  if (batch.rank() < 1 ||
      !std::equal(batch.shape().begin() + 1, batch.shape().end(), input_shape().begin(),
                  input_shape().end())) {
    throw ArgumentError("network expects batch of " + shape_to_string(input_shape()) + ", got " +
                        shape_to_string(batch.shape()));
  }
}

Tensor Network::forward(std::span<const double> params, const Tensor& batch, Tape* tape) const {
  check_batch(batch);
  if (params.size() != num_params_) {
    throw ArgumentError("network expects " + std::to_string(num_params_) + " parameters, got " +
                        std::to_string(params.size()));
  }
  const std::size_t n = batch.dim(0);
  if (tape) {
    tape->acts.clear();
    tape->acts.reserve(layers_.size() + 1);
  }
  Tensor x = batch;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Shape& in = shapes_[i];
    Tensor y(with_batch(n, shapes_[i + 1]));
    const double* p = params.data() + offsets_[i];
    std::visit(
        overloaded{
            [&](const Conv2d& c) {
              const auto d = conv_dims(c, n, in);
              const std::size_t nw = d.weight_size();
              kernels::conv2d_forward(d, x.values(), {p, nw}, {p + nw, c.out_channels},
                                      y.values());
            },
            [&](const Dense& dl) {
              const kernels::DenseDims d{n, dl.in, dl.out};
              kernels::dense_forward(d, x.values(), {p, dl.out * dl.in},
                                     {p + dl.out * dl.in, dl.out}, y.values());
            },
            [&](const Act& a) {
              if (a.kind == Activation::relu) {
                for (std::size_t k = 0; k < x.size(); ++k) y[k] = x[k] > 0.0 ? x[k] : 0.0;
              } else {
                for (std::size_t k = 0; k < x.size(); ++k) y[k] = std::tanh(x[k]);
              }
            },
            [&](const AvgPool2&) {
              const std::size_t c = in[0], h = in[1], w = in[2], oh = h / 2, ow = w / 2;
              for (std::size_t b = 0; b < n * c; ++b) {
                const double* src = x.data() + b * h * w;
                double* dst = y.data() + b * oh * ow;
                for (std::size_t yy = 0; yy < oh; ++yy) {
                  for (std::size_t xx = 0; xx < ow; ++xx) {
                    const double* s = src + 2 * yy * w + 2 * xx;
                    dst[yy * ow + xx] = 0.25 * (s[0] + s[1] + s[w] + s[w + 1]);
                  }
                }
              }
            },
            [&](const Upsample2&) {
              const std::size_t c = in[0], h = in[1], w = in[2], ow = 2 * w;
              for (std::size_t b = 0; b < n * c; ++b) {
                const double* src = x.data() + b * h * w;
                double* dst = y.data() + b * 4 * h * w;
                for (std::size_t yy = 0; yy < 2 * h; ++yy) {
                  for (std::size_t xx = 0; xx < ow; ++xx) {
                    dst[yy * ow + xx] = src[(yy / 2) * w + xx / 2];
                  }
                }
              }
            },
        },
        layers_[i]);
    if (tape) tape->acts.push_back(std::move(x));
    x = std::move(y);
  }
  if (tape) tape->acts.push_back(x);
  return x;
}

Tensor Network::backward(std::span<const double> params, const Tape& tape, const Tensor& grad_out,
                         std::span<double> grad_params, bool need_input_grad) const {
  if (tape.acts.size() != layers_.size() + 1) throw ArgumentError("tape does not match network");
  if (!grad_params.empty() && grad_params.size() != num_params_) {
    throw ArgumentError("gradient buffer has wrong length");
  }
  const bool want_params = !grad_params.empty();
  const std::size_t n = tape.acts.front().dim(0);
  if (grad_out.shape() != tape.acts.back().shape()) {
    throw ArgumentError("grad_out shape " + shape_to_string(grad_out.shape()) +
                        " does not match network output " +
                        shape_to_string(tape.acts.back().shape()));
  }
  Tensor g = grad_out;
  for (std::size_t ii = layers_.size(); ii-- > 0;) {
    const Shape& in = shapes_[ii];
    const Tensor& x = tape.acts[ii];
    const bool need_gin = ii > 0 || need_input_grad;
    // Nothing left to compute below this layer.
    if (!need_gin && !want_params) break;
    if (!need_gin) {
      bool any_params_below = false;
      for (std::size_t k = 0; k <= ii; ++k) any_params_below |= layer_param_count(layers_[k]) > 0;
      if (!any_params_below) break;
    }
    const double* p = params.data() + offsets_[ii];
    double* gp = want_params ? grad_params.data() + offsets_[ii] : nullptr;
    Tensor gin;
    if (need_gin) gin = Tensor(x.shape());
    std::visit(
        overloaded{
            [&](const Conv2d& c) {
              const auto d = conv_dims(c, n, in);
              const std::size_t nw = d.weight_size();
              if (gp) {
                kernels::conv2d_backward_params(d, x.values(), g.values(), {gp, nw},
                                                {gp + nw, c.out_channels});
              }
              if (need_gin) kernels::conv2d_backward_input(d, g.values(), {p, nw}, gin.values());
            },
            [&](const Dense& dl) {
              const kernels::DenseDims d{n, dl.in, dl.out};
              if (gp) {
                kernels::dense_backward_params(d, x.values(), g.values(), {gp, dl.out * dl.in},
                                               {gp + dl.out * dl.in, dl.out});
              }
              if (need_gin) {
                kernels::dense_backward_input(d, g.values(), {p, dl.out * dl.in}, gin.values());
              }
            },
            [&](const Act& a) {
              if (!need_gin) return;
              if (a.kind == Activation::relu) {
                for (std::size_t k = 0; k < x.size(); ++k) gin[k] = x[k] > 0.0 ? g[k] : 0.0;
              } else {
                const Tensor& y = tape.acts[ii + 1];
                for (std::size_t k = 0; k < x.size(); ++k) gin[k] = g[k] * (1.0 - y[k] * y[k]);
              }
            },
            [&](const AvgPool2&) {
              if (!need_gin) return;
              const std::size_t c = in[0], h = in[1], w = in[2], oh = h / 2, ow = w / 2;
              for (std::size_t b = 0; b < n * c; ++b) {
                const double* src = g.data() + b * oh * ow;
                double* dst = gin.data() + b * h * w;
                for (std::size_t yy = 0; yy < h; ++yy) {
                  for (std::size_t xx = 0; xx < w; ++xx) {
                    dst[yy * w + xx] = 0.25 * src[(yy / 2) * ow + xx / 2];
                  }
                }
              }
            },
            [&](const Upsample2&) {
              if (!need_gin) return;
              const std::size_t c = in[0], h = in[1], w = in[2], ow = 2 * w;
              for (std::size_t b = 0; b < n * c; ++b) {
                const double* src = g.data() + b * 4 * h * w;
                double* dst = gin.data() + b * h * w;
                for (std::size_t yy = 0; yy < h; ++yy) {
                  for (std::size_t xx = 0; xx < w; ++xx) {
                    const double* s = src + 2 * yy * ow + 2 * xx;
                    dst[yy * w + xx] = s[0] + s[1] + s[ow] + s[ow + 1];
                  }
                }
              }
            },
        },
        layers_[ii]);
    if (!need_gin) return {};
    g = std::move(gin);
  }
  if (!need_input_grad) return {};
  return g;
}

Network build_feature_network(const Architecture& arch) {
  validate(arch);
  std::vector<Layer> layers;
  const Shape in{arch.input.channels, arch.input.height, arch.input.width};
  switch (arch.kind) {
    case ArchKind::conv_small: {
      std::size_t c = arch.input.channels;
      for (auto w : arch.widths) {
        layers.emplace_back(Conv2d{c, w, 3, 1});
        layers.emplace_back(Act{arch.activation});
        layers.emplace_back(AvgPool2{});
        c = w;
      }
      break;
    }
    case ArchKind::mlp: {
      std::size_t prev = arch.input.numel();
      for (auto w : arch.widths) {
        layers.emplace_back(Dense{prev, w});
        layers.emplace_back(Act{arch.activation});
        prev = w;
      }
      break;
    }
    case ArchKind::linear:
      layers.emplace_back(Dense{arch.input.numel(), arch.widths[0], 1.0 / std::sqrt(2.0)});
      break;
  }
  return Network(in, std::move(layers));
}

std::size_t classifier_param_count(std::size_t embed_dim, int num_classes) {
  return static_cast<std::size_t>(num_classes) * embed_dim + static_cast<std::size_t>(num_classes);
}

std::vector<double> ModelBundle::flat_params() const {
  std::vector<double> flat = feature_params;
  flat.insert(flat.end(), classifier_params.begin(), classifier_params.end());
  return flat;
}

void ModelBundle::set_flat_params(std::span<const double> flat) {
  if (flat.size() != num_params()) throw ArgumentError("flat parameter vector has wrong length");
  std::copy_n(flat.begin(), feature_params.size(), feature_params.begin());
  std::copy(flat.begin() + static_cast<long>(feature_params.size()), flat.end(),
            classifier_params.begin());
}

ModelBundle make_model(const Architecture& arch, int num_classes, std::vector<double> feature_params,
                       std::vector<double> classifier_params) {
  if (num_classes < 1) throw ArgumentError("num_classes must be positive");
  ModelBundle m;
  m.arch = arch;
  m.num_classes = num_classes;
  m.features = build_feature_network(arch);
  m.embed_dim = m.features.output_size();
  if (feature_params.size() != m.features.num_params()) {
    throw ArgumentError("feature parameter vector has " + std::to_string(feature_params.size()) +
                        " entries, architecture needs " + std::to_string(m.features.num_params()));
  }
  if (classifier_params.size() != classifier_param_count(m.embed_dim, num_classes)) {
    throw ArgumentError("classifier parameter vector has wrong length");
  }
  m.feature_params = std::move(feature_params);
  m.classifier_params = std::move(classifier_params);
  return m;
}

ModelBundle init_model(const Architecture& arch, int num_classes, std::uint64_t seed) {
  if (num_classes < 1) throw ArgumentError("num_classes must be positive");
  const Network net = build_feature_network(arch);
  const Rng root(seed);
  Rng feat_rng = root.stream("features");
  std::vector<double> fp = net.init_params(feat_rng);
  const std::size_t e = net.output_size();
  std::vector<double> cp(classifier_param_count(e, num_classes), 0.0);
  Rng head_rng = root.stream("classifier");
  const double sd = std::sqrt(1.0 / static_cast<double>(e));
  for (std::size_t k = 0; k < static_cast<std::size_t>(num_classes) * e; ++k) {
    cp[k] = sd * head_rng.normal();
  }
  return make_model(arch, num_classes, std::move(fp), std::move(cp));
}

namespace {

kernels::DenseDims head_dims(const ModelBundle& m, std::size_t n) {
  return {n, m.embed_dim, static_cast<std::size_t>(m.num_classes)};
}

std::span<const double> head_weight(const ModelBundle& m) {
  return {m.classifier_params.data(), static_cast<std::size_t>(m.num_classes) * m.embed_dim};
}
std::span<const double> head_bias(const ModelBundle& m) {
  return {m.classifier_params.data() + static_cast<std::size_t>(m.num_classes) * m.embed_dim,
          static_cast<std::size_t>(m.num_classes)};
}

}  // namespace

Tensor forward_features(const ModelBundle& model, const Tensor& batch) {
  Tensor out = model.features.forward(model.feature_params, batch);
  out.reshape({batch.dim(0), model.embed_dim});
  return out;
}

Tensor classifier_head(const ModelBundle& model, const Tensor& embeddings) {
  if (embeddings.rank() != 2 || embeddings.dim(1) != model.embed_dim) {
    throw ArgumentError("classifier head expects [n, " + std::to_string(model.embed_dim) + "]");
  }
  const std::size_t n = embeddings.dim(0);
  Tensor logits({n, static_cast<std::size_t>(model.num_classes)});
  kernels::dense_forward(head_dims(model, n), embeddings.values(), head_weight(model),
                         head_bias(model), logits.values());
  return logits;
}

Tensor forward_logits(const ModelBundle& model, const Tensor& batch) {
  return classifier_head(model, forward_features(model, batch));
}

std::vector<std::int32_t> argmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw ArgumentError("argmax_rows expects a matrix");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<std::int32_t> out(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (logits[i * k + j] > logits[i * k + best]) best = j;
    }
    out[i] = static_cast<std::int32_t>(best);
  }
  return out;
}

std::vector<std::int32_t> predict(const ModelBundle& model, const Tensor& batch) {
  return argmax_rows(forward_logits(model, batch));
}

namespace {

double cross_entropy_impl(const Tensor& logits, std::span<const std::int32_t> labels,
                          Tensor* grad_logits) {
  if (logits.rank() != 2) throw ArgumentError("cross_entropy expects [n, k] logits");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) throw ArgumentError("cross_entropy: label count mismatch");
  if (n == 0) throw ArgumentError("cross_entropy on an empty batch");
  if (grad_logits) *grad_logits = Tensor(logits.shape());
  double total = 0.0;
  std::vector<double> p(k);
  for (std::size_t i = 0; i < n; ++i) {
    const auto label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= k) {
      throw ArgumentError("cross_entropy: label out of range");
    }
    const double* z = logits.data() + i * k;
    const double zmax = *std::max_element(z, z + k);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      p[j] = std::exp(z[j] - zmax);
      sum += p[j];
    }
    const double log_sum = std::log(sum) + zmax;
    total += log_sum - z[label];
    if (grad_logits) {
      double* g = grad_logits->data() + i * k;
      for (std::size_t j = 0; j < k; ++j) {
        g[j] = (p[j] / sum - (static_cast<std::int32_t>(j) == label ? 1.0 : 0.0)) /
               static_cast<double>(n);
      }
    }
  }
  return total / static_cast<double>(n);
}

}  // namespace

double cross_entropy(const Tensor& logits, std::span<const std::int32_t> labels) {
  return cross_entropy_impl(logits, labels, nullptr);
}

double cross_entropy_grad(const Tensor& logits, std::span<const std::int32_t> labels,
                          Tensor& grad_logits) {
  return cross_entropy_impl(logits, labels, &grad_logits);
}

double classification_backward(const ModelBundle& model, const Tensor& batch,
                               std::span<const std::int32_t> labels, ModelGrad* param_grad,
                               Tensor* input_grad) {
  Network::Tape tape;
  Tensor feats = model.features.forward(model.feature_params, batch, &tape);
  const std::size_t n = batch.dim(0);
  feats.reshape({n, model.embed_dim});
  const Tensor logits = classifier_head(model, feats);
  Tensor g_logits;
  const double loss = cross_entropy_grad(logits, labels, g_logits);

  const auto dims = head_dims(model, n);
  if (param_grad) {
    param_grad->features.resize(model.feature_params.size(), 0.0);
    param_grad->classifier.resize(model.classifier_params.size(), 0.0);
    const std::size_t nw = dims.out * dims.in;
    kernels::dense_backward_params(dims, feats.values(), g_logits.values(),
                                   {param_grad->classifier.data(), nw},
                                   {param_grad->classifier.data() + nw, dims.out});
  }
  Tensor g_feats({n, model.embed_dim});
  kernels::dense_backward_input(dims, g_logits.values(), head_weight(model), g_feats.values());
  g_feats.reshape(tape.acts.back().shape());
  std::span<double> gp;
  if (param_grad) gp = param_grad->features;
  Tensor gin = model.features.backward(model.feature_params, tape, g_feats, gp,
                                       input_grad != nullptr);
  if (input_grad) *input_grad = std::move(gin);
  return loss;
}

void check_finite(std::span<const double> values, const char* what) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value in ") + what);
  }
}

std::vector<double> grad(const Objective& objective, std::span<const double> params) {
  std::vector<double> g(params.size(), 0.0);
  const double value = objective(params, g);
  if (!std::isfinite(value)) throw NumericError("objective is not finite");
  check_finite(g, "gradient");
  return g;
}

Objective classifier_objective(ModelBundle model, Tensor batch, std::vector<std::int32_t> labels) {
  return [model = std::move(model), batch = std::move(batch), labels = std::move(labels)](
             std::span<const double> params, std::span<double> out) mutable {
    model.set_flat_params(params);
    ModelGrad mg;
    const double loss = classification_backward(model, batch, labels, &mg, nullptr);
    std::copy(mg.features.begin(), mg.features.end(), out.begin());
    std::copy(mg.classifier.begin(), mg.classifier.end(),
              out.begin() + static_cast<long>(mg.features.size()));
    return loss;
  };
}

void sgd_step(std::span<double> params, std::span<const double> grad, const SgdConfig& cfg,
              SgdState& state) {
  if (params.size() != grad.size()) throw ArgumentError("sgd_step: size mismatch");
  if (!(cfg.lr >= 0.0)) throw ArgumentError("sgd_step: learning rate must be >= 0");
  check_finite(params, "sgd parameters");
  check_finite(grad, "sgd gradient");
  if (state.velocity.empty()) state.velocity.assign(params.size(), 0.0);
  for (std::size_t i = 0; i < params.size(); ++i) {
    double g = grad[i];
    if (cfg.weight_decay != 0.0) g += cfg.weight_decay * params[i];
    double step = g;
    if (cfg.momentum != 0.0) {
      state.velocity[i] = cfg.momentum * state.velocity[i] + g;
      step = state.velocity[i];
    }
    params[i] -= cfg.lr * step;
  }
}

void adam_step(std::span<double> params, std::span<const double> grad, const AdamConfig& cfg,
               AdamState& state) {
  if (params.size() != grad.size()) throw ArgumentError("adam_step: size mismatch");
  if (!(cfg.lr >= 0.0)) throw ArgumentError("adam_step: learning rate must be >= 0");
  check_finite(params, "adam parameters");
  check_finite(grad, "adam gradient");
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grad[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

TrainResult train_classifier(const ModelBundle& init, const Tensor& images,
                             std::span<const std::int32_t> labels, const TrainConfig& cfg) {
  if (images.rank() == 0 || images.dim(0) == 0) {
    throw ArgumentError("train_classifier on an empty dataset");
  }
  if (labels.size() != images.dim(0)) throw ArgumentError("train_classifier: label count mismatch");
  if (cfg.batch_size == 0) throw ArgumentError("train_classifier: batch_size must be positive");
  TrainResult result{init, {}};
  if (cfg.epochs <= 0) return result;

  ModelBundle& model = result.model;
  std::vector<double> flat = model.flat_params();
  SgdState state;
  const std::size_t n = images.dim(0);
  const Rng root(cfg.seed);
  std::vector<std::size_t> order(n);
  std::vector<std::int32_t> batch_labels;
  std::vector<double> g(flat.size());

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle = root.stream("shuffle", static_cast<std::uint64_t>(epoch));
    shuffle.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, n - start);
      std::span<const std::size_t> idx(order.data() + start, count);
      const Tensor batch = gather_rows(images, idx);
      batch_labels.resize(count);
      for (std::size_t k = 0; k < count; ++k) batch_labels[k] = labels[idx[k]];
      ModelGrad mg;
      const double loss = classification_backward(model, batch, batch_labels, &mg, nullptr);
      if (!std::isfinite(loss)) throw NumericError("training loss is not finite");
      std::copy(mg.features.begin(), mg.features.end(), g.begin());
      std::copy(mg.classifier.begin(), mg.classifier.end(),
                g.begin() + static_cast<long>(mg.features.size()));
      sgd_step(flat, g, cfg.sgd, state);
      check_finite(flat, "model parameters");
      model.set_flat_params(flat);
      loss_sum += loss;
      ++batches;
    }
    result.epoch_losses.push_back(loss_sum / static_cast<double>(batches));
  }
  return result;
}

TrainResult train_classifier(const ModelBundle& init, const LabeledDataset& ds,
                             const TrainConfig& cfg) {
  if (ds.empty()) throw ArgumentError("train_classifier on an empty dataset");
  return train_classifier(init, ds.images(), ds.labels(), cfg);
}

Network build_generator_network(ImageShape shape, const GeneratorSpec& spec) {
  if (shape.height % 2 != 0 || shape.width % 2 != 0) {
    throw ArgumentError("trigger generator needs even image height and width");
  }
  if (spec.hidden == 0) throw ArgumentError("trigger generator hidden width must be positive");
  std::vector<Layer> layers{
      Conv2d{shape.channels, spec.hidden, 3, 1},
      Act{Activation::relu},
      AvgPool2{},
      Conv2d{spec.hidden, spec.hidden, 3, 1},
      Act{Activation::relu},
      Upsample2{},
      Conv2d{spec.hidden, shape.channels, 3, 1, spec.output_gain},
      Act{Activation::tanh},
  };
  return Network({shape.channels, shape.height, shape.width}, std::move(layers));
}

GeneratorNet init_generator(ImageShape shape, const GeneratorSpec& spec, std::uint64_t seed) {
  GeneratorNet gen;
  gen.shape = shape;
  gen.spec = spec;
  gen.net = build_generator_network(shape, spec);
  Rng rng = Rng(seed).stream("generator");
  gen.params = gen.net.init_params(rng);
  return gen;
}

Tensor generator_forward(const GeneratorNet& gen, const Tensor& batch, Network::Tape* tape) {
  return gen.net.forward(gen.params, batch, tape);
}

void save_model(const std::filesystem::path& path, const ModelBundle& model) {
  const nlohmann::json extra{{"kind", "model"},
                             {"architecture", to_json(model.arch)},
                             {"num_classes", model.num_classes},
                             {"embed_dim", model.embed_dim},
                             {"feature_param_count", model.feature_params.size()},
                             {"classifier_param_count", model.classifier_params.size()}};
  const auto flat = model.flat_params();
  io::write_real_tensor(path, {flat.size()}, flat, io::DType::f64, extra);
}

ModelBundle load_model(const std::filesystem::path& path) {
  io::TensorFile f = io::read_tensor(path);
  try {
    if (f.header.at("kind") != "model") throw FormatError(path.string() + ": not a model checkpoint");
    if (f.dtype == io::DType::i32) throw FormatError(path.string() + ": integer payload");
    const Architecture arch = architecture_from_json(f.header.at("architecture"));
    const int k = f.header.at("num_classes").get<int>();
    const auto nf = f.header.at("feature_param_count").get<std::size_t>();
    if (nf > f.reals.size()) throw FormatError(path.string() + ": parameter counts disagree");
    std::vector<double> fp(f.reals.begin(), f.reals.begin() + static_cast<long>(nf));
    std::vector<double> cp(f.reals.begin() + static_cast<long>(nf), f.reals.end());
    return make_model(arch, k, std::move(fp), std::move(cp));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  } catch (const ArgumentError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void save_generator(const std::filesystem::path& path, const GeneratorNet& gen) {
  const nlohmann::json extra{{"kind", "generator"},
                             {"image_shape", {gen.shape.channels, gen.shape.height, gen.shape.width}},
                             {"hidden", gen.spec.hidden},
                             {"output_gain", gen.spec.output_gain}};
  io::write_real_tensor(path, {gen.params.size()}, gen.params, io::DType::f64, extra);
}

GeneratorNet load_generator(const std::filesystem::path& path) {
  io::TensorFile f = io::read_tensor(path);
  try {
    if (f.header.at("kind") != "generator") {
      throw FormatError(path.string() + ": not a generator checkpoint");
    }
    const auto s = f.header.at("image_shape").get<std::vector<std::size_t>>();
    if (s.size() != 3) throw FormatError(path.string() + ": bad image_shape");
    GeneratorNet gen;
    gen.shape = {s[0], s[1], s[2]};
    gen.spec.hidden = f.header.at("hidden").get<std::size_t>();
    gen.spec.output_gain = f.header.at("output_gain").get<double>();
    gen.net = build_generator_network(gen.shape, gen.spec);
    if (f.reals.size() != gen.net.num_params()) {
      throw FormatError(path.string() + ": generator parameter count mismatch");
    }
    gen.params = std::move(f.reals);
    return gen;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  } catch (const ArgumentError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace sneakdoor::nn
