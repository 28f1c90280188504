#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <variant>
#include <vector>

#include <json.hpp>

#include "sneakdoor/datasets.hpp"
#include "sneakdoor/rng.hpp"
#include "sneakdoor/tensor.hpp"

namespace sneakdoor::nn {

enum class ArchKind { conv_small, mlp, linear };
enum class Activation { relu, tanh };

// Feature-extractor descriptor.
//   conv_small: one block per entry of `widths` (3x3 conv, activation, 2x2
//               average pool), flattened; embed_dim = widths.back() * h' * w'.
//   mlp:        one dense layer + activation per entry of `widths`.
//   linear:     a single dense layer, widths = {embed_dim}, no activation.
struct Architecture {
  ArchKind kind = ArchKind::conv_small;
  std::vector<std::size_t> widths{8, 16};
  Activation activation = Activation::relu;
  ImageShape input{1, 16, 16};

  bool operator==(const Architecture&) const = default;
};

void validate(const Architecture& arch);
nlohmann::json to_json(const Architecture& arch);
Architecture architecture_from_json(const nlohmann::json& j);

struct Conv2d {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel = 3;
  std::size_t pad = 1;
  double init_gain = 1.0;  // multiplies the Kaiming standard deviation
};
struct Dense {
  std::size_t in = 1;
  std::size_t out = 1;
  double init_gain = 1.0;
};
struct Act {
  Activation kind = Activation::relu;
};
struct AvgPool2 {};
struct Upsample2 {};  // nearest-neighbour, factor 2

using Layer = std::variant<Conv2d, Dense, Act, AvgPool2, Upsample2>;

// A fixed stack of layers over a flat parameter vector. Dense layers flatten
// whatever per-sample shape they receive.
class Network {
 public:
  struct Tape {
    std::vector<Tensor> acts;  // acts[i] is the input of layer i; acts.back() the output
  };

  Network() = default;
  Network(Shape sample_shape, std::vector<Layer> layers);

  std::size_t num_params() const { return num_params_; }
  const Shape& input_shape() const { return shapes_.front(); }
  const Shape& output_shape() const { return shapes_.back(); }
  std::size_t output_size() const { return shape_numel(shapes_.back()); }
  const std::vector<Layer>& layers() const { return layers_; }

  // Kaiming-scaled Gaussian weights (std = gain * sqrt(2 / fan_in)), zero biases.
  std::vector<double> init_params(Rng& rng) const;

  Tensor forward(std::span<const double> params, const Tensor& batch, Tape* tape = nullptr) const;

  // Backpropagates grad_out (shape of the forward output). Parameter
  // gradients are accumulated into grad_params unless it is empty. Returns
  // the input gradient when need_input_grad, otherwise an empty tensor.
  // Activation derivatives: relu'(0) = 0.
  Tensor backward(std::span<const double> params, const Tape& tape, const Tensor& grad_out,
                  std::span<double> grad_params, bool need_input_grad) const;

 private:
  void check_batch(const Tensor& batch) const;

  std::vector<Layer> layers_;
  std::vector<Shape> shapes_;          // per-sample shape entering layer i (size layers+1)
  std::vector<std::size_t> offsets_;   // parameter offset of layer i
  std::size_t num_params_ = 0;
};

Network build_feature_network(const Architecture& arch);

// theta_f (feature extractor) and theta_c (linear head over embeddings).
struct ModelBundle {
  Architecture arch;
  int num_classes = 0;
  std::size_t embed_dim = 0;
  Network features;
  std::vector<double> feature_params;
  std::vector<double> classifier_params;  // W [num_classes x embed_dim] row-major, then b [num_classes]

  std::size_t num_params() const { return feature_params.size() + classifier_params.size(); }
  std::vector<double> flat_params() const;
  void set_flat_params(std::span<const double> flat);

  bool operator==(const ModelBundle& o) const {
    return arch == o.arch && num_classes == o.num_classes &&
           feature_params == o.feature_params && classifier_params == o.classifier_params;
  }
};

std::size_t classifier_param_count(std::size_t embed_dim, int num_classes);

ModelBundle init_model(const Architecture& arch, int num_classes, std::uint64_t seed);
// Bundle with explicit parameters; lengths must match the descriptor.
ModelBundle make_model(const Architecture& arch, int num_classes, std::vector<double> feature_params,
                       std::vector<double> classifier_params);

Tensor forward_features(const ModelBundle& model, const Tensor& batch);
Tensor classifier_head(const ModelBundle& model, const Tensor& embeddings);
Tensor forward_logits(const ModelBundle& model, const Tensor& batch);
// Row-wise argmax, lowest index on exact ties.
std::vector<std::int32_t> argmax_rows(const Tensor& logits);
std::vector<std::int32_t> predict(const ModelBundle& model, const Tensor& batch);

// Mean over the batch of -log softmax(logits)[label].
double cross_entropy(const Tensor& logits, std::span<const std::int32_t> labels);
// Same value; writes d loss / d logits into grad_logits.
double cross_entropy_grad(const Tensor& logits, std::span<const std::int32_t> labels,
                          Tensor& grad_logits);

struct ModelGrad {
  std::vector<double> features;
  std::vector<double> classifier;
};

// Cross-entropy of the model on (batch, labels). Parameter gradients are
// accumulated into *param_grad when given (vectors sized on first use); the
// gradient w.r.t. the input batch is written to *input_grad when given.
double classification_backward(const ModelBundle& model, const Tensor& batch,
                               std::span<const std::int32_t> labels, ModelGrad* param_grad,
                               Tensor* input_grad);

// A scalar function of a flat parameter vector that also writes its gradient.
using Objective = std::function<double(std::span<const double> params, std::span<double> grad)>;

// Gradient of `objective` at `params`; NumericError on a non-finite loss or gradient.
std::vector<double> grad(const Objective& objective, std::span<const double> params);

// Cross-entropy over the flat [feature_params, classifier_params] vector.
Objective classifier_objective(ModelBundle model, Tensor batch, std::vector<std::int32_t> labels);

struct SgdConfig {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
};
struct SgdState {
  std::vector<double> velocity;
};
// v = momentum * v + (g + wd * p); p -= lr * v.
void sgd_step(std::span<double> params, std::span<const double> grad, const SgdConfig& cfg,
              SgdState& state);

struct AdamConfig {
  double lr = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};
struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;
};
void adam_step(std::span<double> params, std::span<const double> grad, const AdamConfig& cfg,
               AdamState& state);

struct TrainConfig {
  int epochs = 50;
  std::size_t batch_size = 256;
  SgdConfig sgd{};
  std::uint64_t seed = 0;
};

struct TrainResult {
  ModelBundle model;
  std::vector<double> epoch_losses;  // mean minibatch loss per epoch
};

TrainResult train_classifier(const ModelBundle& init, const Tensor& images,
                             std::span<const std::int32_t> labels, const TrainConfig& cfg);
TrainResult train_classifier(const ModelBundle& init, const LabeledDataset& ds,
                             const TrainConfig& cfg);

// Input-aware trigger generator G_phi: conv(c->h), act, pool, conv(h->h), act,
// upsample, conv(h->c), tanh. Output has the input's shape, values in [-1,1].
struct GeneratorSpec {
  std::size_t hidden = 8;
  double output_gain = 1.0;  // init gain of the output convolution

  bool operator==(const GeneratorSpec&) const = default;
};

struct GeneratorNet {
  ImageShape shape;
  GeneratorSpec spec;
  Network net;
  std::vector<double> params;

  bool operator==(const GeneratorNet& o) const {
    return shape == o.shape && spec == o.spec && params == o.params;
  }
};

Network build_generator_network(ImageShape shape, const GeneratorSpec& spec);
GeneratorNet init_generator(ImageShape shape, const GeneratorSpec& spec, std::uint64_t seed);
// Raw generator output G_phi(x) in [-1, 1].
Tensor generator_forward(const GeneratorNet& gen, const Tensor& batch,
                         Network::Tape* tape = nullptr);

void check_finite(std::span<const double> values, const char* what);

// Checkpoints use the shared tensor framing with an f64 payload
// [feature_params..., classifier_params...] (or generator params) and the
// architecture descriptor in the header.
void save_model(const std::filesystem::path& path, const ModelBundle& model);
ModelBundle load_model(const std::filesystem::path& path);
void save_generator(const std::filesystem::path& path, const GeneratorNet& gen);
GeneratorNet load_generator(const std::filesystem::path& path);

}  // namespace sneakdoor::nn
