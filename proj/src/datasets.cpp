#include "sneakdoor/datasets.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "sneakdoor/errors.hpp"
#include "sneakdoor/rng.hpp"
#include "sneakdoor/tensor_io.hpp"

namespace sneakdoor {

LabeledDataset::LabeledDataset(Tensor images, std::vector<std::int32_t> labels, int num_classes)
    : images_(std::move(images)), labels_(std::move(labels)), num_classes_(num_classes) {
  if (num_classes_ < 1) throw ArgumentError("num_classes must be positive");
  if (images_.rank() != 4) {
    throw ArgumentError("dataset images must be [count, c, h, w], got " +
                        shape_to_string(images_.shape()));
  }
  if (images_.dim(0) != labels_.size()) {
    throw ArgumentError("image count " + std::to_string(images_.dim(0)) + " != label count " +
                        std::to_string(labels_.size()));
  }
  for (double v : images_.values()) {
    if (!(v >= 0.0 && v <= 1.0)) throw ArgumentError("pixel value outside [0,1]");
  }
  class_index_.assign(static_cast<std::size_t>(num_classes_), {});
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    const auto l = labels_[i];
    if (l < 0 || l >= num_classes_) {
      throw ArgumentError("label " + std::to_string(l) + " outside [0, " +
                          std::to_string(num_classes_) + ")");
    }
    class_index_[static_cast<std::size_t>(l)].push_back(i);
  }
}

ImageShape LabeledDataset::image_shape() const {
  if (images_.rank() != 4) return {};
  return {images_.dim(1), images_.dim(2), images_.dim(3)};
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> positions) const {
  std::vector<std::int32_t> labels;
  labels.reserve(positions.size());
  for (auto p : positions) labels.push_back(labels_.at(p));
  Tensor imgs = gather_rows(images_, positions);
  if (positions.empty()) {
    imgs = Tensor({0, images_.dim(1), images_.dim(2), images_.dim(3)});
  }
  return LabeledDataset(std::move(imgs), std::move(labels), num_classes_);
}

LabeledDataset LabeledDataset::class_slice(int c) const {
  return subset(class_index_.at(static_cast<std::size_t>(c)));
}

bool LabeledDataset::operator==(const LabeledDataset& other) const {
  return num_classes_ == other.num_classes_ && labels_ == other.labels_ &&
         bitwise_equal(images_, other.images_);
}

LabeledDataset concat(const LabeledDataset& a, const LabeledDataset& b) {
  if (a.num_classes() != b.num_classes()) throw ArgumentError("concat: class counts differ");
  if (a.image_shape() != b.image_shape()) throw ArgumentError("concat: image shapes differ");
  std::vector<std::int32_t> labels = a.labels();
  labels.insert(labels.end(), b.labels().begin(), b.labels().end());
  return LabeledDataset(concat_rows(a.images(), b.images()), std::move(labels), a.num_classes());
}

namespace {

// Bilinear (align-corners) upsampling of a g x g grid to h x w.
double sample_grid(const std::vector<double>& grid, std::size_t g, double y, double x) {
  const auto y0 = static_cast<std::size_t>(std::floor(y));
  const auto x0 = static_cast<std::size_t>(std::floor(x));
  const std::size_t y1 = std::min(y0 + 1, g - 1);
  const std::size_t x1 = std::min(x0 + 1, g - 1);
  const double fy = y - static_cast<double>(y0);
  const double fx = x - static_cast<double>(x0);
  const double top = grid[y0 * g + x0] * (1 - fx) + grid[y0 * g + x1] * fx;
  const double bottom = grid[y1 * g + x0] * (1 - fx) + grid[y1 * g + x1] * fx;
  return top * (1 - fy) + bottom * fy;
}

}  // namespace

LabeledDataset generate_blobs(const BlobSpec& spec) {
  if (spec.num_classes < 2) throw ArgumentError("generate_blobs needs at least 2 classes");
  if (spec.per_class < 1) throw ArgumentError("generate_blobs needs per_class >= 1");
  if (!(spec.spread > 0.0)) throw ArgumentError("generate_blobs needs spread > 0");
  if (spec.shape.channels == 0 || spec.shape.height == 0 || spec.shape.width == 0) {
    throw ArgumentError("generate_blobs: empty image shape");
  }
  if (spec.template_grid < 2) throw ArgumentError("template_grid must be >= 2");
  if (!(spec.template_low >= 0.0 && spec.template_low <= spec.template_high &&
        spec.template_high <= 1.0)) {
    throw ArgumentError("template range must satisfy 0 <= low <= high <= 1");
  }

  const auto [c, h, w] = spec.shape;
  const std::size_t g = spec.template_grid;
  const std::size_t pixels = spec.shape.numel();
  const Rng root(spec.seed);

  std::vector<std::vector<double>> templates(static_cast<std::size_t>(spec.num_classes));
  for (int k = 0; k < spec.num_classes; ++k) {
    Rng rng = root.stream("template", static_cast<std::uint64_t>(k));
    auto& t = templates[static_cast<std::size_t>(k)];
    t.resize(pixels);
    for (std::size_t ch = 0; ch < c; ++ch) {
      std::vector<double> grid(g * g);
      for (auto& v : grid) v = rng.uniform(spec.template_low, spec.template_high);
      for (std::size_t y = 0; y < h; ++y) {
        const double gy = h == 1 ? 0.0 : static_cast<double>(y) * (g - 1) / (h - 1);
        for (std::size_t x = 0; x < w; ++x) {
          const double gx = w == 1 ? 0.0 : static_cast<double>(x) * (g - 1) / (w - 1);
          t[(ch * h + y) * w + x] = sample_grid(grid, g, gy, gx);
        }
      }
    }
  }

  const std::size_t count =
      static_cast<std::size_t>(spec.num_classes) * static_cast<std::size_t>(spec.per_class);
  Tensor images({count, c, h, w});
  std::vector<std::int32_t> labels(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto k = static_cast<std::int32_t>(i % static_cast<std::size_t>(spec.num_classes));
    labels[i] = k;
    Rng noise = root.stream("noise", i);
    const auto& t = templates[static_cast<std::size_t>(k)];
    auto row = images.row(i);
    for (std::size_t p = 0; p < pixels; ++p) {
      const double v = std::clamp(t[p] + spec.spread * noise.normal(), 0.0, 1.0);
      row[p] = static_cast<double>(static_cast<float>(v));
    }
  }
  return LabeledDataset(std::move(images), std::move(labels), spec.num_classes);
}

LabeledDataset generate_blobs(int num_classes, int per_class, ImageShape shape, double spread,
                              std::uint64_t seed) {
  BlobSpec spec;
  spec.num_classes = num_classes;
  spec.per_class = per_class;
  spec.shape = shape;
  spec.spread = spread;
  spec.seed = seed;
  return generate_blobs(spec);
}

std::pair<LabeledDataset, LabeledDataset> split(const LabeledDataset& ds, double train_fraction,
                                                std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ArgumentError("train_fraction must lie in (0, 1)");
  }
  const Rng root(seed);
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  for (int c = 0; c < ds.num_classes(); ++c) {
    std::vector<std::size_t> positions = ds.class_index()[static_cast<std::size_t>(c)];
    const std::size_t n = positions.size();
    if (n == 0) continue;
    if (n < 2) {
      throw SplitError("class " + std::to_string(c) + " has " + std::to_string(n) +
                       " sample(s); stratified split needs at least 2");
    }
    Rng rng = root.stream("split", static_cast<std::uint64_t>(c));
    rng.shuffle(std::span<std::size_t>(positions));
    auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
    n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
    train.insert(train.end(), positions.begin(), positions.begin() + static_cast<long>(n_train));
    test.insert(test.end(), positions.begin() + static_cast<long>(n_train), positions.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {ds.subset(train), ds.subset(test)};
}

namespace {

nlohmann::json manifest_json(const DatasetManifest& m) {
  return {{"name", m.name},
          {"num_classes", m.num_classes},
          {"shape", {m.shape.channels, m.shape.height, m.shape.width}},
          {"count", m.count},
          {"seed", m.seed},
          {"tensor_file", m.tensor_file},
          {"label_file", m.label_file}};
}

}  // namespace

DatasetManifest save_dataset(const LabeledDataset& ds, const std::filesystem::path& manifest_path,
                             const std::string& name, std::uint64_t seed) {
  const auto dir = manifest_path.parent_path();
  const std::string stem = manifest_path.stem().string();
  DatasetManifest m;
  m.name = name;
  m.num_classes = ds.num_classes();
  m.shape = ds.image_shape();
  m.count = ds.size();
  m.seed = seed;
  m.tensor_file = stem + ".images.tns";
  m.label_file = stem + ".labels.tns";
  io::write_real_tensor(dir / m.tensor_file, ds.images().shape(), ds.images().values(),
                        io::DType::f32);
  io::write_int_tensor(dir / m.label_file, {ds.size()}, ds.labels(),
                       {{"num_classes", ds.num_classes()}});
  io::write_json(manifest_path, manifest_json(m));
  return m;
}

DatasetManifest read_manifest(const std::filesystem::path& manifest_path) {
  const auto j = io::read_json(manifest_path);
  DatasetManifest m;
  try {
    m.name = j.at("name").get<std::string>();
    m.num_classes = j.at("num_classes").get<int>();
    const auto shape = j.at("shape").get<std::vector<std::size_t>>();
    if (shape.size() != 3) throw FormatError("manifest shape must have 3 entries");
    m.shape = {shape[0], shape[1], shape[2]};
    m.count = j.at("count").get<std::size_t>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.tensor_file = j.at("tensor_file").get<std::string>();
    m.label_file = j.value("label_file", std::filesystem::path(m.tensor_file).stem().string() +
                                             ".labels.tns");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
  return m;
}

LabeledDataset load_dataset(const std::filesystem::path& manifest_path) {
  const DatasetManifest m = read_manifest(manifest_path);
  const auto dir = manifest_path.parent_path();
  io::TensorFile images = io::read_tensor(dir / m.tensor_file);
  io::TensorFile labels = io::read_tensor(dir / m.label_file);
  if (images.dtype == io::DType::i32) throw FormatError("image tensor must be real-valued");
  if (labels.dtype != io::DType::i32) throw FormatError("label tensor must be i32");
  const Shape expected{m.count, m.shape.channels, m.shape.height, m.shape.width};
  if (images.shape != expected) {
    throw FormatError("image tensor shape " + shape_to_string(images.shape) +
                      " disagrees with manifest " + shape_to_string(expected));
  }
  if (labels.shape != Shape{m.count}) throw FormatError("label count disagrees with manifest");
  try {
    return LabeledDataset(Tensor(images.shape, std::move(images.reals)), std::move(labels.ints),
                          m.num_classes);
  } catch (const ArgumentError& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
}

}  // namespace sneakdoor
