#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "sneakdoor/tensor.hpp"

namespace sneakdoor {

struct ImageShape {
  std::size_t channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;

  std::size_t numel() const { return channels * height * width; }
  bool operator==(const ImageShape&) const = default;
};

// Labeled images in [0,1], NCHW. class_index[c] lists the positions of
// class c in storage order.
class LabeledDataset {
 public:
  LabeledDataset() = default;
  // Validates labels and pixel range, builds the class index.
  LabeledDataset(Tensor images, std::vector<std::int32_t> labels, int num_classes);

  const Tensor& images() const { return images_; }
  const std::vector<std::int32_t>& labels() const { return labels_; }
  int num_classes() const { return num_classes_; }
  std::size_t size() const { return labels_.size(); }
  bool empty() const { return labels_.empty(); }
  ImageShape image_shape() const;
  const std::vector<std::vector<std::size_t>>& class_index() const { return class_index_; }
  std::size_t class_size(int c) const { return class_index_.at(static_cast<std::size_t>(c)).size(); }

  // Samples of class c in storage order, with the same num_classes.
  LabeledDataset class_slice(int c) const;
  LabeledDataset subset(std::span<const std::size_t> positions) const;

  bool operator==(const LabeledDataset& other) const;

 private:
  Tensor images_;
  std::vector<std::int32_t> labels_;
  int num_classes_ = 0;
  std::vector<std::vector<std::size_t>> class_index_;
};

// Union of two datasets with equal image shape and class count; a's samples first.
LabeledDataset concat(const LabeledDataset& a, const LabeledDataset& b);

struct BlobSpec {
  int num_classes = 4;
  int per_class = 50;
  ImageShape shape{1, 16, 16};
  double spread = 0.05;
  // Side length of the coarse random grid the class templates are upsampled
  // from; smaller means smoother templates.
  std::size_t template_grid = 4;
  // Template pixel range before noise.
  double template_low = 0.15;
  double template_high = 0.85;
  std::uint64_t seed = 0;
};

// Per-class smooth random template plus i.i.d. Gaussian noise of scale
// `spread`, clipped to [0,1] and rounded to float precision so the f32
// tensor format stores it exactly. Samples are interleaved by class.
LabeledDataset generate_blobs(const BlobSpec& spec);
LabeledDataset generate_blobs(int num_classes, int per_class, ImageShape shape, double spread,
                              std::uint64_t seed);

// Stratified split: each class contributes round(train_fraction * n_c)
// samples to the first part, clamped so both parts keep one sample.
std::pair<LabeledDataset, LabeledDataset> split(const LabeledDataset& ds, double train_fraction,
                                                std::uint64_t seed);

struct DatasetManifest {
  std::string name;
  int num_classes = 0;
  ImageShape shape;
  std::size_t count = 0;
  std::uint64_t seed = 0;
  std::string tensor_file;  // relative to the manifest directory
  std::string label_file;   // relative to the manifest directory
};

// Writes <stem>.json (manifest), <stem>.images.tns (f32) and
// <stem>.labels.tns (i32) next to each other.
DatasetManifest save_dataset(const LabeledDataset& ds, const std::filesystem::path& manifest_path,
                             const std::string& name = "dataset", std::uint64_t seed = 0);
LabeledDataset load_dataset(const std::filesystem::path& manifest_path);
DatasetManifest read_manifest(const std::filesystem::path& manifest_path);

}  // namespace sneakdoor
