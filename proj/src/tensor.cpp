#include "sneakdoor/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace sneakdoor {

std::string shape_to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

void Tensor::reshape(Shape shape) {
  if (shape_numel(shape) != data_.size()) {
    throw ArgumentError("cannot reshape " + shape_to_string(shape_) + " to " +
                        shape_to_string(shape));
  }
  shape_ = std::move(shape);
}

Tensor gather_rows(const Tensor& batch, std::span<const std::size_t> indices) {
  if (batch.rank() == 0) throw ArgumentError("gather_rows on a scalar tensor");
  Shape shape = batch.shape();
  const std::size_t row = shape_numel(Shape(shape.begin() + 1, shape.end()));
  shape[0] = indices.size();
  Tensor out(shape);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= batch.dim(0)) throw ArgumentError("gather_rows index out of range");
    std::copy_n(batch.data() + indices[i] * row, row, out.data() + i * row);
  }
  return out;
}

Tensor slice_rows(const Tensor& batch, std::size_t begin, std::size_t count) {
  if (batch.rank() == 0 || begin + count > batch.dim(0)) {
    throw ArgumentError("slice_rows range out of bounds");
  }
  Shape shape = batch.shape();
  const std::size_t row = shape_numel(Shape(shape.begin() + 1, shape.end()));
  shape[0] = count;
  std::vector<double> data(batch.data() + begin * row, batch.data() + (begin + count) * row);
  return Tensor(shape, std::move(data));
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  if (a.rank() == 0) return b;
  if (b.rank() == 0) return a;
  if (a.rank() != b.rank() || !std::equal(a.shape().begin() + 1, a.shape().end(),
                                          b.shape().begin() + 1)) {
    throw ArgumentError("concat_rows: trailing shapes differ: " + shape_to_string(a.shape()) +
                        " vs " + shape_to_string(b.shape()));
  }
  Shape shape = a.shape();
  shape[0] += b.dim(0);
  std::vector<double> data;
  data.reserve(a.size() + b.size());
  data.insert(data.end(), a.storage().begin(), a.storage().end());
  data.insert(data.end(), b.storage().begin(), b.storage().end());
  return Tensor(shape, std::move(data));
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ArgumentError("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace sneakdoor
