#pragma once

#include <cstddef>
#include <span>

// Dense-numerics hot loops, in two variants with identical signatures:
//   reference::  plain serial loops, the readable definition used by tests;
//   omp::        OpenMP work-sharing versions.
// The omp variants assign each output element to exactly one thread and keep
// the reference summation order per element, so their results are bitwise
// equal to reference:: for any thread count.
// The unqualified kernels:: entry points forward to omp:: when the library is
// built with OpenMP and to reference:: otherwise.

namespace sneakdoor::kernels {

// Stride-1 square convolution with symmetric zero padding, NCHW.
struct ConvDims {
  std::size_t batch = 0;
  std::size_t in_channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
  std::size_t pad = 1;

  std::size_t out_height() const { return height + 2 * pad - kernel + 1; }
  std::size_t out_width() const { return width + 2 * pad - kernel + 1; }
  std::size_t weight_size() const { return out_channels * in_channels * kernel * kernel; }
  std::size_t in_size() const { return batch * in_channels * height * width; }
  std::size_t out_size() const { return batch * out_channels * out_height() * out_width(); }
};

// y = x W^T + b with x [batch, in], W [out, in].
struct DenseDims {
  std::size_t batch = 0;
  std::size_t in = 0;
  std::size_t out = 0;
};

#define SNEAKDOOR_KERNEL_DECLS                                                                  \
  void conv2d_forward(const ConvDims& d, std::span<const double> in,                            \
                      std::span<const double> weight, std::span<const double> bias,             \
                      std::span<double> out);                                                   \
  /* grad_in is overwritten */                                                                  \
  void conv2d_backward_input(const ConvDims& d, std::span<const double> grad_out,               \
                             std::span<const double> weight, std::span<double> grad_in);        \
  /* grad_weight and grad_bias are accumulated into */                                          \
  void conv2d_backward_params(const ConvDims& d, std::span<const double> in,                    \
                              std::span<const double> grad_out, std::span<double> grad_weight,  \
                              std::span<double> grad_bias);                                     \
  void dense_forward(const DenseDims& d, std::span<const double> in,                            \
                     std::span<const double> weight, std::span<const double> bias,              \
                     std::span<double> out);                                                    \
  void dense_backward_input(const DenseDims& d, std::span<const double> grad_out,               \
                            std::span<const double> weight, std::span<double> grad_in);         \
  void dense_backward_params(const DenseDims& d, std::span<const double> in,                    \
                             std::span<const double> grad_out, std::span<double> grad_weight,   \
                             std::span<double> grad_bias);                                      \
  /* out[i] = min_j ||queries[i] - refs[j]||_2, rows of length dim */                           \
  void nearest_distances(std::span<const double> queries, std::span<const double> refs,         \
                         std::size_t dim, std::span<double> out);

namespace reference {
SNEAKDOOR_KERNEL_DECLS
}

namespace omp {
SNEAKDOOR_KERNEL_DECLS
}

SNEAKDOOR_KERNEL_DECLS

#undef SNEAKDOOR_KERNEL_DECLS

// True when the omp:: variants were compiled with OpenMP enabled.
bool openmp_enabled();
int max_threads();

}  // namespace sneakdoor::kernels
