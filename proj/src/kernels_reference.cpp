// Straightforward serial definitions of the kernels, kept as the test oracle
// for the OpenMP variants.

#include <cmath>
#include <limits>

#include "sneakdoor/kernels.hpp"

namespace sneakdoor::kernels::reference {

namespace {

struct Nchw {
  std::size_t c, h, w;
  std::size_t operator()(std::size_t n, std::size_t ci, std::size_t y, std::size_t x) const {
    return ((n * c + ci) * h + y) * w + x;
  }
};

bool inside(std::ptrdiff_t v, std::size_t limit) {
  return v >= 0 && v < static_cast<std::ptrdiff_t>(limit);
}

}  // namespace

void conv2d_forward(const ConvDims& d, std::span<const double> in, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> out) {
  const Nchw src{d.in_channels, d.height, d.width};
  const Nchw dst{d.out_channels, d.out_height(), d.out_width()};
  const Nchw wgt{d.in_channels, d.kernel, d.kernel};
  for (std::size_t n = 0; n < d.batch; ++n)
    for (std::size_t o = 0; o < d.out_channels; ++o)
      for (std::size_t y = 0; y < d.out_height(); ++y)
        for (std::size_t x = 0; x < d.out_width(); ++x) {
          double acc = bias[o];
          for (std::size_t c = 0; c < d.in_channels; ++c)
            for (std::size_t ky = 0; ky < d.kernel; ++ky)
              for (std::size_t kx = 0; kx < d.kernel; ++kx) {
                const auto iy = static_cast<std::ptrdiff_t>(y + ky) - static_cast<std::ptrdiff_t>(d.pad);
                const auto ix = static_cast<std::ptrdiff_t>(x + kx) - static_cast<std::ptrdiff_t>(d.pad);
                if (!inside(iy, d.height) || !inside(ix, d.width)) continue;
                acc += weight[wgt(o, c, ky, kx)] *
                       in[src(n, c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix))];
              }
          out[dst(n, o, y, x)] = acc;
        }
}

void conv2d_backward_input(const ConvDims& d, std::span<const double> grad_out,
                           std::span<const double> weight, std::span<double> grad_in) {
  const Nchw src{d.in_channels, d.height, d.width};
  const Nchw dst{d.out_channels, d.out_height(), d.out_width()};
  const Nchw wgt{d.in_channels, d.kernel, d.kernel};
  for (auto& g : grad_in) g = 0.0;
  for (std::size_t n = 0; n < d.batch; ++n)
    for (std::size_t o = 0; o < d.out_channels; ++o)
      for (std::size_t y = 0; y < d.out_height(); ++y)
        for (std::size_t x = 0; x < d.out_width(); ++x)
          for (std::size_t c = 0; c < d.in_channels; ++c)
            for (std::size_t ky = 0; ky < d.kernel; ++ky)
              for (std::size_t kx = 0; kx < d.kernel; ++kx) {
                const auto iy = static_cast<std::ptrdiff_t>(y + ky) - static_cast<std::ptrdiff_t>(d.pad);
                const auto ix = static_cast<std::ptrdiff_t>(x + kx) - static_cast<std::ptrdiff_t>(d.pad);
                if (!inside(iy, d.height) || !inside(ix, d.width)) continue;
                grad_in[src(n, c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix))] +=
                    weight[wgt(o, c, ky, kx)] * grad_out[dst(n, o, y, x)];
              }
}

void conv2d_backward_params(const ConvDims& d, std::span<const double> in,
                            std::span<const double> grad_out, std::span<double> grad_weight,
                            std::span<double> grad_bias) {
  const Nchw src{d.in_channels, d.height, d.width};
  const Nchw dst{d.out_channels, d.out_height(), d.out_width()};
  const Nchw wgt{d.in_channels, d.kernel, d.kernel};
  for (std::size_t n = 0; n < d.batch; ++n)
    for (std::size_t o = 0; o < d.out_channels; ++o)
      for (std::size_t y = 0; y < d.out_height(); ++y)
        for (std::size_t x = 0; x < d.out_width(); ++x) {
          const double g = grad_out[dst(n, o, y, x)];
          grad_bias[o] += g;
          for (std::size_t c = 0; c < d.in_channels; ++c)
            for (std::size_t ky = 0; ky < d.kernel; ++ky)
              for (std::size_t kx = 0; kx < d.kernel; ++kx) {
                const auto iy = static_cast<std::ptrdiff_t>(y + ky) - static_cast<std::ptrdiff_t>(d.pad);
                const auto ix = static_cast<std::ptrdiff_t>(x + kx) - static_cast<std::ptrdiff_t>(d.pad);
                if (!inside(iy, d.height) || !inside(ix, d.width)) continue;
                grad_weight[wgt(o, c, ky, kx)] +=
                    in[src(n, c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix))] * g;
              }
        }
}

void dense_forward(const DenseDims& d, std::span<const double> in, std::span<const double> weight,
                   std::span<const double> bias, std::span<double> out) {
  for (std::size_t n = 0; n < d.batch; ++n)
    for (std::size_t o = 0; o < d.out; ++o) {
      double acc = bias[o];
      for (std::size_t i = 0; i < d.in; ++i) acc += weight[o * d.in + i] * in[n * d.in + i];
      out[n * d.out + o] = acc;
    }
}

void dense_backward_input(const DenseDims& d, std::span<const double> grad_out,
                          std::span<const double> weight, std::span<double> grad_in) {
  for (auto& g : grad_in) g = 0.0;
  for (std::size_t n = 0; n < d.batch; ++n)
    for (std::size_t o = 0; o < d.out; ++o)
      for (std::size_t i = 0; i < d.in; ++i)
        grad_in[n * d.in + i] += weight[o * d.in + i] * grad_out[n * d.out + o];
}

void dense_backward_params(const DenseDims& d, std::span<const double> in,
                           std::span<const double> grad_out, std::span<double> grad_weight,
                           std::span<double> grad_bias) {
  for (std::size_t n = 0; n < d.batch; ++n)
    for (std::size_t o = 0; o < d.out; ++o) {
      const double g = grad_out[n * d.out + o];
      grad_bias[o] += g;
      for (std::size_t i = 0; i < d.in; ++i) grad_weight[o * d.in + i] += in[n * d.in + i] * g;
    }
}

void nearest_distances(std::span<const double> queries, std::span<const double> refs,
                       std::size_t dim, std::span<double> out) {
  const std::size_t m = dim == 0 ? 0 : refs.size() / dim;
  for (std::size_t q = 0; q < out.size(); ++q) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < dim; ++t) {
        const double diff = queries[q * dim + t] - refs[j * dim + t];
        s += diff * diff;
      }
      if (s < best) best = s;
    }
    out[q] = std::sqrt(best);
  }
}

}  // namespace sneakdoor::kernels::reference
