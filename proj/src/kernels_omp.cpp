#include <algorithm>
#include <cmath>
#include <limits>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "sneakdoor/kernels.hpp"

namespace sneakdoor::kernels {

namespace omp {

#ifdef _OPENMP
#define SNEAKDOOR_PARALLEL_FOR _Pragma("omp parallel for schedule(static)")
#else
#define SNEAKDOOR_PARALLEL_FOR
#endif
void conv2d_forward(const ConvDims& d, std::span<const double> in, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> out) {
  const std::size_t oh = d.out_height(), ow = d.out_width(), k = d.kernel;
  const auto n_total = static_cast<std::ptrdiff_t>(d.batch * d.out_channels);
  SNEAKDOOR_PARALLEL_FOR
  for (std::ptrdiff_t no = 0; no < n_total; ++no) {
    const std::size_t n = static_cast<std::size_t>(no) / d.out_channels;
    const std::size_t o = static_cast<std::size_t>(no) % d.out_channels;
    double* dst = out.data() + (n * d.out_channels + o) * oh * ow;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        double acc = bias[o];
        for (std::size_t c = 0; c < d.in_channels; ++c) {
          const double* src = in.data() + (n * d.in_channels + c) * d.height * d.width;
          const double* w = weight.data() + (o * d.in_channels + c) * k * k;
          for (std::size_t ky = 0; ky < k; ++ky) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y + ky) -
                                      static_cast<std::ptrdiff_t>(d.pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.height)) continue;
            for (std::size_t kx = 0; kx < k; ++kx) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x + kx) -
                                        static_cast<std::ptrdiff_t>(d.pad);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.width)) continue;
              acc += w[ky * k + kx] * src[static_cast<std::size_t>(iy) * d.width +
                                          static_cast<std::size_t>(ix)];
            }
          }
        }
        dst[y * ow + x] = acc;
      }
    }
  }
}

void conv2d_backward_input(const ConvDims& d, std::span<const double> grad_out,
                           std::span<const double> weight, std::span<double> grad_in) {
  const std::size_t oh = d.out_height(), ow = d.out_width(), k = d.kernel;
  const std::size_t in_plane = d.height * d.width;
  const auto batch = static_cast<std::ptrdiff_t>(d.batch);
  SNEAKDOOR_PARALLEL_FOR
  for (std::ptrdiff_t ni = 0; ni < batch; ++ni) {
    const auto n = static_cast<std::size_t>(ni);
    double* gin = grad_in.data() + n * d.in_channels * in_plane;
    std::fill(gin, gin + d.in_channels * in_plane, 0.0);
    for (std::size_t o = 0; o < d.out_channels; ++o) {
      const double* g = grad_out.data() + (n * d.out_channels + o) * oh * ow;
      for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t x = 0; x < ow; ++x) {
          const double gv = g[y * ow + x];
          if (gv == 0.0) continue;
          for (std::size_t c = 0; c < d.in_channels; ++c) {
            double* dst = gin + c * in_plane;
            const double* w = weight.data() + (o * d.in_channels + c) * k * k;
            for (std::size_t ky = 0; ky < k; ++ky) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y + ky) -
                                        static_cast<std::ptrdiff_t>(d.pad);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.height)) continue;
              for (std::size_t kx = 0; kx < k; ++kx) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x + kx) -
                                          static_cast<std::ptrdiff_t>(d.pad);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.width)) continue;
                dst[static_cast<std::size_t>(iy) * d.width + static_cast<std::size_t>(ix)] +=
                    w[ky * k + kx] * gv;
              }
            }
          }
        }
      }
    }
  }
}

void conv2d_backward_params(const ConvDims& d, std::span<const double> in,
                            std::span<const double> grad_out, std::span<double> grad_weight,
                            std::span<double> grad_bias) {
  const std::size_t oh = d.out_height(), ow = d.out_width(), k = d.kernel;
  const auto out_channels = static_cast<std::ptrdiff_t>(d.out_channels);
  SNEAKDOOR_PARALLEL_FOR
  for (std::ptrdiff_t oi = 0; oi < out_channels; ++oi) {
    const auto o = static_cast<std::size_t>(oi);
    for (std::size_t n = 0; n < d.batch; ++n) {
      const double* g = grad_out.data() + (n * d.out_channels + o) * oh * ow;
      for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t x = 0; x < ow; ++x) {
          const double gv = g[y * ow + x];
          grad_bias[o] += gv;
          if (gv == 0.0) continue;
          for (std::size_t c = 0; c < d.in_channels; ++c) {
            const double* src = in.data() + (n * d.in_channels + c) * d.height * d.width;
            double* gw = grad_weight.data() + (o * d.in_channels + c) * k * k;
            for (std::size_t ky = 0; ky < k; ++ky) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y + ky) -
                                        static_cast<std::ptrdiff_t>(d.pad);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.height)) continue;
              for (std::size_t kx = 0; kx < k; ++kx) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x + kx) -
                                          static_cast<std::ptrdiff_t>(d.pad);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.width)) continue;
                gw[ky * k + kx] +=
                    src[static_cast<std::size_t>(iy) * d.width + static_cast<std::size_t>(ix)] * gv;
              }
            }
          }
        }
      }
    }
  }
}

void dense_forward(const DenseDims& d, std::span<const double> in, std::span<const double> weight,
                   std::span<const double> bias, std::span<double> out) {
  const auto batch = static_cast<std::ptrdiff_t>(d.batch);
  SNEAKDOOR_PARALLEL_FOR
  for (std::ptrdiff_t ni = 0; ni < batch; ++ni) {
    const auto n = static_cast<std::size_t>(ni);
    const double* x = in.data() + n * d.in;
    for (std::size_t o = 0; o < d.out; ++o) {
      const double* w = weight.data() + o * d.in;
      double acc = bias[o];
      for (std::size_t i = 0; i < d.in; ++i) acc += w[i] * x[i];
      out[n * d.out + o] = acc;
    }
  }
}

void dense_backward_input(const DenseDims& d, std::span<const double> grad_out,
                          std::span<const double> weight, std::span<double> grad_in) {
  const auto batch = static_cast<std::ptrdiff_t>(d.batch);
  SNEAKDOOR_PARALLEL_FOR
  for (std::ptrdiff_t ni = 0; ni < batch; ++ni) {
    const auto n = static_cast<std::size_t>(ni);
    double* gx = grad_in.data() + n * d.in;
    std::fill(gx, gx + d.in, 0.0);
    for (std::size_t o = 0; o < d.out; ++o) {
      const double g = grad_out[n * d.out + o];
      if (g == 0.0) continue;
      const double* w = weight.data() + o * d.in;
      for (std::size_t i = 0; i < d.in; ++i) gx[i] += w[i] * g;
    }
  }
}

void dense_backward_params(const DenseDims& d, std::span<const double> in,
                           std::span<const double> grad_out, std::span<double> grad_weight,
                           std::span<double> grad_bias) {
  const auto outs = static_cast<std::ptrdiff_t>(d.out);
  SNEAKDOOR_PARALLEL_FOR
  for (std::ptrdiff_t oi = 0; oi < outs; ++oi) {
    const auto o = static_cast<std::size_t>(oi);
    double* gw = grad_weight.data() + o * d.in;
    for (std::size_t n = 0; n < d.batch; ++n) {
      const double g = grad_out[n * d.out + o];
      grad_bias[o] += g;
      if (g == 0.0) continue;
      const double* x = in.data() + n * d.in;
      for (std::size_t i = 0; i < d.in; ++i) gw[i] += x[i] * g;
    }
  }
}

void nearest_distances(std::span<const double> queries, std::span<const double> refs,
                       std::size_t dim, std::span<double> out) {
  const std::size_t m = dim == 0 ? 0 : refs.size() / dim;
  const auto n = static_cast<std::ptrdiff_t>(out.size());
  SNEAKDOOR_PARALLEL_FOR
  for (std::ptrdiff_t qi = 0; qi < n; ++qi) {
    const double* q = queries.data() + static_cast<std::size_t>(qi) * dim;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j) {
      const double* r = refs.data() + j * dim;
      double s = 0.0;
      for (std::size_t t = 0; t < dim; ++t) {
        const double diff = q[t] - r[t];
        s += diff * diff;
      }
      best = std::min(best, s);
    }
    out[static_cast<std::size_t>(qi)] = std::sqrt(best);
  }
}
#undef SNEAKDOOR_PARALLEL_FOR

}  // namespace omp

bool openmp_enabled() {
#ifdef _OPENMP
  return true;
#else
  return false;
#endif
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

// Front door used by the rest of the library.
void conv2d_forward(const ConvDims& d, std::span<const double> in, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> out) {
  omp::conv2d_forward(d, in, weight, bias, out);
}
void conv2d_backward_input(const ConvDims& d, std::span<const double> grad_out,
                           std::span<const double> weight, std::span<double> grad_in) {
  omp::conv2d_backward_input(d, grad_out, weight, grad_in);
}
void conv2d_backward_params(const ConvDims& d, std::span<const double> in,
                            std::span<const double> grad_out, std::span<double> grad_weight,
                            std::span<double> grad_bias) {
  omp::conv2d_backward_params(d, in, grad_out, grad_weight, grad_bias);
}
void dense_forward(const DenseDims& d, std::span<const double> in, std::span<const double> weight,
                   std::span<const double> bias, std::span<double> out) {
  omp::dense_forward(d, in, weight, bias, out);
}
void dense_backward_input(const DenseDims& d, std::span<const double> grad_out,
                          std::span<const double> weight, std::span<double> grad_in) {
  omp::dense_backward_input(d, grad_out, weight, grad_in);
}
void dense_backward_params(const DenseDims& d, std::span<const double> in,
                           std::span<const double> grad_out, std::span<double> grad_weight,
                           std::span<double> grad_bias) {
  omp::dense_backward_params(d, in, grad_out, grad_weight, grad_bias);
}
void nearest_distances(std::span<const double> queries, std::span<const double> refs,
                       std::size_t dim, std::span<double> out) {
  omp::nearest_distances(queries, refs, dim, out);
}

}  // namespace sneakdoor::kernels
