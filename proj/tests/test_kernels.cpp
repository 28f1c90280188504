#include <gtest/gtest.h>

#include "sneakdoor/kernels.hpp"
#include "test_util.hpp"

using namespace sneakdoor;

namespace {

std::vector<double> random_vec(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-1, 1);
  return v;
}

}  // namespace

TEST(Kernels, ConvMatchesDirectDefinition) {
  Rng rng(1);
  const kernels::ConvDims d{2, 2, 4, 5, 3, 3, 1};
  const auto x = random_vec(d.in_size(), rng), w = random_vec(d.weight_size(), rng),
             b = random_vec(d.out_channels, rng);
  std::vector<double> y(d.out_size());
  kernels::reference::conv2d_forward(d, x, w, b, y);
  for (std::size_t n = 0; n < d.batch; ++n)
    for (std::size_t o = 0; o < d.out_channels; ++o)
      for (std::size_t i = 0; i < d.height; ++i)
        for (std::size_t j = 0; j < d.width; ++j) {
          double s = b[o];
          for (std::size_t c = 0; c < d.in_channels; ++c)
            for (int u = -1; u <= 1; ++u)
              for (int v = -1; v <= 1; ++v) {
                const long ii = static_cast<long>(i) + u, jj = static_cast<long>(j) + v;
                if (ii < 0 || jj < 0 || ii >= 4 || jj >= 5) continue;
                s += w[((o * 2 + c) * 3 + (u + 1)) * 3 + (v + 1)] *
                     x[((n * 2 + c) * 4 + ii) * 5 + jj];
              }
          EXPECT_NEAR(y[((n * 3 + o) * 4 + i) * 5 + j], s, 1e-13);
        }
}

TEST(Kernels, OmpEqualsReferenceBitwise) {
  Rng rng(2);
  for (int t = 0; t < 5; ++t) {
    const kernels::ConvDims d{1 + static_cast<std::size_t>(t), 2, 6, 7, 3, 3, 1};
    const auto x = random_vec(d.in_size(), rng), w = random_vec(d.weight_size(), rng),
               b = random_vec(d.out_channels, rng), go = random_vec(d.out_size(), rng);
    std::vector<double> y1(d.out_size()), y2(d.out_size());
    kernels::reference::conv2d_forward(d, x, w, b, y1);
    kernels::omp::conv2d_forward(d, x, w, b, y2);
    EXPECT_EQ(y1, y2);
    std::vector<double> gi1(d.in_size()), gi2(d.in_size());
    kernels::reference::conv2d_backward_input(d, go, w, gi1);
    kernels::omp::conv2d_backward_input(d, go, w, gi2);
    EXPECT_EQ(gi1, gi2);
    std::vector<double> gw1(d.weight_size(), 0.5), gw2 = gw1, gb1(3, 0.1), gb2 = gb1;
    kernels::reference::conv2d_backward_params(d, x, go, gw1, gb1);
    kernels::omp::conv2d_backward_params(d, x, go, gw2, gb2);
    EXPECT_EQ(gw1, gw2);
    EXPECT_EQ(gb1, gb2);

    const kernels::DenseDims dd{3 + static_cast<std::size_t>(t), 7, 4};
    const auto dx = random_vec(dd.batch * dd.in, rng), dw = random_vec(dd.out * dd.in, rng),
               db = random_vec(dd.out, rng), dgo = random_vec(dd.batch * dd.out, rng);
    std::vector<double> o1(dd.batch * dd.out), o2 = o1;
    kernels::reference::dense_forward(dd, dx, dw, db, o1);
    kernels::omp::dense_forward(dd, dx, dw, db, o2);
    EXPECT_EQ(o1, o2);
    std::vector<double> i1(dd.batch * dd.in), i2 = i1;
    kernels::reference::dense_backward_input(dd, dgo, dw, i1);
    kernels::omp::dense_backward_input(dd, dgo, dw, i2);
    EXPECT_EQ(i1, i2);
    std::vector<double> w1(dd.out * dd.in, 0.0), w2 = w1, b1(dd.out, 0.0), b2 = b1;
    kernels::reference::dense_backward_params(dd, dx, dgo, w1, b1);
    kernels::omp::dense_backward_params(dd, dx, dgo, w2, b2);
    EXPECT_EQ(w1, w2);
    EXPECT_EQ(b1, b2);

    const auto q = random_vec(9 * 4, rng), r = random_vec(13 * 4, rng);
    std::vector<double> n1(9), n2(9);
    kernels::reference::nearest_distances(q, r, 4, n1);
    kernels::omp::nearest_distances(q, r, 4, n2);
    EXPECT_EQ(n1, n2);
  }
}

// <conv(x), g> == <x, conv^T(g)> for the input adjoint.
TEST(Kernels, ConvBackwardInputIsAdjoint) {
  Rng rng(3);
  const kernels::ConvDims d{2, 3, 5, 4, 2, 3, 1};
  const auto x = random_vec(d.in_size(), rng), w = random_vec(d.weight_size(), rng),
             g = random_vec(d.out_size(), rng);
  const std::vector<double> zero_bias(d.out_channels, 0.0);
  std::vector<double> y(d.out_size()), gi(d.in_size());
  kernels::reference::conv2d_forward(d, x, w, zero_bias, y);
  kernels::reference::conv2d_backward_input(d, g, w, gi);
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < y.size(); ++i) lhs += y[i] * g[i];
  for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * gi[i];
  EXPECT_NEAR(lhs, rhs, 1e-12);
}
