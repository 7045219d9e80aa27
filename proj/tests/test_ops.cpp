#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "xfer/gradcheck.hpp"
#include "xfer/ops.hpp"
#include "xfer/rng.hpp"

using namespace xfer;

namespace {

Tensor<double> random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(s));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor<double>::from(std::move(s), std::move(v));
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

// Brute-force references, written independently of the im2col/gemm kernels.
std::vector<double> naive_matmul(const Tensor<double>& a, const Tensor<double>& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t t = 0; t < k; ++t) c[i * n + j] += a[i * k + t] * b[t * n + j];
  return c;
}

std::vector<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& bias,
                               std::size_t stride, std::size_t pad) {
  const long N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const long F = w.dim(0), KH = w.dim(2), KW = w.dim(3);
  const long OH = (H + 2 * long(pad) - KH) / long(stride) + 1, OW = (W + 2 * long(pad) - KW) / long(stride) + 1;
  std::vector<double> out(N * F * OH * OW);
  for (long n = 0; n < N; ++n)
    for (long f = 0; f < F; ++f)
      for (long oy = 0; oy < OH; ++oy)
        for (long ox = 0; ox < OW; ++ox) {
          double acc = bias[f];
          for (long c = 0; c < C; ++c)
            for (long ky = 0; ky < KH; ++ky)
              for (long kx = 0; kx < KW; ++kx) {
                const long iy = oy * long(stride) + ky - long(pad), ix = ox * long(stride) + kx - long(pad);
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                acc += x[((n * C + c) * H + iy) * W + ix] * w[((f * C + c) * KH + ky) * KW + kx];
              }
          out[((n * F + f) * OH + oy) * OW + ox] = acc;
        }
  return out;
}

std::vector<double> naive_maxpool(const Tensor<double>& x, std::size_t size) {
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  std::vector<double> out;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t oy = 0; oy < H / size; ++oy)
        for (std::size_t ox = 0; ox < W / size; ++ox) {
          double m = -std::numeric_limits<double>::infinity();
          for (std::size_t dy = 0; dy < size; ++dy)
            for (std::size_t dx = 0; dx < size; ++dx)
              m = std::max(m, x[((n * C + c) * H + oy * size + dy) * W + ox * size + dx]);
          out.push_back(m);
        }
  return out;
}

}  // namespace

TEST(Matmul, IdentityAndHandCase) {
  auto I = Tensor<double>::from({2, 2}, {1, 0, 0, 1});
  auto m = Tensor<double>::from({2, 2}, {1, 2, 3, 4});
  auto r = matmul(I, m);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(r[i], m[i]);
  auto dot = matmul(Tensor<double>::from({1, 2}, {1, 2}), Tensor<double>::from({2, 1}, {3, 4}));
  EXPECT_EQ(dot.item(), 11.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    matmul(Tensor<float>::zeros({2, 3}), Tensor<float>::zeros({4, 5}));
    FAIL();
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos);
    EXPECT_NE(msg.find("[4x5]"), std::string::npos);
  }
}

TEST(Matmul, MatchesTripleLoopOracle) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = 1 + rng.index(6), k = 1 + rng.index(7), n = 1 + rng.index(6);
    auto a = random_tensor({m, k}, rng), b = random_tensor({k, n}, rng);
    const auto ref = naive_matmul(a, b);
    const auto got = matmul(a, b);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_LE(rel_err(got[i], ref[i]), 1e-6);
  }
}

TEST(Conv2d, IdentityKernelAndBiasOnly) {
  auto x = Tensor<double>::from({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  auto y = conv2d(x, Tensor<double>::from({1, 1, 1, 1}, {1}), Tensor<double>::zeros({1}), 1, 0);
  for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(y[i], x[i]);

  Rng rng(3);
  auto z = conv2d(Tensor<double>::zeros({2, 3, 5, 5}), random_tensor({4, 3, 3, 3}, rng),
                  Tensor<double>::from({4}, {0.5, -1, 2, 3}), 1, 1);
  for (std::size_t i = 0; i < z.numel(); ++i) EXPECT_EQ(z[i], (std::vector<double>{0.5, -1, 2, 3})[(i / 25) % 4]);
}

TEST(Conv2d, MatchesNaiveOracle) {
  Rng rng(5);
  {
    auto x = random_tensor({2, 3, 8, 8}, rng), w = random_tensor({4, 3, 3, 3}, rng), b = random_tensor({4}, rng);
    const auto ref = naive_conv(x, w, b, 1, 1);
    const auto got = conv2d(x, w, b, 1, 1);
    ASSERT_EQ(got.numel(), ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_LE(rel_err(got[i], ref[i]), 1e-5);
  }
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t k = 1 + rng.index(4), stride = 1 + rng.index(2), pad = rng.index(std::min<std::size_t>(k, 2));
    const std::size_t out = 1 + rng.index(4);
    const std::size_t h = (out - 1) * stride + k - 2 * pad;
    if (h == 0) continue;
    auto x = random_tensor({1 + rng.index(2), 1 + rng.index(3), h, h}, rng);
    auto w = random_tensor({1 + rng.index(3), x.dim(1), k, k}, rng), b = random_tensor({w.dim(0)}, rng);
    const auto ref = naive_conv(x, w, b, stride, pad);
    const auto got = conv2d(x, w, b, stride, pad);
    ASSERT_EQ(got.numel(), ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_LE(rel_err(got[i], ref[i]), 1e-5);
  }
}

TEST(Conv2d, NonIntegralOutputIsConfigError) {
  EXPECT_THROW(conv2d(Tensor<float>::zeros({1, 1, 4, 4}), Tensor<float>::zeros({1, 1, 3, 3}),
                      Tensor<float>::zeros({1}), 2, 0),
               ConfigError);
}

TEST(Maxpool, SingleWindowAndTieRule) {
  auto x = Tensor<double>::from({1, 1, 2, 2}, {1, 2, 3, 4}, true);
  EXPECT_EQ(maxpool2d(x).item(), 4.0);

  auto c = Tensor<double>::full({1, 1, 4, 4}, 2.5, true);
  auto y = maxpool2d(c);
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_EQ(y[i], 2.5);
  backward(sum(y));
  const std::vector<double> expected{1, 0, 1, 0, 0, 0, 0, 0, 1, 0, 1, 0, 0, 0, 0, 0};
  for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(c.grad()[i], expected[i]) << i;
}

TEST(Maxpool, MatchesWindowScanOracle) {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t s = 2 + rng.index(2);
    auto x = random_tensor({1 + rng.index(2), 1 + rng.index(2), s * (1 + rng.index(3)), s * (1 + rng.index(3))}, rng);
    const auto ref = naive_maxpool(x, s);
    const auto got = maxpool2d(x, s, s);
    ASSERT_EQ(got.numel(), ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_EQ(got[i], ref[i]);
  }
}

TEST(Maxpool, NonDivisibleIsConfigError) {
  EXPECT_THROW(maxpool2d(Tensor<float>::zeros({1, 1, 5, 4})), ConfigError);
}

TEST(BatchNorm, StandardizedInputPassesThrough) {
  // Per-channel values {-1, 1} over the batch: mean 0, biased variance 1.
  auto x = Tensor<double>::from({2, 1, 1, 2}, {-1, 1, 1, -1});
  auto stats = RunningStats<double>::create(1);
  auto y = batchnorm2d(x, Tensor<double>::full({1}, 1.0), Tensor<double>::zeros({1}), stats, Mode::train);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(y[i], x[i], 1e-4);
}

TEST(BatchNorm, ZeroGammaGivesBeta) {
  Rng rng(2);
  auto x = random_tensor({3, 2, 2, 2}, rng);
  auto stats = RunningStats<double>::create(2);
  auto y = batchnorm2d(x, Tensor<double>::zeros({2}), Tensor<double>::from({2}, {0.7, -0.3}), stats, Mode::train);
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_EQ(y[i], (i / 4) % 2 == 0 ? 0.7 : -0.3);
}

TEST(BatchNorm, BatchStatisticsAndRunningUpdate) {
  Rng rng(4);
  auto x = random_tensor({4, 3, 3, 3}, rng, -2.0, 5.0);
  auto stats = RunningStats<double>::create(3);
  auto y = batchnorm2d(x, Tensor<double>::full({3}, 1.0), Tensor<double>::zeros({3}), stats, Mode::train);
  for (std::size_t c = 0; c < 3; ++c) {
    double m = 0, v = 0, xm = 0, xv = 0;
    const double M = 4 * 9;
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t p = 0; p < 9; ++p) {
        m += y[(n * 3 + c) * 9 + p];
        xm += x[(n * 3 + c) * 9 + p];
      }
    m /= M;
    xm /= M;
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t p = 0; p < 9; ++p) {
        v += std::pow(y[(n * 3 + c) * 9 + p] - m, 2);
        xv += std::pow(x[(n * 3 + c) * 9 + p] - xm, 2);
      }
    EXPECT_LE(std::abs(m), 1e-5);
    EXPECT_NEAR(v / M, 1.0, 1e-3);
    EXPECT_NEAR(stats.mean[c], 0.1 * xm, 1e-12);
    EXPECT_NEAR(stats.var[c], 0.9 + 0.1 * xv / (M - 1), 1e-12);
  }
}

TEST(BatchNorm, SingleExampleTrainBatchRejected) {
  auto stats = RunningStats<float>::create(1);
  EXPECT_THROW(batchnorm2d(Tensor<float>::zeros({1, 1, 2, 2}), Tensor<float>::full({1}, 1.f),
                           Tensor<float>::zeros({1}), stats, Mode::train),
               ShapeError);
  EXPECT_NO_THROW(batchnorm2d(Tensor<float>::zeros({1, 1, 2, 2}), Tensor<float>::full({1}, 1.f),
                              Tensor<float>::zeros({1}), stats, Mode::eval));
}

TEST(Activations, ReluAndLeakyValuesAndKinkGradients) {
  auto x = Tensor<double>::from({3}, {-1, 0, 2}, true);
  auto r = relu(x);
  EXPECT_EQ(r[0], 0.0);
  EXPECT_EQ(r[1], 0.0);
  EXPECT_EQ(r[2], 2.0);
  backward(sum(r));
  EXPECT_EQ(x.grad()[1], 0.0);

  auto z = Tensor<double>::from({2}, {-1, 0}, true);
  auto l = leaky_relu(z, 0.2);
  EXPECT_DOUBLE_EQ(l[0], -0.2);
  backward(sum(l));
  EXPECT_DOUBLE_EQ(z.grad()[1], 0.2);
}

TEST(Activations, ReluGradMatchesFiniteDifferences) {
  Rng rng(8);
  auto x = random_tensor({4, 5}, rng);
  auto r = grad_check_at([](const Tensor<double>& v) { return sum(mul(relu(v), v)); }, x);
  EXPECT_LE(r.max_rel_error, 1e-4);
}

TEST(Activations, LogSigmoidIsStableAtExtremes) {
  auto x = Tensor<double>::from({4}, {-800, -30, 30, 800});
  auto y = log_sigmoid(x);
  EXPECT_DOUBLE_EQ(y[0], -800.0);
  EXPECT_NEAR(y[1], -30.0 - std::log1p(std::exp(-30.0)), 1e-12);
  EXPECT_NEAR(y[2], -std::exp(-30.0), 1e-20);
  EXPECT_EQ(y[3], 0.0);
  auto s = sigmoid(x);
  EXPECT_EQ(s[0], 0.0);
  EXPECT_EQ(s[3], 1.0);
}

TEST(Softmax, SymmetryLargeTemperatureAndOracle) {
  auto u = softmax(Tensor<double>::full({1, 4}, 3.3), 0.7);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(u[i], 0.25);

  auto big = softmax(Tensor<double>::from({1, 4}, {2, 1, 0, -1}), 1e6);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_LE(std::abs(big[i] - 0.25), 1e-3);

  // Long-double reference.
  long double e[4], z = 0;
  for (int i = 0; i < 4; ++i) z += (e[i] = std::exp(static_cast<long double>(2 - i)));
  auto p = softmax(Tensor<double>::from({1, 4}, {2, 1, 0, -1}), 1.0);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(p[i], static_cast<double>(e[i] / z), 1e-7);
}

TEST(Softmax, RowsSumToOneAndOverflowSafe) {
  Rng rng(12);
  for (double tau : {0.5, 1.0, 3.0}) {
    auto x = random_tensor({20, 7}, rng, -50.0, 50.0);
    auto p = softmax(x, tau);
    for (std::size_t r = 0; r < 20; ++r) {
      double s = 0;
      for (std::size_t j = 0; j < 7; ++j) s += p[r * 7 + j];
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
  auto f = softmax(Tensor<float>::from({1, 2}, {1000.f, 0.f}), 0.25f);
  EXPECT_EQ(f[0], 1.0f);
  EXPECT_EQ(f[1], 0.0f);
}

TEST(Softmax, NonPositiveTemperatureRejected) {
  EXPECT_THROW(softmax(Tensor<double>::zeros({1, 3}), 0.0), ParameterError);
  EXPECT_THROW(log_softmax(Tensor<double>::zeros({1, 3}), -1.0), ParameterError);
}

TEST(Entropy, OneHotUniformAndOracle) {
  EXPECT_EQ(entropy(Tensor<double>::from({1, 4}, {0, 1, 0, 0})).item(), 0.0);
  EXPECT_NEAR(entropy(Tensor<double>::full({1, 4}, 0.25)).item(), std::log(4.0), 1e-12);
  EXPECT_NEAR(entropy(Tensor<double>::full({1, 4}, 0.25)).item(), 1.386294361, 1e-9);

  long double e[4], z = 0, h = 0;
  for (int i = 0; i < 4; ++i) z += (e[i] = std::exp(static_cast<long double>(2 - i)));
  for (int i = 0; i < 4; ++i) h -= (e[i] / z) * std::log(e[i] / z);
  auto p = softmax(Tensor<double>::from({1, 4}, {2, 1, 0, -1}), 1.0);
  EXPECT_NEAR(entropy(p).item(), static_cast<double>(h), 1e-7);
  EXPECT_NEAR(softmax_entropy(Tensor<double>::from({1, 4}, {2, 1, 0, -1}), 1.0).item(), static_cast<double>(h), 1e-7);
}

TEST(Entropy, DomainErrors) {
  EXPECT_THROW(entropy(Tensor<double>::from({1, 2}, {1.2, -0.2})), DomainError);
  EXPECT_THROW(entropy(Tensor<double>::from({1, 2}, {0.3, 0.3})), DomainError);
}

TEST(Entropy, NonDecreasingInTemperature) {
  Rng rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    auto v = random_tensor({1, 2 + rng.index(8)}, rng, -5.0, 5.0);
    double prev = -1.0;
    for (double tau : {0.25, 0.5, 1.0, 2.0, 4.0, 8.0}) {
      const double h = softmax_entropy(v, tau).item();
      EXPECT_GE(h, prev - 1e-12);
      prev = h;
    }
  }
}

TEST(L2Normalize, UnitRowsAndZeroRowRejected) {
  auto y = l2_normalize_rows(Tensor<double>::from({2, 2}, {3, 4, 0, 2}));
  EXPECT_DOUBLE_EQ(y[0], 0.6);
  EXPECT_DOUBLE_EQ(y[1], 0.8);
  EXPECT_DOUBLE_EQ(y[3], 1.0);
  EXPECT_THROW(l2_normalize_rows(Tensor<double>::from({1, 2}, {0, 0})), DomainError);
}

TEST(Reductions, MeanOfEmptyIsZero) {
  EXPECT_EQ(mean(Tensor<double>::zeros({0, 3})).item(), 0.0);
  EXPECT_EQ(mean(Tensor<double>::from({4}, {1, 2, 3, 6})).item(), 3.0);
}
