#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <vector>

#include <mam4wf/nn.hpp>
#include <mam4wf/rng.hpp>
#include <mam4wf/tensor.hpp>

using namespace mam4wf;

namespace {

Tensor<double> random_tensor(std::vector<int64_t> shape, Rng& rng,
                             double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i)
    t[i] = scale * (rng.uniform() * 2.0 - 1.0);
  return t;
}

double weighted_sum(const Tensor<double>& y, const Tensor<double>& w) {
  double s = 0.0;
  for (int64_t i = 0; i < y.numel(); ++i) s += y[i] * w[i];
  return s;
}

// Finite-difference oracle for a module under the probe loss sum(y * w):
// checks input gradients and a sample of parameter gradients against central
// differences in double precision.
void check_gradients(
    const std::function<Tensor<double>(const Tensor<double>&)>& forward,
    const std::function<Tensor<double>(const Tensor<double>&)>& backward,
    const std::vector<nn::Param<double>*>& params, Tensor<double> x,
    uint64_t seed, int probes = 6, double tol = 2e-5) {
  Rng rng(seed);
  Tensor<double> y0 = forward(x);
  Tensor<double> w = random_tensor(y0.shape(), rng);

  for (auto* p : params) p->grad.fill(0.0);
  Tensor<double> dx = backward(w);
  ASSERT_TRUE(dx.same_shape(x));

  const double h = 1e-6;
  for (int probe = 0; probe < probes; ++probe) {
    const int64_t i = rng.uniform_int(0, x.numel() - 1);
    const double saved = x[i];
    x[i] = saved + h;
    const double up = weighted_sum(forward(x), w);
    x[i] = saved - h;
    const double down = weighted_sum(forward(x), w);
    x[i] = saved;
    const double fd = (up - down) / (2.0 * h);
    EXPECT_NEAR(dx[i], fd, tol * std::max(1.0, std::fabs(fd)))
        << "input coordinate " << i;
  }

  for (auto* p : params) {
    for (int probe = 0; probe < probes; ++probe) {
      const int64_t i = rng.uniform_int(0, p->value.numel() - 1);
      const double saved = p->value[i];
      p->value[i] = saved + h;
      const double up = weighted_sum(forward(x), w);
      p->value[i] = saved - h;
      const double down = weighted_sum(forward(x), w);
      p->value[i] = saved;
      const double fd = (up - down) / (2.0 * h);
      EXPECT_NEAR(p->grad[i], fd, tol * std::max(1.0, std::fabs(fd)))
          << p->name << " coordinate " << i;
    }
  }
}

template <typename Layer>
std::vector<nn::Param<double>*> params_of(Layer& layer) {
  std::vector<nn::Param<double>*> out;
  layer.visit_params([&](nn::Param<double>& p) { out.push_back(&p); });
  return out;
}

TEST(Conv2d, ShapeContract) {
  nn::Conv2d<double> conv("c", 3, 8, 3, 2, 1);
  Rng rng(1);
  conv.init(rng, 0.1);
  Tensor<double> x = random_tensor({2, 3, 16, 16}, rng);
  Tensor<double> y = conv.forward(x);
  EXPECT_EQ(y.shape(), (std::vector<int64_t>{2, 8, 8, 8}));
  EXPECT_THROW(conv.forward(random_tensor({2, 4, 16, 16}, rng)),
               ArgumentError);
}

TEST(Conv2d, StridedGradients) {
  nn::Conv2d<double> conv("c", 2, 4, 3, 2, 1);
  Rng rng(2);
  conv.init(rng, 0.2);
  Tensor<double> x = random_tensor({2, 2, 8, 8}, rng);
  check_gradients([&](const Tensor<double>& in) { return conv.forward(in); },
                  [&](const Tensor<double>& dy) { return conv.backward(dy); },
                  params_of(conv), x, 101);
}

TEST(Conv2d, DepthwiseGradients) {
  nn::Conv2d<double> conv("dw", 4, 4, 7, 1, 3, 4);
  Rng rng(3);
  conv.init(rng, 0.2);
  Tensor<double> x = random_tensor({1, 4, 8, 8}, rng);
  check_gradients([&](const Tensor<double>& in) { return conv.forward(in); },
                  [&](const Tensor<double>& dy) { return conv.backward(dy); },
                  params_of(conv), x, 102);
}

TEST(Conv2d, PointwiseGradients) {
  nn::Conv2d<double> conv("pw", 6, 10, 1, 1, 0);
  Rng rng(4);
  conv.init(rng, 0.2);
  Tensor<double> x = random_tensor({2, 6, 5, 5}, rng);
  check_gradients([&](const Tensor<double>& in) { return conv.forward(in); },
                  [&](const Tensor<double>& dy) { return conv.backward(dy); },
                  params_of(conv), x, 103);
}

TEST(Conv2d, GroupedGradients) {
  nn::Conv2d<double> conv("g", 6, 9, 3, 1, 1, 3);
  Rng rng(5);
  conv.init(rng, 0.2);
  Tensor<double> x = random_tensor({2, 6, 6, 6}, rng);
  check_gradients([&](const Tensor<double>& in) { return conv.forward(in); },
                  [&](const Tensor<double>& dy) { return conv.backward(dy); },
                  params_of(conv), x, 104);
}

TEST(ChannelLayerNorm, NormalizesAndBackprops) {
  nn::ChannelLayerNorm<double> ln("ln", 6);
  Rng rng(6);
  Tensor<double> x = random_tensor({2, 6, 4, 4}, rng, 2.0);
  Tensor<double> y = ln.forward(x);
  // Unit gamma, zero beta: per-position channel mean ~0, variance ~1.
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t s = 0; s < 16; ++s) {
      double mean = 0.0, var = 0.0;
      for (int64_t c = 0; c < 6; ++c) mean += y[(n * 6 + c) * 16 + s];
      mean /= 6.0;
      for (int64_t c = 0; c < 6; ++c) {
        const double d = y[(n * 6 + c) * 16 + s] - mean;
        var += d * d;
      }
      var /= 6.0;
      ASSERT_NEAR(mean, 0.0, 1e-12);
      ASSERT_NEAR(var, 1.0, 1e-4);
    }
  check_gradients([&](const Tensor<double>& in) { return ln.forward(in); },
                  [&](const Tensor<double>& dy) { return ln.backward(dy); },
                  params_of(ln), x, 105);
}

TEST(Activations, SiluGeluGradients) {
  Rng rng(7);
  Tensor<double> x = random_tensor({2, 3, 4, 4}, rng, 2.0);
  nn::Silu<double> silu;
  check_gradients([&](const Tensor<double>& in) { return silu.forward(in); },
                  [&](const Tensor<double>& dy) { return silu.backward(dy); },
                  {}, x, 106);
  nn::Gelu<double> gelu;
  check_gradients([&](const Tensor<double>& in) { return gelu.forward(in); },
                  [&](const Tensor<double>& dy) { return gelu.backward(dy); },
                  {}, x, 107);
}

TEST(Linear, Gradients) {
  nn::Linear<double> lin("fc", 5, 7);
  Rng rng(8);
  lin.init(rng, 0.3);
  Tensor<double> x = random_tensor({3, 5}, rng);
  check_gradients([&](const Tensor<double>& in) { return lin.forward(in); },
                  [&](const Tensor<double>& dy) { return lin.backward(dy); },
                  params_of(lin), x, 108);
}

TEST(PixelShuffle, ConstantPreservedAndShapes) {
  nn::PixelShuffle<double> ps(4);
  Tensor<double> x = Tensor<double>::full({1, 16 * 3, 8, 8}, 0.25);
  Tensor<double> y = ps.forward(x);
  EXPECT_EQ(y.shape(), (std::vector<int64_t>{1, 3, 32, 32}));
  for (int64_t i = 0; i < y.numel(); ++i) ASSERT_EQ(y[i], 0.25);
  EXPECT_THROW(ps.forward(Tensor<double>({1, 15, 8, 8})), ConfigError);
}

// Independent inverse-shuffle oracle: applying the inverse mapping to the
// output must reproduce the input exactly.
TEST(PixelShuffle, InverseRecoversInput) {
  const int64_t r = 2, c = 3, h = 4, w = 5;
  nn::PixelShuffle<double> ps(r);
  Rng rng(9);
  Tensor<double> x = random_tensor({2, c * r * r, h, w}, rng);
  Tensor<double> y = ps.forward(x);
  Tensor<double> recovered({2, c * r * r, h, w});
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t cc = 0; cc < c; ++cc)
      for (int64_t dy = 0; dy < r; ++dy)
        for (int64_t dx = 0; dx < r; ++dx)
          for (int64_t yy = 0; yy < h; ++yy)
            for (int64_t xx = 0; xx < w; ++xx)
              recovered.at(n, cc * r * r + dy * r + dx, yy, xx) =
                  y.at(n, cc, yy * r + dy, xx * r + dx);
  for (int64_t i = 0; i < x.numel(); ++i) ASSERT_EQ(recovered[i], x[i]);
}

TEST(PixelShuffle, BackwardIsExactPermutation) {
  nn::PixelShuffle<double> ps(2);
  Rng rng(10);
  Tensor<double> x = random_tensor({1, 8, 3, 3}, rng);
  check_gradients([&](const Tensor<double>& in) { return ps.forward(in); },
                  [&](const Tensor<double>& dy) { return ps.backward(dy); },
                  {}, x, 109);
}

TEST(ConvNeXtBlock, EndToEndGradients) {
  nn::ConvNeXtBlock<double> block("blk", 4);
  Rng rng(11);
  block.init(rng, 0.2);
  Tensor<double> x = random_tensor({1, 4, 8, 8}, rng);
  Tensor<double> y = block.forward(x);
  EXPECT_TRUE(y.same_shape(x));
  check_gradients([&](const Tensor<double>& in) { return block.forward(in); },
                  [&](const Tensor<double>& dy) { return block.backward(dy); },
                  params_of(block), x, 110, 4);
}

}  // namespace
