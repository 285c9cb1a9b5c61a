#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "tgcnn/gradcheck.hpp"
#include "tgcnn/layers.hpp"

using namespace tgcnn;
using detail::random_tensor;

namespace {

Conv1D make_conv1d(Tensor kernel, std::optional<Tensor> bias, Padding p) {
  Conv1D c;
  c.kernel = std::move(kernel);
  c.bias = std::move(bias);
  c.padding = p;
  return c;
}

Tensor run(const Conv1D& c, const Tensor& x) {
  Graph g;
  return g.value(conv1d_forward(g, c, g.constant(x)));
}

Tensor run(const Conv2D& c, const Tensor& x) {
  Graph g;
  return g.value(conv2d_forward(g, c, g.constant(x)));
}

// Straight-line cross-correlation over an explicitly zero-padded copy.
std::vector<double> naive_conv1d(const Tensor& x, const Tensor& k, const std::optional<Tensor>& b,
                                 Padding p) {
  const std::size_t B = x.dim(0), I = x.dim(1), T = x.dim(2);
  const std::size_t O = k.dim(0), W = k.dim(2);
  const std::size_t left = p == Padding::same_zero ? W / 2 : 0;
  const std::size_t right = p == Padding::same_zero ? W - 1 - W / 2 : 0;
  const std::size_t padded = T + left + right;
  const std::size_t out_len = padded - W + 1;
  std::vector<double> out;
  for (std::size_t bb = 0; bb < B; ++bb) {
    for (std::size_t o = 0; o < O; ++o) {
      for (std::size_t t = 0; t < out_len; ++t) {
        double acc = 0.0;
        for (std::size_t i = 0; i < I; ++i) {
          for (std::size_t w = 0; w < W; ++w) {
            const std::size_t pos = t + w;
            const double xv =
                (pos < left || pos >= left + T) ? 0.0 : x.at({bb, i, pos - left});
            acc += xv * k.at({o, i, w});
          }
        }
        out.push_back(acc + (b ? (*b)[o] : 0.0));
      }
    }
  }
  return out;
}

}  // namespace

TEST(Conv1D, HandExamples) {
  const Tensor x = tensor_create({1, 1, 3}, {1, 2, 3});
  const Tensor k = tensor_create({1, 1, 3}, {1, 0, -1});
  EXPECT_EQ(run(make_conv1d(k, std::nullopt, Padding::valid), x).values(),
            (std::vector<double>{-2}));
  EXPECT_EQ(run(make_conv1d(k, std::nullopt, Padding::same_zero), x).values(),
            (std::vector<double>{-2, -2, 2}));
  const Tensor id = tensor_create({1, 1, 1}, {1});
  EXPECT_EQ(run(make_conv1d(id, Tensor::zeros({1}), Padding::same_zero), x), x);
}

TEST(Conv1D, MatchesNaiveOracle) {
  Rng rng(31);
  for (std::size_t w : {1, 2, 3, 4, 5}) {
    for (Padding p : {Padding::same_zero, Padding::valid}) {
      const Tensor x = random_tensor({2, 3, 7}, rng);
      const Tensor k = random_tensor({4, 3, w}, rng);
      const Tensor b = random_tensor({4}, rng);
      const Tensor y = run(make_conv1d(k, b, p), x);
      const auto ref = naive_conv1d(x, k, b, p);
      ASSERT_EQ(y.size(), ref.size());
      for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
    }
  }
}

TEST(Conv1D, Errors) {
  Rng rng(1);
  const Conv1D c = Conv1D::init(2, 3, 3, rng, true, Padding::valid);
  EXPECT_THROW(run(c, Tensor::zeros({1, 3, 5})), ShapeError);  // channel mismatch
  EXPECT_THROW(run(c, Tensor::zeros({1, 2, 2})), ShapeError);  // T < w, valid
}

TEST(Conv2D, PerColumnHandExample) {
  Conv2D c;
  c.kernel = tensor_create({1, 1, 3, 1}, {1, 0, -1});
  c.padding = Padding::valid;
  // Column 0 = [1,2,3], column 1 = [4,5,6].
  const Tensor x = tensor_create({1, 1, 3, 2}, {1, 4, 2, 5, 3, 6});
  EXPECT_EQ(run(c, x).values(), (std::vector<double>{-2, -2}));
}

TEST(Conv2D, ZeroAndIdentityKernels) {
  Rng rng(2);
  const Tensor x = random_tensor({2, 1, 5, 3}, rng);
  Conv2D zero;
  zero.kernel = Tensor::zeros({1, 1, 3, 1});
  zero.bias = Tensor::zeros({1});
  EXPECT_EQ(run(zero, x), Tensor::zeros({2, 1, 5, 3}));
  Conv2D id;
  id.kernel = Tensor::full({1, 1, 1, 1}, 1.0);
  EXPECT_EQ(run(id, x), x);
}

TEST(Conv2D, EqualsConv1DPerColumnBitExact) {
  Rng rng(37);
  for (std::size_t w : {1, 3, 5}) {
    for (Padding p : {Padding::same_zero, Padding::valid}) {
      const std::size_t B = 2, I = 2, O = 3, T = 6, C = 4;
      const Tensor x = random_tensor({B, I, T, C}, rng);
      Conv2D c2 = Conv2D::init(I, O, w, rng, true, p);
      const Tensor y2 = run(c2, x);
      const Conv1D c1 = make_conv1d(reshape(c2.kernel, {O, I, w}), c2.bias, p);
      for (std::size_t col = 0; col < C; ++col) {
        // Column `col` as a [B, I, T] sequence.
        Tensor xc = Tensor::zeros({B, I, T});
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t i = 0; i < I; ++i)
            for (std::size_t t = 0; t < T; ++t) xc.at({b, i, t}) = x.at({b, i, t, col});
        const Tensor y1 = run(c1, xc);
        const std::size_t L = y1.dim(2);
        ASSERT_EQ(y2.dim(2), L);
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t o = 0; o < O; ++o)
            for (std::size_t t = 0; t < L; ++t)
              EXPECT_EQ(y2.at({b, o, t, col}), y1.at({b, o, t}));
      }
    }
  }
}

TEST(Conv2D, MapMismatch) {
  Rng rng(3);
  const Conv2D c = Conv2D::init(2, 1, 3, rng);
  EXPECT_THROW(run(c, Tensor::zeros({1, 3, 4, 2})), ShapeError);
}

TEST(Conv1x1, LinearCombinationOfMaps) {
  const Tensor x = tensor_create({1, 2, 3}, {1, 2, 3, 5, 6, 7});
  auto with = [&](std::initializer_list<double> w) {
    Graph g;
    const Conv1D c = make_conv1d(tensor_create({1, 2, 1}, w), Tensor::zeros({1}),
                                 Padding::same_zero);
    return g.value(conv_1x1(g, c, g.constant(x))).values();
  };
  EXPECT_EQ(with({0.5, 0.5}), (std::vector<double>{3, 4, 5}));
  EXPECT_EQ(with({1, 0}), (std::vector<double>{1, 2, 3}));
  EXPECT_EQ(with({0, 0}), (std::vector<double>{0, 0, 0}));
  Rng rng(4);
  Graph g;
  EXPECT_THROW(conv_1x1(g, Conv1D::init(2, 1, 3, rng), g.constant(x)), ShapeError);
}

TEST(InstanceNorm, HandExample) {
  Graph g;
  const InstanceNorm n = InstanceNorm::init(1);
  const Tensor y = g.value(instance_norm_forward(g, n, g.constant(tensor_create({1, 1, 3}, {1, 2, 3}))));
  const double s = 1.0 / std::sqrt(2.0 / 3.0 + 1e-5);
  EXPECT_NEAR(y[0], -s, 1e-12);
  EXPECT_NEAR(y[1], 0.0, 1e-15);
  EXPECT_NEAR(y[2], s, 1e-12);
  EXPECT_NEAR(y[0], -1.224745, 1e-5);
}

TEST(InstanceNorm, ConstantAndZeroScale) {
  Graph g;
  InstanceNorm n = InstanceNorm::init(1);
  const Tensor c = g.value(instance_norm_forward(g, n, g.constant(Tensor::full({1, 1, 3}, 5.0))));
  EXPECT_EQ(c, Tensor::zeros({1, 1, 3}));
  n.scale = Tensor::zeros({1});
  n.shift = Tensor::full({1}, 0.25);
  Rng rng(5);
  // A graph snapshots parameters on first bind, so the edited layer needs a fresh one.
  Graph h;
  const Tensor y = h.value(instance_norm_forward(h, n, h.constant(random_tensor({1, 1, 6}, rng))));
  EXPECT_EQ(y, Tensor::full({1, 1, 6}, 0.25));
}

TEST(InstanceNorm, UnitMomentsPerSampleChannel) {
  Rng rng(41);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t B = 1 + rng.below(3), C = 1 + rng.below(4), S = 2 + rng.below(20);
    Tensor x = random_tensor({B, C, S}, rng);
    for (double& v : x.mutable_data()) v = v * rng.uniform(0.5, 20.0) + rng.uniform(-50, 50);
    Graph g;
    const Tensor y = g.value(instance_norm_forward(g, InstanceNorm::init(C), g.constant(x)));
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t c = 0; c < C; ++c) {
        double in_mean = 0.0, in_var = 0.0, mean = 0.0, var = 0.0;
        for (std::size_t s = 0; s < S; ++s) in_mean += x.at({b, c, s}) / S;
        for (std::size_t s = 0; s < S; ++s) in_var += std::pow(x.at({b, c, s}) - in_mean, 2) / S;
        if (in_var <= 1e-3) continue;
        for (std::size_t s = 0; s < S; ++s) mean += y.at({b, c, s}) / S;
        for (std::size_t s = 0; s < S; ++s) var += std::pow(y.at({b, c, s}) - mean, 2) / S;
        EXPECT_LT(std::fabs(mean), 1e-6);
        EXPECT_LT(std::fabs(var - 1.0), 1e-4);
      }
    }
  }
}

TEST(Activation, Examples) {
  Graph g;
  const NodeRef x = g.constant(tensor_create({3}, {-1, 0, 2}));
  EXPECT_EQ(g.value(activation(g, Activation::relu, x)).values(), (std::vector<double>{0, 0, 2}));
  const NodeRef z = g.constant(tensor_create({1}, {0}));
  EXPECT_EQ(g.value(activation(g, Activation::gelu, z)).item(), 0.0);
  EXPECT_EQ(g.value(activation(g, Activation::tanh, z)).item(), 0.0);
  EXPECT_EQ(g.value(activation(g, Activation::sigmoid, z)).item(), 0.5);
  const NodeRef one = g.constant(tensor_create({1}, {1}));
  EXPECT_NEAR(g.value(activation(g, Activation::gelu, one)).item(), 0.841192, 1e-6);
}

TEST(GatingBlock, NearIdentityInitIsResidualMlp) {
  Rng rng(43);
  const GatingBlock b = GatingBlock::init(4, 4, 5, rng);
  const Tensor x = random_tensor({2, 5, 4}, rng);
  Graph g;
  const Tensor y = g.value(gating_block_forward(g, b, g.constant(x)));

  // Same block without the time mixing: x + proj_out(first half of gelu(proj_in(norm(x)))).
  Graph h;
  NodeRef z = ad::permute(h, h.constant(x), {0, 2, 1});
  z = instance_norm_forward(h, b.norm, z);
  z = ad::permute(h, z, {0, 2, 1});
  z = ad::gelu(h, dense_forward(h, b.proj_in, z));
  const NodeRef u = ad::split_half(h, 2, z).first;
  const Tensor ref = h.value(ad::add(h, h.constant(x), dense_forward(h, b.proj_out, u)));
  EXPECT_EQ(y, ref);
}

TEST(GatingBlock, ZeroProjOutIsPureResidual) {
  Rng rng(47);
  GatingBlock b = GatingBlock::init(4, 3, 5, rng);
  detail::randomize_time_mix(b, rng);
  b.proj_out.weight = Tensor::zeros(b.proj_out.weight.shape());
  b.proj_out.bias = Tensor::zeros(b.proj_out.bias.shape());
  const Tensor x = random_tensor({2, 5, 4}, rng);
  Graph g;
  EXPECT_EQ(g.value(gating_block_forward(g, b, g.constant(x))), x);
}

TEST(GatingBlock, GateIsElementwiseProduct) {
  Graph g;
  const NodeRef u = g.constant(tensor_create({2}, {1, 2}));
  const NodeRef v = g.constant(tensor_create({2}, {0.5, -1}));
  EXPECT_EQ(g.value(ad::mul(g, u, v)).values(), (std::vector<double>{0.5, -2}));
}

TEST(GatingBlock, Errors) {
  Rng rng(53);
  const GatingBlock b = GatingBlock::init(4, 2, 5, rng);
  Graph g;
  EXPECT_THROW(gating_block_forward(g, b, g.constant(Tensor::zeros({1, 6, 4}))), ShapeError);
  EXPECT_THROW(gating_block_forward(g, b, g.constant(Tensor::zeros({1, 5, 3}))), ShapeError);
  GatingBlock odd = b;
  odd.proj_in = Dense::init(4, 3, rng);
  EXPECT_THROW(gating_block_forward(g, odd, g.constant(Tensor::zeros({1, 5, 4}))), ShapeError);
}

TEST(GatingModule, EmptyIsTanh) {
  Rng rng(59);
  const Tensor x = random_tensor({2, 5, 4}, rng);
  Graph g;
  const Tensor y = g.value(gating_module_forward(g, {}, g.constant(x)));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y[i], std::tanh(x[i]));
}

TEST(GatingModule, ZeroProjOutBlockIsTanh) {
  Rng rng(61);
  std::vector<GatingBlock> blocks{GatingBlock::init(4, 4, 5, rng)};
  blocks[0].proj_out.weight = Tensor::zeros({4, 4});
  blocks[0].proj_out.bias = Tensor::zeros({4});
  const Tensor x = random_tensor({2, 5, 4}, rng);
  Graph g;
  const Tensor y = g.value(gating_module_forward(g, blocks, g.constant(x)));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y[i], std::tanh(x[i]));
}

TEST(GatingModule, OutputBounded) {
  Rng rng(67);
  std::vector<GatingBlock> blocks;
  for (int i = 0; i < 3; ++i) {
    blocks.push_back(GatingBlock::init(6, 6, 8, rng));
    detail::randomize_time_mix(blocks.back(), rng);
  }
  Tensor x = random_tensor({3, 8, 6}, rng);
  for (double& v : x.mutable_data()) v *= 100.0;
  Graph g;
  const Tensor y = g.value(gating_module_forward(g, blocks, g.constant(x)));
  for (double v : y.data()) {
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
    EXPECT_TRUE(std::isfinite(v));
  }
}

namespace {

FlopCounter block_flops(std::size_t T, std::size_t H, std::size_t half) {
  Rng rng(71);
  const GatingBlock b = GatingBlock::init(H, half, T, rng);
  Graph g;
  gating_block_forward(g, b, g.constant(random_tensor({2, T, H}, rng)));
  return g.flops();
}

}  // namespace

TEST(FlopCounter, TimeMixQuadraticInT) {
  const auto a = block_flops(6, 8, 8), b = block_flops(12, 8, 8);
  EXPECT_EQ(b.time_mix_flops(), 4 * a.time_mix_flops());
  EXPECT_EQ(b.dense_flops(), 2 * a.dense_flops());
}

TEST(FlopCounter, ProjectionLinearInChannels) {
  // H' held fixed so the projection cost is H * H' per position.
  const auto a = block_flops(6, 8, 4), b = block_flops(6, 16, 4);
  EXPECT_EQ(b.dense_flops(), 2 * a.dense_flops());
  EXPECT_EQ(b.time_mix_flops(), a.time_mix_flops());
  // Time mixing is linear in the mixed channel count.
  const auto c = block_flops(6, 8, 8);
  EXPECT_EQ(c.time_mix_flops(), 2 * a.time_mix_flops());
}

TEST(FlopCounter, HandCount) {
  // B=2, T=6, H=8, H'=4: proj_in 2*6*8*8, proj_out 2*6*4*8, time mix 2*4*6*6 MACs.
  const auto f = block_flops(6, 8, 4);
  EXPECT_EQ(f.dense_macs, 2u * 6 * 8 * 8 + 2u * 6 * 4 * 8);
  EXPECT_EQ(f.time_mix_macs, 2u * 4 * 6 * 6);
  EXPECT_EQ(f.dense_flops(), 2 * f.dense_macs);
}
