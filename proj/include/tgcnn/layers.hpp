#pragma once

#include <cmath>
#include <concepts>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "tgcnn/autodiff.hpp"
#include "tgcnn/random.hpp"
#include "tgcnn/tensor.hpp"

namespace tgcnn {

namespace detail {

// Uniform in +-sqrt(1/fan_in).
inline Tensor fan_in_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.mutable_data()) v = rng.uniform(-bound, bound);
  return t;
}

template <class L, class T>
concept LayerRef = std::same_as<std::remove_const_t<L>, T>;

}  // namespace detail

// Temporal convolution. kernel [out, in, w], bias [out].
struct Conv1D {
  Tensor kernel;
  std::optional<Tensor> bias;
  Padding padding = Padding::same_zero;

  static Conv1D init(std::size_t in, std::size_t out, std::size_t window,
                     Rng& rng, bool with_bias = true,
                     Padding padding = Padding::same_zero) {
    if (in == 0 || out == 0 || window == 0) {
      throw ShapeError("Conv1D: channel counts and window must be >= 1");
    }
    Conv1D c;
    c.kernel = detail::fan_in_uniform({out, in, window}, in * window, rng);
    if (with_bias) c.bias = detail::fan_in_uniform({out}, in * window, rng);
    c.padding = padding;
    return c;
  }

  std::size_t out_channels() const { return kernel.dim(0); }
  std::size_t in_channels() const { return kernel.dim(1); }
  std::size_t window() const { return kernel.dim(2); }
};

// Convolution over [B, maps, T, C] with a (w x 1) kernel: slides along time,
// never mixes variable columns. kernel [out, in, w, 1], bias [out].
struct Conv2D {
  Tensor kernel;
  std::optional<Tensor> bias;
  Padding padding = Padding::same_zero;

  static Conv2D init(std::size_t in, std::size_t out, std::size_t window,
                     Rng& rng, bool with_bias = true,
                     Padding padding = Padding::same_zero) {
    if (in == 0 || out == 0 || window == 0) {
      throw ShapeError("Conv2D: map counts and window must be >= 1");
    }
    Conv2D c;
    c.kernel = detail::fan_in_uniform({out, in, window, 1}, in * window, rng);
    if (with_bias) c.bias = detail::fan_in_uniform({out}, in * window, rng);
    c.padding = padding;
    return c;
  }

  std::size_t out_maps() const { return kernel.dim(0); }
  std::size_t in_maps() const { return kernel.dim(1); }
  std::size_t window() const { return kernel.dim(2); }
};

struct InstanceNorm {
  Tensor scale;
  Tensor shift;
  double eps = 1e-5;

  static InstanceNorm init(std::size_t channels, double eps = 1e-5) {
    if (!(eps > 0.0)) throw ShapeError("InstanceNorm: eps must be > 0");
    return {Tensor::full({channels}, 1.0), Tensor::zeros({channels}), eps};
  }

  std::size_t channels() const { return scale.dim(0); }
};

// y = x W^T + b on the last axis. weight [out, in], bias [out].
struct Dense {
  Tensor weight;
  Tensor bias;

  static Dense init(std::size_t in, std::size_t out, Rng& rng) {
    if (in == 0 || out == 0) throw ShapeError("Dense: sizes must be >= 1");
    Dense d;
    d.weight = detail::fan_in_uniform({out, in}, in, rng);
    d.bias = detail::fan_in_uniform({out}, in, rng);
    return d;
  }

  std::size_t in_features() const { return weight.dim(1); }
  std::size_t out_features() const { return weight.dim(0); }
};

// GLU-style block over [B, T, H]:
//   z = norm(x); z = gelu(proj_in(z)) -> [B, T, 2H'];
//   (u, v) = split(z); v' = W_t v + b_t (mixing along time, per channel);
//   out = x + proj_out(u * v').
// Channel projections cost O(T H H'), time mixing O(T^2 H').
struct GatingBlock {
  InstanceNorm norm;
  Dense proj_in;
  Tensor time_mix_weight;  // [T, T]
  Tensor time_mix_bias;    // [T]
  Dense proj_out;

  // time_mix starts at weight 0 / bias 1, so v' == 1 and each block begins as
  // a residual MLP on u.
  static GatingBlock init(std::size_t hidden, std::size_t half_width,
                          std::size_t timesteps, Rng& rng) {
    if (hidden == 0 || half_width == 0 || timesteps == 0) {
      throw ShapeError("GatingBlock: sizes must be >= 1");
    }
    GatingBlock b;
    b.norm = InstanceNorm::init(hidden);
    b.proj_in = Dense::init(hidden, 2 * half_width, rng);
    b.time_mix_weight = Tensor::zeros({timesteps, timesteps});
    b.time_mix_bias = Tensor::full({timesteps}, 1.0);
    b.proj_out = Dense::init(half_width, hidden, rng);
    return b;
  }

  std::size_t hidden() const { return proj_in.in_features(); }
  std::size_t half_width() const { return proj_out.in_features(); }
  std::size_t timesteps() const { return time_mix_weight.dim(0); }
};

// ---------------------------------------------------------------------------
// Parameter visitation, in a fixed order. f(name, tensor).

template <detail::LayerRef<Conv1D> L, class F>
void visit_parameters(L& layer, const std::string& prefix, F&& f) {
  f(prefix + ".kernel", layer.kernel);
  if (layer.bias) f(prefix + ".bias", *layer.bias);
}

template <detail::LayerRef<Conv2D> L, class F>
void visit_parameters(L& layer, const std::string& prefix, F&& f) {
  f(prefix + ".kernel", layer.kernel);
  if (layer.bias) f(prefix + ".bias", *layer.bias);
}

template <detail::LayerRef<InstanceNorm> L, class F>
void visit_parameters(L& layer, const std::string& prefix, F&& f) {
  f(prefix + ".scale", layer.scale);
  f(prefix + ".shift", layer.shift);
}

template <detail::LayerRef<Dense> L, class F>
void visit_parameters(L& layer, const std::string& prefix, F&& f) {
  f(prefix + ".weight", layer.weight);
  f(prefix + ".bias", layer.bias);
}

template <detail::LayerRef<GatingBlock> L, class F>
void visit_parameters(L& block, const std::string& prefix, F&& f) {
  visit_parameters(block.norm, prefix + ".norm", f);
  visit_parameters(block.proj_in, prefix + ".proj_in", f);
  f(prefix + ".time_mix.weight", block.time_mix_weight);
  f(prefix + ".time_mix.bias", block.time_mix_bias);
  visit_parameters(block.proj_out, prefix + ".proj_out", f);
}

// ---------------------------------------------------------------------------
// Forward passes. Parameters are bound to the graph on first use.

inline NodeRef conv1d_forward(Graph& g, const Conv1D& layer, NodeRef x) {
  std::optional<NodeRef> b;
  if (layer.bias) b = g.bind(*layer.bias);
  return ad::conv1d(g, x, g.bind(layer.kernel), b, layer.padding);
}

inline NodeRef conv2d_forward(Graph& g, const Conv2D& layer, NodeRef x) {
  std::optional<NodeRef> b;
  if (layer.bias) b = g.bind(*layer.bias);
  return ad::conv2d(g, x, g.bind(layer.kernel), b, layer.padding);
}

// Per-position linear map across channels (1D) or maps (2D).
inline NodeRef conv_1x1(Graph& g, const Conv1D& layer, NodeRef x) {
  if (layer.window() != 1) throw ShapeError("conv_1x1: window must be 1");
  return conv1d_forward(g, layer, x);
}

inline NodeRef conv_1x1(Graph& g, const Conv2D& layer, NodeRef x) {
  if (layer.window() != 1) throw ShapeError("conv_1x1: window must be 1");
  return conv2d_forward(g, layer, x);
}

// x [B, channels, spatial...].
inline NodeRef instance_norm_forward(Graph& g, const InstanceNorm& layer,
                                     NodeRef x) {
  return ad::instance_norm(g, x, g.bind(layer.scale), g.bind(layer.shift),
                           layer.eps);
}

inline NodeRef dense_forward(Graph& g, const Dense& layer, NodeRef x) {
  return ad::dense(g, x, g.bind(layer.weight), g.bind(layer.bias));
}

enum class Activation { relu, gelu, tanh, sigmoid };

inline NodeRef activation(Graph& g, Activation kind, NodeRef x) {
  switch (kind) {
    case Activation::relu: return ad::relu(g, x);
    case Activation::gelu: return ad::gelu(g, x);
    case Activation::tanh: return ad::tanh(g, x);
    case Activation::sigmoid: return ad::sigmoid(g, x);
  }
  throw ShapeError("activation: unknown kind");
}

inline NodeRef gating_block_forward(Graph& g, const GatingBlock& block,
                                    NodeRef x) {
  const Shape& s = g.shape(x);
  if (s.size() != 3) throw ShapeError("gating block: input must be [B,T,H]");
  if (s[2] != block.hidden()) {
    throw ShapeError("gating block: width " + std::to_string(s[2]) +
                     " != block width " + std::to_string(block.hidden()));
  }
  if (s[1] != block.timesteps()) {
    throw ShapeError("gating block: " + std::to_string(s[1]) +
                     " timesteps, block mixes " +
                     std::to_string(block.timesteps()));
  }
  if (block.proj_in.out_features() % 2 != 0) {
    throw ShapeError("gating block: projection width must be even");
  }
  // Normalize each channel over time: [B,T,H] -> [B,H,T] and back.
  NodeRef z = ad::permute(g, x, {0, 2, 1});
  z = instance_norm_forward(g, block.norm, z);
  z = ad::permute(g, z, {0, 2, 1});
  z = ad::gelu(g, dense_forward(g, block.proj_in, z));
  auto [u, v] = ad::split_half(g, 2, z);
  NodeRef mixed = ad::time_mix(g, v, g.bind(block.time_mix_weight),
                               g.bind(block.time_mix_bias));
  NodeRef gated = ad::mul(g, u, mixed);
  return ad::add(g, x, dense_forward(g, block.proj_out, gated));
}

// N blocks in sequence, then tanh. When `block_outputs` is given it receives
// each block's output before the final activation.
inline NodeRef gating_module_forward(Graph& g,
                                     std::span<const GatingBlock> blocks,
                                     NodeRef x,
                                     std::vector<NodeRef>* block_outputs =
                                         nullptr) {
  for (const GatingBlock& b : blocks) {
    x = gating_block_forward(g, b, x);
    if (block_outputs) block_outputs->push_back(x);
  }
  return ad::tanh(g, x);
}

}  // namespace tgcnn
