#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tgcnn/autodiff.hpp"
#include "tgcnn/layers.hpp"
#include "tgcnn/model.hpp"
#include "tgcnn/random.hpp"

namespace tgcnn {

struct ComponentCheck {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t entries = 0;
  std::string worst;  // "<param index>[<entry>]"
};

inline constexpr double kGradTolerance = 1e-4;

namespace detail {

inline Tensor random_tensor(Shape s, Rng& rng, double sd = 1.0) {
  Tensor t = Tensor::zeros(std::move(s));
  for (double& v : t.mutable_data()) v = rng.normal(0.0, sd);
  return t;
}

// Collects a layer's parameters as copies, in visitation order.
template <class L>
std::vector<Tensor> layer_params(const L& layer) {
  std::vector<Tensor> out;
  visit_parameters(layer, "", [&](const std::string&, const Tensor& t) { out.push_back(t); });
  return out;
}

// Routes layer parameters to nodes[offset...] in visitation order.
template <class L>
void bind_layer(Graph& g, const L& layer, std::span<const NodeRef> nodes) {
  std::size_t i = 0;
  visit_parameters(layer, "", [&](const std::string&, const Tensor& t) {
    g.bind_to(t, nodes[i++]);
  });
}

// sum(out * r) with a fixed random r, so every output entry matters.
inline NodeRef project(Graph& g, NodeRef out, const Tensor& r) {
  return ad::sum(g, ad::mul(g, out, g.constant(r)));
}

inline ComponentCheck check_component(const std::string& name, const ScalarFunction& f,
                                      const std::vector<Tensor>& params, double eps) {
  const auto r = gradient_check(f, params, eps);
  return {name, r.max_rel_error, r.entries,
          std::to_string(r.worst_param) + "[" + std::to_string(r.worst_entry) + "]"};
}

inline void randomize_time_mix(GatingBlock& b, Rng& rng) {
  for (double& v : b.time_mix_weight.mutable_data()) v = rng.uniform(-0.5, 0.5);
  for (double& v : b.time_mix_bias.mutable_data()) v = rng.uniform(0.5, 1.5);
}

}  // namespace detail

// Central-difference checks of every layer adjoint, the raw tensor ops and
// the end-to-end model (T=6, C=4, w=3, F=2, H=4, N=1) in all branch modes.
// Inputs are checked alongside parameters.
inline std::vector<ComponentCheck> gradcheck_suite(std::uint64_t seed, double eps) {
  using detail::project;
  using detail::random_tensor;
  std::vector<ComponentCheck> out;
  Rng rng(seed);

  {
    const Conv1D layer = Conv1D::init(3, 4, 3, rng);
    auto params = detail::layer_params(layer);
    params.insert(params.begin(), random_tensor({2, 3, 7}, rng));
    const Tensor r = random_tensor({2, 4, 7}, rng);
    out.push_back(detail::check_component(
        "conv1d_same", [&](Graph& g, std::span<const NodeRef> p) {
          detail::bind_layer(g, layer, p.subspan(1));
          return project(g, conv1d_forward(g, layer, p[0]), r);
        }, params, eps));
  }
  {
    const Conv1D layer = Conv1D::init(2, 3, 3, rng, true, Padding::valid);
    auto params = detail::layer_params(layer);
    params.insert(params.begin(), random_tensor({2, 2, 6}, rng));
    const Tensor r = random_tensor({2, 3, 4}, rng);
    out.push_back(detail::check_component(
        "conv1d_valid", [&](Graph& g, std::span<const NodeRef> p) {
          detail::bind_layer(g, layer, p.subspan(1));
          return project(g, conv1d_forward(g, layer, p[0]), r);
        }, params, eps));
  }
  {
    const Conv2D layer = Conv2D::init(2, 3, 3, rng);
    auto params = detail::layer_params(layer);
    params.insert(params.begin(), random_tensor({2, 2, 5, 3}, rng));
    const Tensor r = random_tensor({2, 3, 5, 3}, rng);
    out.push_back(detail::check_component(
        "conv2d", [&](Graph& g, std::span<const NodeRef> p) {
          detail::bind_layer(g, layer, p.subspan(1));
          return project(g, conv2d_forward(g, layer, p[0]), r);
        }, params, eps));
  }
  {
    const Conv2D layer = Conv2D::init(3, 1, 1, rng);
    auto params = detail::layer_params(layer);
    params.insert(params.begin(), random_tensor({2, 3, 4, 2}, rng));
    const Tensor r = random_tensor({2, 1, 4, 2}, rng);
    out.push_back(detail::check_component(
        "conv_1x1", [&](Graph& g, std::span<const NodeRef> p) {
          detail::bind_layer(g, layer, p.subspan(1));
          return project(g, conv_1x1(g, layer, p[0]), r);
        }, params, eps));
  }
  {
    InstanceNorm layer = InstanceNorm::init(3);
    layer.scale = random_tensor({3}, rng);
    layer.shift = random_tensor({3}, rng);
    auto params = detail::layer_params(layer);
    params.insert(params.begin(), random_tensor({2, 3, 5}, rng));
    const Tensor r = random_tensor({2, 3, 5}, rng);
    out.push_back(detail::check_component(
        "instance_norm", [&](Graph& g, std::span<const NodeRef> p) {
          detail::bind_layer(g, layer, p.subspan(1));
          return project(g, instance_norm_forward(g, layer, p[0]), r);
        }, params, eps));
  }
  {
    const Dense layer = Dense::init(3, 5, rng);
    auto params = detail::layer_params(layer);
    params.insert(params.begin(), random_tensor({2, 4, 3}, rng));
    const Tensor r = random_tensor({2, 4, 5}, rng);
    out.push_back(detail::check_component(
        "dense", [&](Graph& g, std::span<const NodeRef> p) {
          detail::bind_layer(g, layer, p.subspan(1));
          return project(g, dense_forward(g, layer, p[0]), r);
        }, params, eps));
  }
  for (auto [name, kind] : {std::pair{"relu", Activation::relu},
                            std::pair{"gelu", Activation::gelu},
                            std::pair{"tanh", Activation::tanh},
                            std::pair{"sigmoid", Activation::sigmoid}}) {
    const std::vector<Tensor> params{random_tensor({3, 4}, rng)};
    const Tensor r = random_tensor({3, 4}, rng);
    const Activation k = kind;
    out.push_back(detail::check_component(
        name, [&, k](Graph& g, std::span<const NodeRef> p) {
          return project(g, activation(g, k, p[0]), r);
        }, params, eps));
  }
  {
    const std::vector<Tensor> params{random_tensor({2, 5, 3}, rng),
                                     random_tensor({5, 5}, rng, 0.5),
                                     random_tensor({5}, rng)};
    const Tensor r = random_tensor({2, 5, 3}, rng);
    out.push_back(detail::check_component(
        "time_mix", [&](Graph& g, std::span<const NodeRef> p) {
          return project(g, ad::time_mix(g, p[0], p[1], p[2]), r);
        }, params, eps));
  }
  {
    GatingBlock block = GatingBlock::init(4, 3, 5, rng);
    detail::randomize_time_mix(block, rng);
    auto params = detail::layer_params(block);
    params.insert(params.begin(), random_tensor({2, 5, 4}, rng));
    const Tensor r = random_tensor({2, 5, 4}, rng);
    out.push_back(detail::check_component(
        "gating_block", [&](Graph& g, std::span<const NodeRef> p) {
          detail::bind_layer(g, block, p.subspan(1));
          return project(g, gating_block_forward(g, block, p[0]), r);
        }, params, eps));
  }
  {
    std::vector<GatingBlock> blocks;
    for (int i = 0; i < 2; ++i) {
      blocks.push_back(GatingBlock::init(4, 4, 5, rng));
      detail::randomize_time_mix(blocks.back(), rng);
    }
    std::vector<Tensor> params{random_tensor({2, 5, 4}, rng)};
    for (const auto& b : blocks) {
      for (auto& t : detail::layer_params(b)) params.push_back(std::move(t));
    }
    const Tensor r = random_tensor({2, 5, 4}, rng);
    out.push_back(detail::check_component(
        "gating_module", [&](Graph& g, std::span<const NodeRef> p) {
          std::size_t off = 1;
          for (const auto& b : blocks) {
            const std::size_t n = detail::layer_params(b).size();
            detail::bind_layer(g, b, p.subspan(off, n));
            off += n;
          }
          return project(g, gating_module_forward(g, blocks, p[0]), r);
        }, params, eps));
  }
  {
    // Broadcasting arithmetic, matmul and the shape ops.
    const std::vector<Tensor> params{random_tensor({2, 3, 4}, rng), random_tensor({4}, rng),
                                     random_tensor({4, 3}, rng)};
    Tensor denom = random_tensor({3, 4}, rng);
    for (double& v : denom.mutable_data()) v = 2.0 + std::fabs(v);
    const Tensor r = random_tensor({2, 3}, rng);
    out.push_back(detail::check_component(
        "tensor_ops", [&](Graph& g, std::span<const NodeRef> p) {
          NodeRef a = ad::mul(g, p[0], p[1]);                  // [2,3,4] * [4]
          a = ad::sub(g, a, ad::div(g, p[0], g.constant(denom)));
          a = ad::add(g, a, p[1]);
          NodeRef flat = ad::reshape(g, a, {6, 4});
          NodeRef m = ad::matmul(g, flat, p[2]);               // [6,3]
          auto [lo, hi] = ad::split_half(g, 0, m);             // [3,3] each
          NodeRef c = ad::concat(g, 1, {lo, ad::mul(g, hi, hi)});  // [3,6]
          NodeRef s = ad::add(g, ad::reduce(g, ReduceOp::mean, 1, ad::reshape(g, c, {3, 3, 2})),
                              ad::reduce(g, ReduceOp::sum, 2, ad::reshape(g, c, {3, 2, 3})));
          s = ad::permute(g, s, {1, 0});                       // [2,3]
          return project(g, s, r);
        }, params, eps));
  }
  {
    const std::vector<Tensor> params{random_tensor({6}, rng, 3.0)};
    const Tensor y({6}, {1, 0, 1, 1, 0, 0});
    out.push_back(detail::check_component(
        "bce_with_logits", [&](Graph& g, std::span<const NodeRef> p) {
          return ad::bce_with_logits(g, p[0], g.constant(y));
        }, params, eps));
  }
  for (BranchMode mode : {BranchMode::full, BranchMode::stepwise_only,
                          BranchMode::channelwise_only}) {
    TGCNNConfig c;
    c.T = 6, c.C = 4, c.w = 3, c.F = 2, c.H = 4, c.N = 1;
    c.branch_mode = mode;
    c.seed = rng.next();
    TGCNNModel m = build(c);
    for (auto& b : m.blocks) detail::randomize_time_mix(b, rng);
    std::vector<Tensor> params;
    visit_parameters(m, [&](const std::string&, const Tensor& t) { params.push_back(t); });
    const Tensor x = random_tensor({3, c.T, c.C}, rng);
    const Tensor y({3}, {1, 0, 1});
    out.push_back(detail::check_component(
        "model_" + std::string(to_string(mode)), [&](Graph& g, std::span<const NodeRef> p) {
          bind_parameters(g, m, p);
          return ad::bce_with_logits(g, forward(g, m, g.constant(x)), g.constant(y));
        }, params, eps));
  }
  return out;
}

}  // namespace tgcnn
