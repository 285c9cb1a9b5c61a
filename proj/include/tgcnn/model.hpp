#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tgcnn/autodiff.hpp"
#include "tgcnn/layers.hpp"
#include "tgcnn/random.hpp"

namespace tgcnn {

enum class BranchMode : std::uint32_t { full = 0, stepwise_only = 1, channelwise_only = 2 };

inline std::string_view to_string(BranchMode m) {
  switch (m) {
    case BranchMode::full: return "full";
    case BranchMode::stepwise_only: return "stepwise_only";
    case BranchMode::channelwise_only: return "channelwise_only";
  }
  return "?";
}

inline BranchMode parse_branch_mode(std::string_view s) {
  if (s == "full") return BranchMode::full;
  if (s == "stepwise_only") return BranchMode::stepwise_only;
  if (s == "channelwise_only") return BranchMode::channelwise_only;
  throw InputError("unknown branch_mode '" + std::string(s) + "'");
}

struct TGCNNConfig {
  std::size_t T = 12;  // timesteps
  std::size_t C = 6;   // input channels
  std::size_t w = 3;   // time window (odd)
  std::size_t F = 16;  // branch filters
  std::size_t H = 32;  // trunk channels
  std::size_t N = 2;   // gating blocks
  BranchMode branch_mode = BranchMode::full;
  std::uint64_t seed = 42;

  void validate() const {
    auto fail = [](const std::string& m) { throw InputError("config: " + m); };
    if (T < 2) fail("T must be >= 2");
    if (C < 1) fail("C must be >= 1");
    if (w < 1) fail("w must be >= 1");
    if (w % 2 == 0) fail("w must be odd, got " + std::to_string(w));
    if (w > T) fail("w must be <= T");
    if (F < 1) fail("F must be >= 1");
    if (H < 1) fail("H must be >= 1");
  }

  // Channel count the trunk convolution sees after concatenation.
  std::size_t trunk_input_width() const {
    switch (branch_mode) {
      case BranchMode::full: return C + 1;
      case BranchMode::stepwise_only: return 1;
      case BranchMode::channelwise_only: return C;
    }
    return 0;
  }

  friend bool operator==(const TGCNNConfig&, const TGCNNConfig&) = default;
};

// Channel-wise branch: (w x 1) 2D conv -> instance norm -> ReLU -> 1x1 conv
// to a single map.
struct ChannelBranch {
  Conv2D conv;
  InstanceNorm norm;
  Conv2D reduce;
};

// Step-wise branch: 1D conv over time mixing all channels -> instance norm ->
// ReLU -> 1x1 conv to a single channel.
struct TemporalBranch {
  Conv1D conv;
  InstanceNorm norm;
  Conv1D reduce;
};

struct TGCNNModel {
  TGCNNConfig config;
  std::optional<ChannelBranch> channel;
  std::optional<TemporalBranch> temporal;
  Conv1D trunk_conv;
  InstanceNorm trunk_norm;
  std::vector<GatingBlock> blocks;
  Dense head;
};

template <detail::LayerRef<TGCNNModel> M, class F>
void visit_parameters(M& m, F&& f) {
  if (m.channel) {
    visit_parameters(m.channel->conv, "channel.conv", f);
    visit_parameters(m.channel->norm, "channel.norm", f);
    visit_parameters(m.channel->reduce, "channel.reduce", f);
  }
  if (m.temporal) {
    visit_parameters(m.temporal->conv, "temporal.conv", f);
    visit_parameters(m.temporal->norm, "temporal.norm", f);
    visit_parameters(m.temporal->reduce, "temporal.reduce", f);
  }
  visit_parameters(m.trunk_conv, "trunk.conv", f);
  visit_parameters(m.trunk_norm, "trunk.norm", f);
  for (std::size_t i = 0; i < m.blocks.size(); ++i) {
    visit_parameters(m.blocks[i], "gating." + std::to_string(i), f);
  }
  visit_parameters(m.head, "head", f);
}

// Convolutions that feed an instance norm carry no bias: the norm subtracts
// it again, so its gradient is identically zero.
//
// Deterministic: every parameter is drawn, in visitation order, from one
// xoshiro256++ stream seeded with config.seed.
inline TGCNNModel build(const TGCNNConfig& config) {
  config.validate();
  Rng rng(config.seed);
  TGCNNModel m;
  m.config = config;
  const auto& c = config;
  if (c.branch_mode != BranchMode::stepwise_only) {
    ChannelBranch b;
    b.conv = Conv2D::init(1, c.F, c.w, rng, /*with_bias=*/false);
    b.norm = InstanceNorm::init(c.F);
    b.reduce = Conv2D::init(c.F, 1, 1, rng);
    m.channel = std::move(b);
  }
  if (c.branch_mode != BranchMode::channelwise_only) {
    TemporalBranch b;
    b.conv = Conv1D::init(c.C, c.F, c.w, rng, /*with_bias=*/false);
    b.norm = InstanceNorm::init(c.F);
    b.reduce = Conv1D::init(c.F, 1, 1, rng);
    m.temporal = std::move(b);
  }
  m.trunk_conv = Conv1D::init(c.trunk_input_width(), c.H, c.w, rng,
                              /*with_bias=*/false);
  m.trunk_norm = InstanceNorm::init(c.H);
  for (std::size_t i = 0; i < c.N; ++i) {
    m.blocks.push_back(GatingBlock::init(c.H, c.H, c.T, rng));
  }
  m.head = Dense::init(c.H, 1, rng);
  return m;
}

inline std::size_t parameter_count(const TGCNNModel& m) {
  std::size_t n = 0;
  visit_parameters(m, [&](const std::string&, const Tensor& t) {
    n += t.size();
  });
  return n;
}

inline std::vector<const Tensor*> parameter_tensors(const TGCNNModel& m) {
  std::vector<const Tensor*> out;
  visit_parameters(m, [&](const std::string&, const Tensor& t) {
    out.push_back(&t);
  });
  return out;
}

// Routes the model's parameters to existing graph nodes (visitation order),
// so a forward pass reads the node values instead of the model's tensors.
inline void bind_parameters(Graph& g, const TGCNNModel& m,
                            std::span<const NodeRef> nodes) {
  const auto tensors = parameter_tensors(m);
  if (tensors.size() != nodes.size()) {
    throw ShapeError("bind_parameters: expected " +
                     std::to_string(tensors.size()) + " nodes");
  }
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (g.shape(nodes[i]) != tensors[i]->shape()) {
      throw ShapeError("bind_parameters: shape mismatch at parameter " +
                       std::to_string(i));
    }
    g.bind_to(*tensors[i], nodes[i]);
  }
}

// Graph nodes of every intermediate map; absent branches are nullopt.
struct FeatureNodes {
  std::optional<NodeRef> channel_branch;   // [B, T, C]
  std::optional<NodeRef> temporal_branch;  // [B, T, 1]
  NodeRef concatenated;                    // [B, T, trunk_input_width]
  NodeRef trunk;                           // [B, T, H]
  std::vector<NodeRef> blocks;             // [B, T, H] each, pre-tanh
  NodeRef gated;                           // [B, T, H], after tanh
  NodeRef pooled;                          // [B, H]
  NodeRef logits;                          // [B]
};

inline FeatureNodes forward_nodes(Graph& g, const TGCNNModel& m, NodeRef x) {
  const auto& c = m.config;
  const Shape& s = g.shape(x);
  if (s.size() != 3 || s[1] != c.T || s[2] != c.C) {
    throw DimensionError("forward: input " + shape_str(s) + " does not match [B x " +
                         std::to_string(c.T) + " x " + std::to_string(c.C) + "]");
  }
  const std::size_t batch = s[0];
  FeatureNodes out;
  std::vector<NodeRef> parts;

  if (m.channel) {
    NodeRef h = ad::reshape(g, x, {batch, 1, c.T, c.C});
    h = conv2d_forward(g, m.channel->conv, h);
    h = instance_norm_forward(g, m.channel->norm, h);
    h = ad::relu(g, h);
    h = conv_1x1(g, m.channel->reduce, h);
    out.channel_branch = ad::reshape(g, h, {batch, c.T, c.C});
    parts.push_back(*out.channel_branch);
  }
  if (m.temporal) {
    NodeRef h = ad::permute(g, x, {0, 2, 1});
    h = conv1d_forward(g, m.temporal->conv, h);
    h = instance_norm_forward(g, m.temporal->norm, h);
    h = ad::relu(g, h);
    h = conv_1x1(g, m.temporal->reduce, h);
    // [B, 1, T] and [B, T, 1] share a layout.
    out.temporal_branch = ad::reshape(g, h, {batch, c.T, 1});
    parts.push_back(*out.temporal_branch);
  }
  out.concatenated = parts.size() == 1 ? parts.front() : ad::concat(g, 2, parts);

  NodeRef h = ad::permute(g, out.concatenated, {0, 2, 1});
  h = conv1d_forward(g, m.trunk_conv, h);
  h = instance_norm_forward(g, m.trunk_norm, h);
  h = ad::relu(g, h);
  out.trunk = ad::permute(g, h, {0, 2, 1});

  out.gated = gating_module_forward(g, m.blocks, out.trunk, &out.blocks);
  out.pooled = ad::reduce(g, ReduceOp::mean, 1, out.gated);
  NodeRef head = dense_forward(g, m.head, out.pooled);
  out.logits = ad::reshape(g, head, {batch});
  return out;
}

// Logits [B] for x [B, T, C]; the loss applies the sigmoid.
inline NodeRef forward(Graph& g, const TGCNNModel& m, NodeRef x) {
  return forward_nodes(g, m, x).logits;
}

inline Tensor predict_logits(const TGCNNModel& m, const Tensor& x) {
  Graph g;
  return g.value(forward(g, m, g.constant(x)));
}

struct FeatureMaps {
  std::optional<Tensor> channel_branch;
  std::optional<Tensor> temporal_branch;
  Tensor concatenated;
  Tensor trunk;
  std::vector<Tensor> blocks;
  Tensor gated;
  Tensor pooled;
  Tensor logits;
};

inline FeatureMaps forward_features(const TGCNNModel& m, const Tensor& x) {
  Graph g;
  const FeatureNodes n = forward_nodes(g, m, g.constant(x));
  FeatureMaps out;
  if (n.channel_branch) out.channel_branch = g.value(*n.channel_branch);
  if (n.temporal_branch) out.temporal_branch = g.value(*n.temporal_branch);
  out.concatenated = g.value(n.concatenated);
  out.trunk = g.value(n.trunk);
  for (NodeRef b : n.blocks) out.blocks.push_back(g.value(b));
  out.gated = g.value(n.gated);
  out.pooled = g.value(n.pooled);
  out.logits = g.value(n.logits);
  return out;
}

}  // namespace tgcnn
