#pragma once

// Tape-based reverse-mode differentiation.
//
// A Graph is an append-only list of TapeNodes. Every node holds its forward
// value and whatever context its adjoint needs; backward() walks the tape in
// reverse and accumulates adjoints into the inputs of each node. Nodes are
// never mutated after they are recorded, so backward() may run any number of
// times on the same graph.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <variant>
#include <vector>

#include "tgcnn/kernels.hpp"
#include "tgcnn/tensor.hpp"

namespace tgcnn {

using kernels::Padding;

enum class OpKind : std::uint8_t {
  parameter,
  constant,
  add,
  sub,
  mul,
  div,
  matmul,
  concat,
  split_half,
  reduce_sum,
  reduce_mean,
  reshape,
  permute,
  conv1d,
  conv2d,
  instance_norm,
  relu,
  gelu,
  tanh,
  sigmoid,
  dense,
  time_mix,
  bce_with_logits,
};

constexpr std::string_view op_name(OpKind k) {
  switch (k) {
    case OpKind::parameter: return "parameter";
    case OpKind::constant: return "constant";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::div: return "div";
    case OpKind::matmul: return "matmul";
    case OpKind::concat: return "concat";
    case OpKind::split_half: return "split_half";
    case OpKind::reduce_sum: return "reduce_sum";
    case OpKind::reduce_mean: return "reduce_mean";
    case OpKind::reshape: return "reshape";
    case OpKind::permute: return "permute";
    case OpKind::conv1d: return "conv1d";
    case OpKind::conv2d: return "conv2d";
    case OpKind::instance_norm: return "instance_norm";
    case OpKind::relu: return "relu";
    case OpKind::gelu: return "gelu";
    case OpKind::tanh: return "tanh";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::dense: return "dense";
    case OpKind::time_mix: return "time_mix";
    case OpKind::bce_with_logits: return "bce_with_logits";
  }
  return "?";
}

// Handle to a node on a specific Graph.
class NodeRef {
 public:
  NodeRef() = default;
  std::size_t index() const { return index_; }
  std::uint64_t graph_id() const { return graph_; }
  friend bool operator==(const NodeRef&, const NodeRef&) = default;

 private:
  friend class Graph;
  NodeRef(std::uint64_t graph, std::size_t index)
      : graph_(graph), index_(index) {}
  std::uint64_t graph_ = 0;
  std::size_t index_ = static_cast<std::size_t>(-1);
};

struct AxisContext {
  std::size_t axis = 0;
  std::size_t part = 0;  // split_half: 0 = first half, 1 = second half
};

struct ReduceContext {
  std::optional<std::size_t> axis;
};

struct PermuteContext {
  std::vector<std::size_t> axes;
};

struct ConvContext {
  kernels::ConvGeometry geometry;
  bool has_bias = false;
};

struct NormContext {
  kernels::NormStats stats;
  double eps = 0.0;
};

using OpContext = std::variant<std::monostate, AxisContext, ReduceContext,
                               PermuteContext, ConvContext, NormContext>;

struct TapeNode {
  OpKind kind;
  std::vector<NodeRef> inputs;
  Tensor value;
  OpContext context;
  bool requires_grad = false;
};

// Multiply-accumulate counts per primitive family, collected as ops are
// recorded. FLOPs are reported as 2 x MACs; bias additions are not counted.
struct FlopCounter {
  std::uint64_t dense_macs = 0;
  std::uint64_t time_mix_macs = 0;
  std::uint64_t conv_macs = 0;

  std::uint64_t dense_flops() const { return 2 * dense_macs; }
  std::uint64_t time_mix_flops() const { return 2 * time_mix_macs; }
  std::uint64_t conv_flops() const { return 2 * conv_macs; }
};

// Gradient of a scalar loss for every parameter node of a graph. Parameters
// the loss does not depend on hold explicit zeros.
class GradientMap {
 public:
  const Tensor& at(NodeRef node) const {
    auto it = grads_.find(node.index());
    if (it == grads_.end()) {
      throw ShapeError("GradientMap: node " + std::to_string(node.index()) +
                       " is not a parameter");
    }
    return it->second;
  }
  bool contains(NodeRef node) const { return grads_.count(node.index()) != 0; }
  std::size_t size() const { return grads_.size(); }
  auto begin() const { return grads_.begin(); }
  auto end() const { return grads_.end(); }
  friend bool operator==(const GradientMap&, const GradientMap&) = default;

 private:
  friend GradientMap backward(const class Graph&, NodeRef);
  std::map<std::size_t, Tensor> grads_;
};

class Graph {
 public:
  Graph() : id_(next_id()) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  NodeRef parameter(Tensor value) {
    return append(OpKind::parameter, {}, std::move(value), {}, true);
  }

  NodeRef constant(Tensor value) {
    return append(OpKind::constant, {}, std::move(value), {}, false);
  }

  // Parameter node holding a copy of `source`, created once per source
  // object; later calls return the same node. Lets a model be bound to a
  // graph lazily and its gradients looked up by tensor afterwards.
  NodeRef bind(const Tensor& source) {
    auto it = bound_.find(&source);
    if (it != bound_.end()) return it->second;
    NodeRef ref = parameter(source);
    bound_.emplace(&source, ref);
    return ref;
  }

  // Makes later bind(source) calls return `node`.
  void bind_to(const Tensor& source, NodeRef node) {
    check(node);
    bound_[&source] = node;
  }

  std::optional<NodeRef> find_bound(const Tensor& source) const {
    auto it = bound_.find(&source);
    if (it == bound_.end()) return std::nullopt;
    return it->second;
  }

  // Appends an operation node. Inputs must already be on this graph and the
  // value must be finite.
  NodeRef record(OpKind kind, std::vector<NodeRef> inputs, Tensor value,
                 OpContext context = {}) {
    bool rg = false;
    for (const NodeRef& in : inputs) {
      check(in);
      rg = rg || nodes_[in.index()].requires_grad;
    }
    return append(kind, std::move(inputs), std::move(value),
                  std::move(context), rg);
  }

  const TapeNode& node(NodeRef ref) const {
    check(ref);
    return nodes_[ref.index()];
  }
  const TapeNode& node_at(std::size_t index) const { return nodes_.at(index); }
  NodeRef ref_at(std::size_t index) const {
    if (index >= nodes_.size()) throw ShapeError("graph: index out of range");
    return NodeRef(id_, index);
  }
  const Tensor& value(NodeRef ref) const { return node(ref).value; }
  const Shape& shape(NodeRef ref) const { return node(ref).value.shape(); }
  std::size_t size() const { return nodes_.size(); }
  std::uint64_t id() const { return id_; }

  FlopCounter& flops() { return flops_; }
  const FlopCounter& flops() const { return flops_; }

  void check(NodeRef ref) const {
    if (ref.graph_id() != id_ || ref.index() >= nodes_.size()) {
      throw ShapeError("graph: dangling node reference");
    }
  }

 private:
  static std::uint64_t next_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1);
  }

  NodeRef append(OpKind kind, std::vector<NodeRef> inputs, Tensor value,
                 OpContext context, bool requires_grad) {
    if (!value.all_finite()) {
      throw NumericError("graph: " + std::string(op_name(kind)) +
                         " produced a non-finite value");
    }
    nodes_.push_back(TapeNode{kind, std::move(inputs), std::move(value),
                              std::move(context), requires_grad});
    return NodeRef(id_, nodes_.size() - 1);
  }

  std::uint64_t id_;
  std::vector<TapeNode> nodes_;
  std::unordered_map<const Tensor*, NodeRef> bound_;
  FlopCounter flops_;
};

// ---------------------------------------------------------------------------
// Differentiable operations.

namespace ad {

inline NodeRef elementwise(Graph& g, ElementwiseOp op, NodeRef a, NodeRef b) {
  static constexpr OpKind kinds[] = {OpKind::add, OpKind::sub, OpKind::mul,
                                     OpKind::div};
  Tensor v = tgcnn::elementwise(op, g.value(a), g.value(b));
  return g.record(kinds[static_cast<int>(op)], {a, b}, std::move(v));
}

inline NodeRef add(Graph& g, NodeRef a, NodeRef b) {
  return elementwise(g, ElementwiseOp::add, a, b);
}
inline NodeRef sub(Graph& g, NodeRef a, NodeRef b) {
  return elementwise(g, ElementwiseOp::sub, a, b);
}
inline NodeRef mul(Graph& g, NodeRef a, NodeRef b) {
  return elementwise(g, ElementwiseOp::mul, a, b);
}
inline NodeRef div(Graph& g, NodeRef a, NodeRef b) {
  return elementwise(g, ElementwiseOp::div, a, b);
}

inline NodeRef matmul(Graph& g, NodeRef a, NodeRef b) {
  return g.record(OpKind::matmul, {a, b},
                  tgcnn::matmul(g.value(a), g.value(b)));
}

inline NodeRef concat(Graph& g, std::size_t axis,
                      const std::vector<NodeRef>& parts) {
  std::vector<Tensor> values;
  values.reserve(parts.size());
  for (NodeRef p : parts) values.push_back(g.value(p));
  Tensor v = tgcnn::concat(axis, values);
  return g.record(OpKind::concat, parts, std::move(v), AxisContext{axis, 0});
}

inline std::pair<NodeRef, NodeRef> split_half(Graph& g, std::size_t axis,
                                              NodeRef x) {
  auto [lo, hi] = tgcnn::split_half(axis, g.value(x));
  NodeRef a = g.record(OpKind::split_half, {x}, std::move(lo),
                       AxisContext{axis, 0});
  NodeRef b = g.record(OpKind::split_half, {x}, std::move(hi),
                       AxisContext{axis, 1});
  return {a, b};
}

inline NodeRef reduce(Graph& g, ReduceOp op, std::optional<std::size_t> axis,
                      NodeRef x) {
  Tensor v = tgcnn::reduce(op, axis, g.value(x));
  return g.record(op == ReduceOp::sum ? OpKind::reduce_sum
                                      : OpKind::reduce_mean,
                  {x}, std::move(v), ReduceContext{axis});
}

inline NodeRef sum(Graph& g, NodeRef x) {
  return reduce(g, ReduceOp::sum, std::nullopt, x);
}
inline NodeRef mean(Graph& g, NodeRef x) {
  return reduce(g, ReduceOp::mean, std::nullopt, x);
}

inline NodeRef reshape(Graph& g, NodeRef x, Shape shape) {
  return g.record(OpKind::reshape, {x},
                  tgcnn::reshape(g.value(x), std::move(shape)));
}

inline NodeRef permute(Graph& g, NodeRef x, std::vector<std::size_t> axes) {
  Tensor v = tgcnn::permute(g.value(x), axes);
  return g.record(OpKind::permute, {x}, std::move(v),
                  PermuteContext{std::move(axes)});
}

inline NodeRef conv1d(Graph& g, NodeRef x, NodeRef kernel,
                      std::optional<NodeRef> bias, Padding padding) {
  const auto geo =
      kernels::conv1d_geometry(g.shape(x), g.shape(kernel), padding);
  std::optional<Tensor> b;
  if (bias) b = g.value(*bias);
  Tensor v = kernels::conv1d(g.value(x), g.value(kernel), b, padding);
  g.flops().conv_macs += geo.batch * geo.out * geo.out_len * geo.in * geo.window;
  std::vector<NodeRef> inputs{x, kernel};
  if (bias) inputs.push_back(*bias);
  return g.record(OpKind::conv1d, std::move(inputs), std::move(v),
                  ConvContext{geo, bias.has_value()});
}

inline NodeRef conv2d(Graph& g, NodeRef x, NodeRef kernel,
                      std::optional<NodeRef> bias, Padding padding) {
  const auto geo =
      kernels::conv2d_geometry(g.shape(x), g.shape(kernel), padding);
  std::optional<Tensor> b;
  if (bias) b = g.value(*bias);
  Tensor v = kernels::conv2d(g.value(x), g.value(kernel), b, padding);
  g.flops().conv_macs +=
      geo.batch * geo.out * geo.out_len * geo.cols * geo.in * geo.window;
  std::vector<NodeRef> inputs{x, kernel};
  if (bias) inputs.push_back(*bias);
  return g.record(OpKind::conv2d, std::move(inputs), std::move(v),
                  ConvContext{geo, bias.has_value()});
}

inline NodeRef instance_norm(Graph& g, NodeRef x, NodeRef scale, NodeRef shift,
                             double eps) {
  if (!(eps > 0.0)) throw ShapeError("instance_norm: eps must be > 0");
  kernels::check_norm_params(g.value(x), g.value(scale), g.value(shift));
  auto stats = kernels::instance_norm_stats(g.value(x), eps);
  Tensor v =
      kernels::instance_norm(g.value(x), g.value(scale), g.value(shift), stats);
  return g.record(OpKind::instance_norm, {x, scale, shift}, std::move(v),
                  NormContext{std::move(stats), eps});
}

inline NodeRef relu(Graph& g, NodeRef x) {
  return g.record(OpKind::relu, {x}, map(g.value(x), kernels::relu));
}
inline NodeRef gelu(Graph& g, NodeRef x) {
  return g.record(OpKind::gelu, {x}, map(g.value(x), kernels::gelu));
}
inline NodeRef tanh(Graph& g, NodeRef x) {
  return g.record(OpKind::tanh, {x},
                  map(g.value(x), [](double v) { return std::tanh(v); }));
}
inline NodeRef sigmoid(Graph& g, NodeRef x) {
  return g.record(OpKind::sigmoid, {x}, map(g.value(x), kernels::sigmoid));
}

inline NodeRef dense(Graph& g, NodeRef x, NodeRef weight, NodeRef bias) {
  Tensor v = kernels::dense(g.value(x), g.value(weight), g.value(bias));
  const auto& w = g.shape(weight);
  g.flops().dense_macs += (g.value(x).size() / w[1]) * w[0] * w[1];
  return g.record(OpKind::dense, {x, weight, bias}, std::move(v));
}

inline NodeRef time_mix(Graph& g, NodeRef v, NodeRef weight, NodeRef bias) {
  Tensor out = kernels::time_mix(g.value(v), g.value(weight), g.value(bias));
  const auto& s = g.shape(v);
  g.flops().time_mix_macs += s[0] * s[2] * s[1] * s[1];
  return g.record(OpKind::time_mix, {v, weight, bias}, std::move(out));
}

// Mean binary cross-entropy of logits [B] against {0,1} labels [B]; the
// labels node receives no gradient.
inline NodeRef bce_with_logits(Graph& g, NodeRef logits, NodeRef labels) {
  const Tensor& z = g.value(logits);
  const Tensor& y = g.value(labels);
  if (z.rank() != 1 || z.shape() != y.shape()) {
    throw ShapeError("bce: logits " + shape_str(z.shape()) + " and labels " +
                     shape_str(y.shape()) + " must both be [B]");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    acc += kernels::bce_with_logit(z[i], y[i]);
  }
  return g.record(OpKind::bce_with_logits, {logits, labels},
                  Tensor::scalar(acc / static_cast<double>(z.size())));
}

}  // namespace ad

// ---------------------------------------------------------------------------
// Reverse pass.

namespace detail {

// Gradient of the full input from the gradient of one half of it.
inline Tensor embed_half(const Shape& full, std::size_t axis, std::size_t part,
                         const Tensor& g) {
  Tensor out = Tensor::zeros(full);
  const auto [outer, inner] = detail::outer_inner(full, axis);
  const std::size_t half = full[axis] / 2;
  const std::size_t block = half * inner;
  auto od = out.mutable_data();
  const auto gd = g.data();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(gd.begin() + o * block, block,
                od.begin() + o * full[axis] * inner + part * block);
  }
  return out;
}

// Spreads a reduced gradient back over the reduced axis (scaled by `scale`).
inline Tensor expand_reduced(const Shape& full, std::optional<std::size_t> axis,
                             const Tensor& g, double scale) {
  if (!axis) return Tensor::full(full, g.item() * scale);
  const auto [outer, inner] = detail::outer_inner(full, *axis);
  const std::size_t n = full[*axis];
  std::vector<double> out(shape_size(full));
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t k = 0; k < n; ++k) {
      for (std::size_t i = 0; i < inner; ++i) {
        out[(o * n + k) * inner + i] = g[o * inner + i] * scale;
      }
    }
  }
  return Tensor(full, std::move(out));
}

template <class F>
Tensor zip(const Tensor& a, const Tensor& b, F&& f) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i], b[i]);
  return Tensor(a.shape(), std::move(out));
}

}  // namespace detail

inline GradientMap backward(const Graph& graph, NodeRef loss) {
  graph.check(loss);
  if (graph.value(loss).shape() != Shape{1}) {
    throw ShapeError("backward: loss must have shape [1], got " +
                     shape_str(graph.value(loss).shape()));
  }
  const std::size_t n = loss.index() + 1;
  std::vector<std::optional<Tensor>> grads(n);
  grads[loss.index()] = Tensor::scalar(1.0);

  auto accumulate = [&](NodeRef target, Tensor contribution) {
    if (!graph.node(target).requires_grad) return;
    auto& slot = grads[target.index()];
    if (!slot) {
      slot = std::move(contribution);
    } else {
      auto d = slot->mutable_data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += contribution[i];
    }
  };
  auto wants = [&](NodeRef r) { return graph.node(r).requires_grad; };

  for (std::size_t idx = n; idx-- > 0;) {
    if (!grads[idx]) continue;
    const TapeNode& nd = graph.node_at(idx);
    if (!nd.requires_grad) continue;
    const Tensor& g = *grads[idx];
    const auto& in = nd.inputs;
    auto val = [&](std::size_t i) -> const Tensor& {
      return graph.value(in[i]);
    };

    switch (nd.kind) {
      case OpKind::parameter:
      case OpKind::constant:
        break;
      case OpKind::add:
        accumulate(in[0], g);
        if (wants(in[1])) accumulate(in[1], unbroadcast(g, val(1).shape()));
        break;
      case OpKind::sub:
        accumulate(in[0], g);
        if (wants(in[1])) {
          accumulate(in[1], map(unbroadcast(g, val(1).shape()),
                                [](double v) { return -v; }));
        }
        break;
      case OpKind::mul:
        if (wants(in[0])) accumulate(in[0], tgcnn::mul(g, val(1)));
        if (wants(in[1])) {
          accumulate(in[1],
                     unbroadcast(tgcnn::mul(g, val(0)), val(1).shape()));
        }
        break;
      case OpKind::div: {
        if (wants(in[0])) accumulate(in[0], tgcnn::div(g, val(1)));
        if (wants(in[1])) {
          // d(a/b)/db = -a/b^2 = -(a/b)/b
          Tensor q = tgcnn::div(tgcnn::mul(g, nd.value), val(1));
          accumulate(in[1], map(unbroadcast(q, val(1).shape()),
                                [](double v) { return -v; }));
        }
        break;
      }
      case OpKind::matmul:
        if (wants(in[0])) accumulate(in[0], tgcnn::matmul(g, transpose2d(val(1))));
        if (wants(in[1])) accumulate(in[1], tgcnn::matmul(transpose2d(val(0)), g));
        break;
      case OpKind::concat: {
        const std::size_t axis = std::get<AxisContext>(nd.context).axis;
        std::size_t offset = 0;
        for (std::size_t i = 0; i < in.size(); ++i) {
          const std::size_t len = val(i).dim(axis);
          if (wants(in[i])) accumulate(in[i], slice(g, axis, offset, len));
          offset += len;
        }
        break;
      }
      case OpKind::split_half: {
        const auto& ctx = std::get<AxisContext>(nd.context);
        accumulate(in[0],
                   detail::embed_half(val(0).shape(), ctx.axis, ctx.part, g));
        break;
      }
      case OpKind::reduce_sum:
      case OpKind::reduce_mean: {
        const auto axis = std::get<ReduceContext>(nd.context).axis;
        const Shape& full = val(0).shape();
        double scale = 1.0;
        if (nd.kind == OpKind::reduce_mean) {
          scale = 1.0 / static_cast<double>(axis ? full[*axis]
                                                 : shape_size(full));
        }
        accumulate(in[0], detail::expand_reduced(full, axis, g, scale));
        break;
      }
      case OpKind::reshape:
        accumulate(in[0], tgcnn::reshape(g, val(0).shape()));
        break;
      case OpKind::permute:
        accumulate(in[0],
                   tgcnn::permute(g, inverse_permutation(
                                         std::get<PermuteContext>(nd.context)
                                             .axes)));
        break;
      case OpKind::conv1d:
      case OpKind::conv2d: {
        const auto& ctx = std::get<ConvContext>(nd.context);
        auto cg = kernels::conv_backward(ctx.geometry, val(0), val(1),
                                         ctx.has_bias, g);
        accumulate(in[0], std::move(cg.dx));
        accumulate(in[1], std::move(cg.dkernel));
        if (ctx.has_bias) accumulate(in[2], std::move(*cg.dbias));
        break;
      }
      case OpKind::instance_norm: {
        const auto& ctx = std::get<NormContext>(nd.context);
        auto ng = kernels::instance_norm_backward(val(0), val(1), ctx.stats, g);
        accumulate(in[0], std::move(ng.dx));
        accumulate(in[1], std::move(ng.dscale));
        accumulate(in[2], std::move(ng.dshift));
        break;
      }
      case OpKind::relu:
        accumulate(in[0], detail::zip(g, val(0), [](double gi, double x) {
                     return gi * kernels::relu_grad(x);
                   }));
        break;
      case OpKind::gelu:
        accumulate(in[0], detail::zip(g, val(0), [](double gi, double x) {
                     return gi * kernels::gelu_grad(x);
                   }));
        break;
      case OpKind::tanh:
        accumulate(in[0], detail::zip(g, nd.value, [](double gi, double y) {
                     return gi * (1.0 - y * y);
                   }));
        break;
      case OpKind::sigmoid:
        accumulate(in[0], detail::zip(g, nd.value, [](double gi, double y) {
                     return gi * y * (1.0 - y);
                   }));
        break;
      case OpKind::dense: {
        auto dg = kernels::dense_backward(val(0), val(1), g);
        accumulate(in[0], std::move(dg.dx));
        accumulate(in[1], std::move(dg.dw));
        accumulate(in[2], std::move(dg.db));
        break;
      }
      case OpKind::time_mix: {
        auto tg = kernels::time_mix_backward(val(0), val(1), g);
        accumulate(in[0], std::move(tg.dv));
        accumulate(in[1], std::move(tg.dw));
        accumulate(in[2], std::move(tg.db));
        break;
      }
      case OpKind::bce_with_logits: {
        const Tensor& z = val(0);
        const Tensor& y = val(1);
        const double scale = g.item() / static_cast<double>(z.size());
        std::vector<double> dz(z.size());
        for (std::size_t i = 0; i < z.size(); ++i) {
          dz[i] = (kernels::sigmoid(z[i]) - y[i]) * scale;
        }
        accumulate(in[0], Tensor(z.shape(), std::move(dz)));
        break;
      }
    }
  }

  GradientMap out;
  for (std::size_t idx = 0; idx < graph.size(); ++idx) {
    const TapeNode& nd = graph.node_at(idx);
    if (nd.kind != OpKind::parameter) continue;
    if (idx < n && grads[idx]) {
      out.grads_.emplace(idx, std::move(*grads[idx]));
    } else {
      out.grads_.emplace(idx, Tensor::zeros(nd.value.shape()));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Finite-difference verification.

// Builds a scalar loss on `graph` from parameter nodes (one per tensor).
using ScalarFunction =
    std::function<NodeRef(Graph& graph, std::span<const NodeRef> params)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_entry = 0;
  std::size_t entries = 0;
};

namespace detail {

inline double eval_scalar(const ScalarFunction& f,
                          std::span<const Tensor> params) {
  Graph g;
  std::vector<NodeRef> nodes;
  nodes.reserve(params.size());
  for (const Tensor& p : params) nodes.push_back(g.parameter(p));
  const NodeRef loss = f(g, nodes);
  const double v = g.value(loss).item();
  if (!std::isfinite(v)) throw NumericError("gradient check: f is non-finite");
  return v;
}

}  // namespace detail

// Compares backward() with central differences (f(p+eps) - f(p-eps)) / 2eps
// for every parameter entry; error per entry is
// |ad - fd| / max(1e-8, |ad| + |fd|).
inline GradCheckResult gradient_check(const ScalarFunction& f,
                                      std::span<const Tensor> params,
                                      double eps) {
  if (!(eps > 0.0)) throw ShapeError("gradient check: eps must be > 0");
  Graph g;
  std::vector<NodeRef> nodes;
  for (const Tensor& p : params) nodes.push_back(g.parameter(p));
  const NodeRef loss = f(g, nodes);
  const GradientMap grads = backward(g, loss);

  GradCheckResult result;
  std::vector<Tensor> work(params.begin(), params.end());
  for (std::size_t pi = 0; pi < work.size(); ++pi) {
    const Tensor& ad = grads.at(nodes[pi]);
    for (std::size_t e = 0; e < work[pi].size(); ++e) {
      const double orig = work[pi][e];
      work[pi][e] = orig + eps;
      const double fp = detail::eval_scalar(f, work);
      work[pi][e] = orig - eps;
      const double fm = detail::eval_scalar(f, work);
      work[pi][e] = orig;
      const double fd = (fp - fm) / (2.0 * eps);
      const double a = ad[e];
      const double err =
          std::fabs(a - fd) / std::max(1e-8, std::fabs(a) + std::fabs(fd));
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_param = pi;
        result.worst_entry = e;
      }
      ++result.entries;
    }
  }
  return result;
}

inline double finite_difference_check(const ScalarFunction& f,
                                      std::span<const Tensor> params,
                                      double eps) {
  return gradient_check(f, params, eps).max_rel_error;
}

}  // namespace tgcnn
