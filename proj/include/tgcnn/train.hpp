#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tgcnn/autodiff.hpp"
#include "tgcnn/error.hpp"
#include "tgcnn/features.hpp"
#include "tgcnn/metrics.hpp"
#include "tgcnn/model.hpp"
#include "tgcnn/random.hpp"

namespace tgcnn {

enum class Optimizer { adam, sgd };

inline std::string_view to_string(Optimizer o) {
  return o == Optimizer::adam ? "adam" : "sgd";
}

inline Optimizer parse_optimizer(std::string_view s) {
  if (s == "adam") return Optimizer::adam;
  if (s == "sgd") return Optimizer::sgd;
  throw InputError("unknown optimizer '" + std::string(s) + "' (adam|sgd)");
}

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t epochs = 50;
  std::size_t batch_size = 16;
  Optimizer optimizer = Optimizer::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;  // batch order
  std::optional<std::size_t> early_stop_patience;
  double threshold = 0.5;  // validation F1 cut

  void validate() const {
    auto fail = [](const std::string& m) { throw InputError("train config: " + m); };
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
      fail("learning_rate must be > 0");
    }
    if (batch_size == 0) fail("batch_size must be >= 1");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) fail("beta1 must be in [0,1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) fail("beta2 must be in [0,1)");
    if (!(adam_eps > 0.0)) fail("adam_eps must be > 0");
    if (early_stop_patience && *early_stop_patience == 0) {
      fail("early_stop_patience must be >= 1");
    }
    if (!(threshold >= 0.0 && threshold <= 1.0)) fail("threshold must be in [0,1]");
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// ---------------------------------------------------------------------------
// Optimizers.

struct OptimizerState {
  std::vector<Tensor> m;  // first moments (adam only)
  std::vector<Tensor> v;  // second moments (adam only)
  std::uint64_t step = 0;
};

// One update of every parameter in place. sgd: p -= lr g. adam: bias-corrected
// moments with the configured betas and eps.
inline void optimizer_step(Optimizer kind, std::span<Tensor* const> params,
                           std::span<const Tensor> grads, OptimizerState& state,
                           const TrainConfig& cfg) {
  if (params.size() != grads.size()) {
    throw ShapeError("optimizer: " + std::to_string(params.size()) +
                     " parameters, " + std::to_string(grads.size()) + " gradients");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i].shape()) {
      throw ShapeError("optimizer: gradient " + std::to_string(i) + " has shape " +
                       shape_str(grads[i].shape()) + ", parameter " +
                       shape_str(params[i]->shape()));
    }
  }
  const double lr = cfg.learning_rate;
  ++state.step;
  if (kind == Optimizer::sgd) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto p = params[i]->mutable_data();
      const auto g = grads[i].data();
      for (std::size_t k = 0; k < p.size(); ++k) p[k] -= lr * g[k];
    }
    return;
  }
  if (state.m.empty()) {
    for (const Tensor* p : params) {
      state.m.push_back(Tensor::zeros(p->shape()));
      state.v.push_back(Tensor::zeros(p->shape()));
    }
  }
  if (state.m.size() != params.size()) {
    throw ShapeError("optimizer: state built for a different parameter list");
  }
  const double b1 = cfg.beta1, b2 = cfg.beta2;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(b1, t);
  const double c2 = 1.0 - std::pow(b2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->mutable_data();
    auto m = state.m[i].mutable_data();
    auto v = state.v[i].mutable_data();
    const auto g = grads[i].data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = b1 * m[k] + (1.0 - b1) * g[k];
      v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      p[k] -= lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Loss and inference.

inline double bce_loss(std::span<const double> logits, std::span<const int> labels) {
  if (logits.size() != labels.size()) {
    throw ShapeError("bce_loss: logits and labels differ in length");
  }
  if (logits.empty()) throw ShapeError("bce_loss: empty batch");
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    s += kernels::bce_with_logit(logits[i], static_cast<double>(labels[i]));
  }
  return s / static_cast<double>(logits.size());
}

namespace detail {

inline void check_dims(const TGCNNModel& m, const SampleSet& s, std::string_view what) {
  if (s.timesteps() != m.config.T || s.channels() != m.config.C) {
    throw DimensionError(std::string(what) + ": data has T=" +
                         std::to_string(s.timesteps()) + ", C=" +
                         std::to_string(s.channels()) + "; model expects T=" +
                         std::to_string(m.config.T) + ", C=" +
                         std::to_string(m.config.C));
  }
}

inline Tensor gather_batch(const SampleSet& s, std::span<const std::size_t> idx) {
  const std::size_t per = s.timesteps() * s.channels();
  std::vector<double> v;
  v.reserve(idx.size() * per);
  const auto d = s.values.data();
  for (std::size_t i : idx) {
    const auto row = d.subspan(i * per, per);
    v.insert(v.end(), row.begin(), row.end());
  }
  return Tensor({idx.size(), s.timesteps(), s.channels()}, std::move(v));
}

inline std::vector<Tensor*> mutable_parameters(TGCNNModel& m) {
  std::vector<Tensor*> out;
  visit_parameters(m, [&](const std::string&, Tensor& t) { out.push_back(&t); });
  return out;
}

}  // namespace detail

inline constexpr std::size_t kInferenceBatch = 256;

// Logits for every sample. Samples are independent through the network, so
// the batch size does not change the result.
inline std::vector<double> predict(const TGCNNModel& m, const SampleSet& s) {
  detail::check_dims(m, s, "predict");
  std::vector<double> out;
  out.reserve(s.samples());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < s.samples(); start += kInferenceBatch) {
    idx.clear();
    for (std::size_t i = start; i < std::min(s.samples(), start + kInferenceBatch); ++i) {
      idx.push_back(i);
    }
    const Tensor logits = predict_logits(m, detail::gather_batch(s, idx));
    out.insert(out.end(), logits.data().begin(), logits.data().end());
  }
  return out;
}

inline std::vector<double> probabilities(std::span<const double> logits) {
  std::vector<double> p(logits.size());
  std::transform(logits.begin(), logits.end(), p.begin(), kernels::sigmoid);
  return p;
}

inline MetricsReport evaluate(const TGCNNModel& m, const SampleSet& s,
                              double threshold = 0.5) {
  if (s.samples() == 0) throw InputError("evaluate: empty sample set");
  const auto p = probabilities(predict(m, s));
  return compute_metrics(p, s.labels, threshold);
}

// ---------------------------------------------------------------------------
// Training.

struct EpochRecord {
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_f1 = 0.0;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainingHistory {
  std::vector<EpochRecord> epochs;

  std::size_t size() const { return epochs.size(); }
  bool empty() const { return epochs.empty(); }
  const EpochRecord& back() const { return epochs.back(); }

  friend bool operator==(const TrainingHistory&, const TrainingHistory&) = default;
};

inline void write_history(std::ostream& out, const TrainingHistory& h) {
  using detail::format_double;
  out << "epoch,train_loss,val_loss,val_f1\n";
  for (std::size_t e = 0; e < h.epochs.size(); ++e) {
    const auto& r = h.epochs[e];
    out << e << ',' << format_double(r.train_loss) << ','
        << format_double(r.val_loss) << ',' << format_double(r.val_f1) << '\n';
  }
}

struct TrainResult {
  TGCNNModel model;
  TrainingHistory history;
};

// Optional per-epoch hook, e.g. for progress output.
using EpochCallback = std::function<void(std::size_t epoch, const EpochRecord&)>;

// Mini-batch training from a copy of `model`. Batch order comes from an Rng
// seeded with cfg.seed, reshuffled each epoch. train_loss is the
// sample-weighted mean of the batch losses seen during the epoch. Early
// stopping keeps the final weights, not the best ones.
inline TrainResult train(const TGCNNModel& model, const SampleSet& train_set,
                         const SampleSet& val_set, const TrainConfig& cfg,
                         const EpochCallback& on_epoch = {}) {
  cfg.validate();
  detail::check_dims(model, train_set, "train");
  detail::check_dims(model, val_set, "validation");
  if (train_set.labels.size() != train_set.samples()) {
    throw ShapeError("train: labels do not match samples");
  }

  TrainResult r{model, {}};
  const auto params = detail::mutable_parameters(r.model);
  OptimizerState state;
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(train_set.samples());
  std::iota(order.begin(), order.end(), 0);
  std::optional<double> best_f1;
  std::size_t since_best = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, order.size() - start);
      const std::span<const std::size_t> idx(order.data() + start, len);
      std::vector<double> y;
      y.reserve(len);
      for (std::size_t i : idx) y.push_back(train_set.labels[i]);

      Graph g;
      const NodeRef logits = forward(g, r.model, g.constant(detail::gather_batch(train_set, idx)));
      const NodeRef loss = ad::bce_with_logits(g, logits, g.constant(Tensor({len}, std::move(y))));
      const double lv = g.value(loss).item();
      if (!std::isfinite(lv)) {
        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch));
      }
      loss_sum += lv * static_cast<double>(len);
      const GradientMap grads = backward(g, loss);
      std::vector<Tensor> gs;
      gs.reserve(params.size());
      for (const Tensor* p : params) gs.push_back(grads.at(*g.find_bound(*p)));
      optimizer_step(cfg.optimizer, params, gs, state, cfg);
    }

    EpochRecord rec;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    const auto logits = predict(r.model, val_set);
    rec.val_loss = bce_loss(logits, val_set.labels);
    rec.val_f1 = compute_metrics(probabilities(logits), val_set.labels, cfg.threshold).f1;
    if (!std::isfinite(rec.train_loss) || !std::isfinite(rec.val_loss)) {
      throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch));
    }
    r.history.epochs.push_back(rec);
    if (on_epoch) on_epoch(epoch, rec);

    if (cfg.early_stop_patience) {
      if (!best_f1 || rec.val_f1 > *best_f1) {
        best_f1 = rec.val_f1;
        since_best = 0;
      } else if (++since_best >= *cfg.early_stop_patience) {
        break;
      }
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Branch ablation.

inline constexpr BranchMode kAblationModes[] = {
    BranchMode::full, BranchMode::stepwise_only, BranchMode::channelwise_only};

struct AblationRun {
  std::size_t seed_index = 0;
  BranchMode mode = BranchMode::full;
  MetricsReport metrics;
  std::size_t epochs_run = 0;
};

struct AblationReport {
  std::vector<AblationRun> runs;  // seed-major, modes in kAblationModes order
  std::size_t seeds = 0;

  std::vector<double> f1_for(BranchMode mode) const {
    std::vector<double> out;
    for (const auto& r : runs) {
      if (r.mode == mode) out.push_back(r.metrics.f1);
    }
    return out;
  }

  // Per-seed stepwise_only F1 minus channelwise_only F1.
  std::vector<double> gaps() const {
    const auto s = f1_for(BranchMode::stepwise_only);
    const auto c = f1_for(BranchMode::channelwise_only);
    std::vector<double> out(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) out[i] = s[i] - c[i];
    return out;
  }
};

// Middle element; mean of the two middle elements for even sizes.
inline double median(std::vector<double> v) {
  if (v.empty()) throw ShapeError("median: empty input");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double median_gap(const AblationReport& r) { return median(r.gaps()); }

// Seed i trains every branch mode on splits[i] with model seed
// derive_seed(base.seed, i) and batch-order seed derive_seed(train.seed, i),
// so the modes differ only in architecture.
inline AblationReport ablate(std::span<const std::pair<SampleSet, SampleSet>> splits,
                             const TGCNNConfig& base, const TrainConfig& tcfg) {
  AblationReport rep;
  rep.seeds = splits.size();
  for (std::size_t i = 0; i < splits.size(); ++i) {
    const auto& [tr, te] = splits[i];
    for (BranchMode mode : kAblationModes) {
      TGCNNConfig mc = base;
      mc.branch_mode = mode;
      mc.seed = derive_seed(base.seed, i);
      TrainConfig tc = tcfg;
      tc.seed = derive_seed(tcfg.seed, i);
      const auto res = train(build(mc), tr, te, tc);
      rep.runs.push_back({i, mode, evaluate(res.model, te, tc.threshold),
                          res.history.size()});
    }
  }
  return rep;
}

inline void write_ablation(std::ostream& out, const AblationReport& r) {
  using detail::format_double;
  out << "seed,mode,f1,auc_roc,iou,accuracy,epochs\n";
  for (const auto& run : r.runs) {
    out << run.seed_index << ',' << to_string(run.mode) << ','
        << format_double(run.metrics.f1) << ',' << format_double(run.metrics.auc_roc)
        << ',' << format_double(run.metrics.iou) << ','
        << format_double(run.metrics.accuracy) << ',' << run.epochs_run << '\n';
  }
  for (BranchMode m : kAblationModes) {
    out << "# median_f1_" << to_string(m) << '=' << format_double(median(r.f1_for(m)))
        << '\n';
  }
  out << "# median_gap=" << format_double(median_gap(r)) << '\n';
}

}  // namespace tgcnn
