#pragma once

#include <fstream>
#include <istream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>

#include "tgcnn/error.hpp"
#include "tgcnn/features.hpp"
#include "tgcnn/model.hpp"
#include "tgcnn/train.hpp"

namespace tgcnn {

// Everything `tgcnn train` reads from its config file. T and C are optional:
// when absent they are taken from the training data.
struct RunConfig {
  TGCNNConfig model;
  TrainConfig train;
  bool normalize = true;
  bool has_T = false;
  bool has_C = false;
};

// Flat `key=value` lines; '#' starts a comment, blank lines are ignored.
inline RunConfig parse_run_config(std::istream& in) {
  RunConfig rc;
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view body = line;
    if (auto hash = body.find('#'); hash != std::string_view::npos) body = body.substr(0, hash);
    body = detail::trim(body);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string_view::npos) detail::fail_line(lineno, "expected key=value");
    const std::string key(detail::trim(body.substr(0, eq)));
    const std::string_view value = detail::trim(body.substr(eq + 1));
    if (!seen.insert(key).second) detail::fail_line(lineno, "duplicate key '" + key + "'");

    auto size = [&]() {
      auto v = detail::parse_int<std::size_t>(value);
      if (!v) detail::fail_line(lineno, key + ": expected a non-negative integer");
      return *v;
    };
    auto u64 = [&]() {
      auto v = detail::parse_int<std::uint64_t>(value);
      if (!v) detail::fail_line(lineno, key + ": expected a non-negative integer");
      return *v;
    };
    auto real = [&]() {
      auto v = detail::parse_double(value);
      if (!v || !std::isfinite(*v)) detail::fail_line(lineno, key + ": expected a number");
      return *v;
    };
    auto boolean = [&]() {
      if (value == "true" || value == "1") return true;
      if (value == "false" || value == "0") return false;
      detail::fail_line(lineno, key + ": expected true or false");
    };

    auto& m = rc.model;
    auto& t = rc.train;
    try {
      if (key == "T") m.T = size(), rc.has_T = true;
      else if (key == "C") m.C = size(), rc.has_C = true;
      else if (key == "w") m.w = size();
      else if (key == "F") m.F = size();
      else if (key == "H") m.H = size();
      else if (key == "N") m.N = size();
      else if (key == "branch_mode") m.branch_mode = parse_branch_mode(value);
      else if (key == "seed") m.seed = u64();
      else if (key == "train_seed") t.seed = u64();
      else if (key == "learning_rate") t.learning_rate = real();
      else if (key == "epochs") t.epochs = size();
      else if (key == "batch_size") t.batch_size = size();
      else if (key == "optimizer") t.optimizer = parse_optimizer(value);
      else if (key == "beta1") t.beta1 = real();
      else if (key == "beta2") t.beta2 = real();
      else if (key == "adam_eps") t.adam_eps = real();
      else if (key == "early_stop_patience") t.early_stop_patience = size();
      else if (key == "threshold") t.threshold = real();
      else if (key == "normalize") rc.normalize = boolean();
      else detail::fail_line(lineno, "unknown config key '" + key + "'");
    } catch (const InputError& e) {
      const std::string msg = e.what();
      if (msg.rfind("line ", 0) == 0) throw;
      detail::fail_line(lineno, msg);
    }
  }
  rc.train.validate();
  return rc;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config '" + path + "'");
  return parse_run_config(in);
}

inline void write_run_config(std::ostream& out, const RunConfig& rc) {
  using detail::format_double;
  const auto& m = rc.model;
  const auto& t = rc.train;
  if (rc.has_T) out << "T=" << m.T << '\n';
  if (rc.has_C) out << "C=" << m.C << '\n';
  out << "w=" << m.w << "\nF=" << m.F << "\nH=" << m.H << "\nN=" << m.N
      << "\nbranch_mode=" << to_string(m.branch_mode) << "\nseed=" << m.seed
      << "\ntrain_seed=" << t.seed << "\nlearning_rate=" << format_double(t.learning_rate)
      << "\nepochs=" << t.epochs << "\nbatch_size=" << t.batch_size
      << "\noptimizer=" << to_string(t.optimizer) << "\nbeta1=" << format_double(t.beta1)
      << "\nbeta2=" << format_double(t.beta2) << "\nadam_eps=" << format_double(t.adam_eps)
      << '\n';
  if (t.early_stop_patience) out << "early_stop_patience=" << *t.early_stop_patience << '\n';
  out << "threshold=" << format_double(t.threshold) << "\nnormalize="
      << (rc.normalize ? "true" : "false") << '\n';
}

// Fills T and C from data when the config left them out; a stated value that
// disagrees with the data is a dimension error.
inline TGCNNConfig resolve_model_config(const RunConfig& rc, std::size_t data_T,
                                        std::size_t data_C) {
  TGCNNConfig c = rc.model;
  if (rc.has_T && c.T != data_T) {
    throw DimensionError("config T=" + std::to_string(c.T) + " but data has T=" +
                         std::to_string(data_T));
  }
  if (rc.has_C && c.C != data_C) {
    throw DimensionError("config C=" + std::to_string(c.C) + " but data has C=" +
                         std::to_string(data_C));
  }
  c.T = data_T;
  c.C = data_C;
  c.validate();
  return c;
}

}  // namespace tgcnn
