// tgcnn command-line tool: featurize, synth, train, eval, gradcheck, ablate.
//
// Exit codes: 0 ok, 1 verification failure, 2 input/config error,
// 3 dimension mismatch, 4 numeric failure, 5 corrupt model file.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tgcnn/config.hpp"
#include "tgcnn/features.hpp"
#include "tgcnn/gradcheck.hpp"
#include "tgcnn/metrics.hpp"
#include "tgcnn/model_io.hpp"
#include "tgcnn/train.hpp"

namespace {

using namespace tgcnn;

enum Exit : int {
  kOk = 0,
  kVerifyFailed = 1,
  kInputError = 2,
  kDimensionError = 3,
  kNumericError = 4,
  kModelFileError = 5,
};

template <class F>
void write_text_file(const std::string& path, F&& writer) {
  std::ostringstream buf;
  writer(buf);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path + "'");
  const std::string s = buf.str();
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
  if (!out) throw InputError("failed writing '" + path + "'");
}

// --- featurize -------------------------------------------------------------

struct FeaturizeArgs {
  std::string input, manifest, output, output_manifest;
  bool corrected = false;
  double savi_l = 0.5;
};

int cmd_featurize(const FeaturizeArgs& a) {
  if (!(a.savi_l >= 0.0 && a.savi_l <= 1.0)) throw InputError("--savi-l must be in [0,1]");
  const BandManifest manifest = load_manifest(a.manifest);
  const SampleSet in = load_csv(a.input, manifest);
  FeatureConfig cfg;
  cfg.savi_L = a.savi_l;
  cfg.corrected_red_edge = a.corrected;
  const SampleSet out = compute_indices(in, cfg);
  save_csv(out, a.output);
  if (!a.output_manifest.empty()) save_manifest(out.manifest, a.output_manifest);
  std::cout << "featurized " << out.samples() << " samples: " << in.channels() << " -> "
            << out.channels() << " channels\n";
  return kOk;
}

// --- synth -------------------------------------------------------------------

struct SynthArgs {
  std::string task = "temporal", output;
  std::size_t n = 1000, t = 12, c = 6;
  std::uint64_t seed = 7;
};

int cmd_synth(const SynthArgs& a) {
  const SampleSet s = synth(parse_synth_task(a.task), a.n, a.t, a.c, a.seed);
  save_csv(s, a.output);
  std::cout << "wrote " << s.samples() * s.timesteps() << " rows to " << a.output << '\n';
  return kOk;
}

// --- train -------------------------------------------------------------------

struct TrainArgs {
  std::string config, train, val, out_model, history;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a) {
  const RunConfig rc = load_run_config(a.config);
  SampleSet tr = load_csv(a.train);
  SampleSet va = load_csv(a.val);
  const TGCNNConfig mc = resolve_model_config(rc, tr.timesteps(), tr.channels());
  if (va.timesteps() != tr.timesteps() || va.channels() != tr.channels()) {
    throw DimensionError("validation data has T=" + std::to_string(va.timesteps()) + ", C=" +
                         std::to_string(va.channels()) + "; training data has T=" +
                         std::to_string(tr.timesteps()) + ", C=" +
                         std::to_string(tr.channels()));
  }
  std::optional<ChannelStats> stats;
  if (rc.normalize) {
    auto [trn, st] = normalize(tr);
    tr = std::move(trn);
    va = normalize(va, st).first;
    stats = std::move(st);
  }
  EpochCallback progress;
  if (!a.quiet) {
    progress = [](std::size_t e, const EpochRecord& r) {
      std::cout << "epoch " << e << " train_loss=" << detail::format_double(r.train_loss)
                << " val_loss=" << detail::format_double(r.val_loss)
                << " val_f1=" << detail::format_double(r.val_f1) << '\n';
    };
  }
  TrainResult res = train(build(mc), tr, va, rc.train, progress);
  save_model(ModelBundle{std::move(res.model), stats}, a.out_model);
  write_text_file(a.history, [&](std::ostream& o) { write_history(o, res.history); });
  std::cout << "trained " << res.history.size() << " epochs";
  if (!res.history.empty()) {
    std::cout << ", final val_f1=" << detail::format_double(res.history.back().val_f1);
  }
  std::cout << '\n';
  return kOk;
}

// --- eval --------------------------------------------------------------------

struct EvalArgs {
  std::string model, data, report;
  double threshold = 0.5;
};

int cmd_eval(const EvalArgs& a) {
  if (!(a.threshold >= 0.0 && a.threshold <= 1.0)) {
    throw InputError("--threshold must be in [0,1]");
  }
  const ModelBundle b = load_model(a.model);
  SampleSet s = load_csv(a.data);
  if (b.input_norm) s = normalize(s, b.input_norm).first;
  const MetricsReport r = evaluate(b.model, s, a.threshold);
  write_text_file(a.report, [&](std::ostream& o) { write_report(o, r); });
  write_report(std::cout, r);
  return kOk;
}

// --- gradcheck ---------------------------------------------------------------

struct GradcheckArgs {
  std::uint64_t seed = 1;
  std::size_t seeds = 5;
  double eps = 1e-5;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  if (!(a.eps > 0.0) || !std::isfinite(a.eps)) throw InputError("--eps must be > 0");
  if (a.seeds == 0) throw InputError("--seeds must be >= 1");
  std::vector<ComponentCheck> worst;
  for (std::size_t i = 0; i < a.seeds; ++i) {
    const auto checks = gradcheck_suite(a.seed + i, a.eps);
    if (worst.empty()) worst = checks;
    for (std::size_t k = 0; k < checks.size(); ++k) {
      if (!(checks[k].max_rel_error <= worst[k].max_rel_error)) worst[k] = checks[k];
    }
  }
  std::vector<std::string> failed;
  for (const auto& c : worst) {
    const bool ok = c.max_rel_error < kGradTolerance;
    char line[160];
    std::snprintf(line, sizeof line, "%-24s max_rel_error=%.3e  %s", c.name.c_str(),
                  c.max_rel_error, ok ? "ok" : "FAIL");
    std::cout << line << '\n';
    if (!ok) failed.push_back(c.name);
  }
  if (!failed.empty()) {
    std::cout << "gradcheck failed:";
    for (const auto& n : failed) std::cout << ' ' << n;
    std::cout << '\n';
    return kVerifyFailed;
  }
  std::cout << "gradcheck passed (" << worst.size() << " components, " << a.seeds
            << " seeds, eps=" << a.eps << ")\n";
  return kOk;
}

// --- ablate ------------------------------------------------------------------

struct AblateArgs {
  std::string task = "temporal", config, report;
  std::size_t seeds = 3, n = 1000, t = 12, c = 6;
  std::uint64_t data_seed = 7;
};

int cmd_ablate(const AblateArgs& a) {
  if (a.seeds == 0) throw InputError("--seeds must be >= 1");
  const SynthTask task = parse_synth_task(a.task);
  RunConfig rc;
  if (!a.config.empty()) rc = load_run_config(a.config);
  const TGCNNConfig mc = resolve_model_config(rc, a.t, a.c);

  std::vector<std::pair<SampleSet, SampleSet>> splits;
  for (std::size_t i = 0; i < a.seeds; ++i) {
    const SampleSet s = synth(task, a.n, a.t, a.c, derive_seed(a.data_seed, i));
    auto [tr, te] = split(s, 0.8);
    if (rc.normalize) {
      auto [trn, st] = normalize(tr);
      te = normalize(te, st).first;
      tr = std::move(trn);
    }
    splits.emplace_back(std::move(tr), std::move(te));
  }
  const AblationReport rep = ablate(splits, mc, rc.train);
  write_ablation(std::cout, rep);
  if (!a.report.empty()) {
    write_text_file(a.report, [&](std::ostream& o) { write_ablation(o, rep); });
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TGCNN: time-gated convolutional network for crop classification"};
  app.require_subcommand(1);

  FeaturizeArgs fa;
  auto* featurize = app.add_subcommand("featurize", "Append the eight vegetation indices");
  featurize->add_option("--input", fa.input, "Input CSV")->required();
  featurize->add_option("--manifest", fa.manifest, "Band manifest")->required();
  featurize->add_option("--output", fa.output, "Output CSV")->required();
  featurize->add_option("--output-manifest", fa.output_manifest, "Write the extended manifest");
  featurize->add_flag("--corrected-indices", fa.corrected, "Use the RE band in NDRE and RECI");
  featurize->add_option("--savi-l", fa.savi_l, "SAVI soil factor L")->capture_default_str();

  SynthArgs sa;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic task");
  synth_cmd->add_option("--task", sa.task, "temporal | channel")->capture_default_str();
  synth_cmd->add_option("--n", sa.n, "Samples")->capture_default_str();
  synth_cmd->add_option("--t", sa.t, "Timesteps")->capture_default_str();
  synth_cmd->add_option("--c", sa.c, "Channels")->capture_default_str();
  synth_cmd->add_option("--seed", sa.seed, "Seed")->capture_default_str();
  synth_cmd->add_option("--output", sa.output, "Output CSV")->required();

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  train_cmd->add_option("--config", ta.config, "key=value config file")->required();
  train_cmd->add_option("--train", ta.train, "Training CSV")->required();
  train_cmd->add_option("--val", ta.val, "Validation CSV")->required();
  train_cmd->add_option("--out-model", ta.out_model, "Model file to write")->required();
  train_cmd->add_option("--history", ta.history, "History CSV to write")->required();
  train_cmd->add_flag("--quiet", ta.quiet, "No per-epoch output");

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a model");
  eval_cmd->add_option("--model", ea.model, "Model file")->required();
  eval_cmd->add_option("--data", ea.data, "CSV to evaluate")->required();
  eval_cmd->add_option("--report", ea.report, "Report file to write")->required();
  eval_cmd->add_option("--threshold", ea.threshold, "Decision threshold")->capture_default_str();

  GradcheckArgs ga;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  grad_cmd->add_option("--seed", ga.seed, "First seed")->capture_default_str();
  grad_cmd->add_option("--seeds", ga.seeds, "Number of seeds")->capture_default_str();
  grad_cmd->add_option("--eps", ga.eps, "Central-difference step")->capture_default_str();

  AblateArgs aa;
  auto* ablate_cmd = app.add_subcommand("ablate", "Compare branch modes on a synthetic task");
  ablate_cmd->add_option("--task", aa.task, "temporal | channel")->capture_default_str();
  ablate_cmd->add_option("--seeds", aa.seeds, "Seeds")->capture_default_str();
  ablate_cmd->add_option("--config", aa.config, "key=value config file");
  ablate_cmd->add_option("--report", aa.report, "Report file to write");
  ablate_cmd->add_option("--n", aa.n, "Samples per seed")->capture_default_str();
  ablate_cmd->add_option("--t", aa.t, "Timesteps")->capture_default_str();
  ablate_cmd->add_option("--c", aa.c, "Channels")->capture_default_str();
  ablate_cmd->add_option("--data-seed", aa.data_seed, "Base data seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kInputError;
  }

  try {
    if (*featurize) return cmd_featurize(fa);
    if (*synth_cmd) return cmd_synth(sa);
    if (*train_cmd) return cmd_train(ta);
    if (*eval_cmd) return cmd_eval(ea);
    if (*grad_cmd) return cmd_gradcheck(ga);
    if (*ablate_cmd) return cmd_ablate(aa);
  } catch (const DimensionError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kDimensionError;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNumericError;
  } catch (const ModelFileError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kModelFileError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInputError;
  }
  return kInputError;
}
