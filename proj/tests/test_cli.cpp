#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "tgcnn/features.hpp"
#include "tgcnn/model_io.hpp"

namespace fs = std::filesystem;

namespace {

// One scratch directory per process: ctest runs each test in its own process,
// possibly in parallel.
const fs::path kTmp = fs::path(TGCNN_TEST_TMP) / std::to_string(getpid());

struct ScratchCleanup : ::testing::Environment {
  void TearDown() override { fs::remove_all(kTmp); }
};
const auto* const kCleanup = ::testing::AddGlobalTestEnvironment(new ScratchCleanup);

struct CliResult {
  int code;
  std::string out;
};

CliResult run_cli(const std::string& args) {
  fs::create_directories(kTmp);
  const fs::path log = kTmp / "last_run.log";
  const std::string cmd = std::string("\"") + TGCNN_CLI + "\" " + args + " > \"" +
                          log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  std::stringstream buf;
  {
    std::ifstream in(log);
    buf << in.rdbuf();
  }
  fs::remove(log);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, buf.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << text;
}

std::string path(const std::string& name) { return "\"" + (kTmp / name).string() + "\""; }

// Small end-to-end fixture: synthetic data and a fast config.
class Pipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::create_directories(kTmp);
    ASSERT_EQ(run_cli("synth --task temporal --n 80 --t 8 --c 3 --seed 1 --output " +
                    path("p_train.csv")).code, 0);
    ASSERT_EQ(run_cli("synth --task temporal --n 20 --t 8 --c 3 --seed 2 --output " +
                    path("p_val.csv")).code, 0);
    write(kTmp / "p.cfg", "F=4\nH=8\nN=1\nepochs=3\nbatch_size=8\nlearning_rate=0.005\n");
  }

  static std::string train_args(const std::string& tag) {
    return "train --quiet --config " + path("p.cfg") + " --train " + path("p_train.csv") +
           " --val " + path("p_val.csv") + " --out-model " + path(tag + ".model") +
           " --history " + path(tag + ".history.csv");
  }
};

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run_cli("").code, 2);
  EXPECT_EQ(run_cli("frobnicate").code, 2);
  EXPECT_EQ(run_cli("synth").code, 2);  // --output missing
  EXPECT_EQ(run_cli("--help").code, 0);
}

TEST(Cli, SynthIsDeterministicAndSized) {
  ASSERT_EQ(run_cli("synth --task temporal --n 1000 --t 12 --c 6 --output " + path("s1.csv")).code, 0);
  ASSERT_EQ(run_cli("synth --task temporal --n 1000 --t 12 --c 6 --output " + path("s2.csv")).code, 0);
  const std::string a = slurp(kTmp / "s1.csv");
  EXPECT_EQ(a, slurp(kTmp / "s2.csv"));
  std::size_t lines = 0;
  for (char ch : a) lines += ch == '\n';
  EXPECT_EQ(lines, 12001u);  // header + n*t rows
  EXPECT_EQ(run_cli("synth --n 1 --output " + path("s3.csv")).code, 2);
  EXPECT_EQ(run_cli("synth --task spatial --output " + path("s3.csv")).code, 2);
}

TEST(Cli, Featurize) {
  write(kTmp / "f.manifest", "B8,0,835,NIR\nB4,1,665,R\nB3,2,560,G\nB6,3,740,RE\nelev,4,-,-\nslope,5,-,-\n");
  write(kTmp / "f.csv",
        "sample_id,t,B8,B4,B3,B6,elev,slope,label\n"
        "a,0,0.5,0.1,0.2,0.3,120,3,1\n"
        "a,1,0.4,0.2,0.2,0.3,120,3,1\n"
        "b,0,0.3,0.3,0.1,0.2,80,1,0\n"
        "b,1,0.2,0.1,0.1,0.2,80,1,0\n");
  ASSERT_EQ(run_cli("featurize --input " + path("f.csv") + " --manifest " + path("f.manifest") +
                  " --output " + path("f_out.csv") + " --output-manifest " +
                  path("f_out.manifest")).code, 0);
  const tgcnn::SampleSet s = tgcnn::load_csv((kTmp / "f_out.csv").string());
  ASSERT_EQ(s.channels(), 14u);
  EXPECT_EQ(s.manifest.bands[6].name, "NDVI");
  EXPECT_NEAR(s.values.at({0, 0, 6}), 0.666667, 1e-6);
  EXPECT_EQ(tgcnn::load_manifest((kTmp / "f_out.manifest").string()).size(), 14u);

  ASSERT_EQ(run_cli("featurize --savi-l 0 --input " + path("f.csv") + " --manifest " +
                  path("f.manifest") + " --output " + path("f_l0.csv")).code, 0);
  const tgcnn::SampleSet l0 = tgcnn::load_csv((kTmp / "f_l0.csv").string());
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t t = 0; t < 2; ++t) EXPECT_EQ(l0.values.at({i, t, 7}), l0.values.at({i, t, 6}));

  write(kTmp / "f_nonir.manifest", "B8,0,835,-\nB4,1,665,R\nB3,2,560,G\nB6,3,740,RE\nelev,4,-,-\nslope,5,-,-\n");
  EXPECT_EQ(run_cli("featurize --input " + path("f.csv") + " --manifest " + path("f_nonir.manifest") +
                  " --output " + path("f_bad.csv")).code, 2);

  write(kTmp / "f_badrow.csv", "sample_id,t,B8,B4,B3,B6,elev,slope,label\na,0,0.5,0.1,0.2\n");
  const CliResult r = run_cli("featurize --input " + path("f_badrow.csv") + " --manifest " +
                      path("f.manifest") + " --output " + path("f_bad.csv"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("line 2"), std::string::npos) << r.out;
}

TEST_F(Pipeline, TrainIsByteDeterministic) {
  ASSERT_EQ(run_cli(train_args("a")).code, 0);
  ASSERT_EQ(run_cli(train_args("b")).code, 0);
  EXPECT_EQ(slurp(kTmp / "a.model"), slurp(kTmp / "b.model"));
  EXPECT_EQ(slurp(kTmp / "a.history.csv"), slurp(kTmp / "b.history.csv"));
  EXPECT_EQ(slurp(kTmp / "a.history.csv").rfind("epoch,train_loss,val_loss,val_f1\n", 0), 0u);
}

TEST_F(Pipeline, EvalReproducesFinalValidationF1) {
  ASSERT_EQ(run_cli(train_args("e")).code, 0);
  ASSERT_EQ(run_cli("eval --model " + path("e.model") + " --data " + path("p_val.csv") +
                  " --report " + path("e1.report")).code, 0);
  ASSERT_EQ(run_cli("eval --model " + path("e.model") + " --data " + path("p_val.csv") +
                  " --report " + path("e2.report")).code, 0);
  const std::string report = slurp(kTmp / "e1.report");
  EXPECT_EQ(report, slurp(kTmp / "e2.report"));
  std::vector<std::string> keys;
  std::istringstream lines(report);
  for (std::string l; std::getline(lines, l);) keys.push_back(l.substr(0, l.find('=')));
  EXPECT_EQ(keys, (std::vector<std::string>{"f1", "auc_roc", "iou", "accuracy", "tp", "fp", "tn",
                                            "fn", "threshold"}));
  const std::string hist = slurp(kTmp / "e.history.csv");
  const std::string last = hist.substr(hist.rfind('\n', hist.size() - 2) + 1);
  const std::string hist_f1 = last.substr(last.rfind(',') + 1, last.size() - last.rfind(',') - 2);
  const std::string rep_f1 = report.substr(3, report.find('\n') - 3);
  EXPECT_EQ(rep_f1, hist_f1);
}

TEST_F(Pipeline, ThresholdZeroPredictsAllPositive) {
  ASSERT_EQ(run_cli(train_args("z")).code, 0);
  ASSERT_EQ(run_cli("eval --threshold 0 --model " + path("z.model") + " --data " +
                  path("p_val.csv") + " --report " + path("z.report")).code, 0);
  const std::string r = slurp(kTmp / "z.report");
  EXPECT_NE(r.find("\nfn=0\n"), std::string::npos);
  EXPECT_NE(r.find("\ntn=0\n"), std::string::npos);
}

TEST_F(Pipeline, ErrorExitCodes) {
  ASSERT_EQ(run_cli(train_args("x")).code, 0);
  // Dimension mismatch: data with a different channel count.
  ASSERT_EQ(run_cli("synth --n 10 --t 8 --c 4 --output " + path("c4.csv")).code, 0);
  EXPECT_EQ(run_cli("eval --model " + path("x.model") + " --data " + path("c4.csv") +
                  " --report " + path("x.report")).code, 3);
  EXPECT_EQ(run_cli("train --quiet --config " + path("p.cfg") + " --train " + path("p_train.csv") +
                  " --val " + path("c4.csv") + " --out-model " + path("y.model") +
                  " --history " + path("y.csv")).code, 3);

  // Corrupt model file.
  std::string bytes = slurp(kTmp / "x.model");
  bytes[bytes.size() - 20] ^= 0x04;
  write(kTmp / "bad.model", bytes);
  EXPECT_EQ(run_cli("eval --model " + path("bad.model") + " --data " + path("p_val.csv") +
                  " --report " + path("x.report")).code, 5);
  EXPECT_EQ(run_cli("eval --model " + path("nothere.model") + " --data " + path("p_val.csv") +
                  " --report " + path("x.report")).code, 2);

  // Unknown config key is named.
  write(kTmp / "bad.cfg", "epochs=1\nlearning_rat=0.1\n");
  const CliResult r = run_cli("train --config " + path("bad.cfg") + " --train " + path("p_train.csv") +
                      " --val " + path("p_val.csv") + " --out-model " + path("y.model") +
                      " --history " + path("y.csv"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("learning_rat"), std::string::npos) << r.out;

  // Divergence surfaces as a numeric failure.
  write(kTmp / "div.cfg", "F=4\nH=8\nN=1\nepochs=3\noptimizer=sgd\nlearning_rate=1e300\n");
  EXPECT_EQ(run_cli("train --quiet --config " + path("div.cfg") + " --train " + path("p_train.csv") +
                  " --val " + path("p_val.csv") + " --out-model " + path("y.model") +
                  " --history " + path("y.csv")).code, 4);
}

TEST(Cli, Gradcheck) {
  const CliResult ok = run_cli("gradcheck");
  EXPECT_EQ(ok.code, 0) << ok.out;
  std::size_t component_lines = 0;
  std::istringstream lines(ok.out);
  for (std::string l; std::getline(lines, l);) component_lines += l.find("max_rel_error=") != std::string::npos;
  EXPECT_GE(component_lines, 10u);

  const CliResult bad = run_cli("gradcheck --seeds 1 --eps 10");
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.out.find("gradcheck failed:"), std::string::npos);
  EXPECT_EQ(run_cli("gradcheck --eps 0").code, 2);
}

TEST(Cli, AblateReportsEveryRun) {
  write(kTmp / "abl.cfg", "F=2\nH=4\nN=1\nepochs=1\n");
  const CliResult r = run_cli("ablate --task temporal --seeds 3 --n 20 --t 6 --c 2 --config " +
                      path("abl.cfg") + " --report " + path("abl.csv"));
  ASSERT_EQ(r.code, 0) << r.out;
  const std::string rep = slurp(kTmp / "abl.csv");
  EXPECT_EQ(rep, r.out);
  std::size_t runs = 0;
  std::istringstream lines(rep);
  std::string l;
  std::getline(lines, l);
  while (std::getline(lines, l)) runs += !l.empty() && l[0] != '#';
  EXPECT_EQ(runs, 9u);
  EXPECT_NE(rep.find("# median_gap="), std::string::npos);
}
