#include <gtest/gtest.h>

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "tgcnn/features.hpp"

using namespace tgcnn;

namespace {

constexpr std::size_t NDVI = 0, SAVI = 1, SR = 2, RECI = 3, NDRE = 4, MSAVI = 5, NDWI = 6,
                      GCI = 7;

double rel_err(double a, double b) {
  const double d = std::fabs(a - b);
  return d == 0.0 ? 0.0 : d / std::max(std::fabs(b), 1e-300);
}

BandManifest spectral_manifest() {
  BandManifest m;
  m.bands = {{"B8", 0, 835.0, BandRole::nir},
             {"B4", 1, 665.0, BandRole::red},
             {"B3", 2, 560.0, BandRole::green},
             {"B6", 3, 740.0, BandRole::red_edge},
             {"elev", 4, std::nullopt, BandRole::none}};
  return m;
}

SampleSet one_row(double nir, double red, double green, double re) {
  SampleSet s;
  s.values = tensor_create({1, 1, 5}, {nir, red, green, re, 100.0});
  s.labels = {1};
  s.ids = {"a"};
  s.manifest = spectral_manifest();
  return s;
}

}  // namespace

TEST(Indices, HandValues) {
  const FeatureConfig cfg;
  const auto v = vegetation_indices(0.5, 0.1, 0.2, 0.3, cfg);
  EXPECT_NEAR(v[NDVI], 0.666667, 1e-6);
  EXPECT_NEAR(v[SR], 5.0, 1e-12);
  EXPECT_NEAR(v[RECI], 4.0, 1e-12);
  EXPECT_NEAR(v[SAVI], 0.545455, 1e-6);
  EXPECT_NEAR(v[MSAVI], 0.552786, 1e-6);
  EXPECT_NEAR(v[NDWI], -0.428571, 1e-6);
  EXPECT_NEAR(v[GCI], 1.5, 1e-12);

  const auto eq = vegetation_indices(0.3, 0.3, 0.2, 0.3, cfg);
  EXPECT_EQ(eq[NDVI], 0.0);
  EXPECT_EQ(eq[NDRE], 0.0);
}

TEST(Indices, GuardedDenominators) {
  const FeatureConfig cfg;
  const auto v = vegetation_indices(0.4, 0.0, 0.0, 0.0, cfg);
  EXPECT_EQ(v[SR], 0.0);
  EXPECT_EQ(v[RECI], 0.0);
  EXPECT_EQ(v[GCI], 0.0);
  const auto z = vegetation_indices(0.0, 0.0, 0.0, 0.0, cfg);
  EXPECT_EQ(z[NDVI], 0.0);
  EXPECT_EQ(z[NDWI], 0.0);
  for (double x : z) EXPECT_TRUE(std::isfinite(x));
}

TEST(Indices, MatchStraightLineFormulas) {
  Rng rng(101);
  for (const bool corrected : {false, true}) {
    FeatureConfig cfg;
    cfg.corrected_red_edge = corrected;
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
      const double nir = rng.uniform(0.01, 1.0), r = rng.uniform(0.01, 1.0),
                   g = rng.uniform(0.01, 1.0), re = rng.uniform(0.01, 1.0);
      const double L = cfg.savi_L;
      const double rr = corrected ? re : r;
      const double expect[8] = {
          (nir - r) / (nir + r),
          (nir - r) / (nir + r + L) * (1 + L),
          nir / r,
          nir / rr - 1,
          (nir - rr) / (nir + rr),
          (2 * nir + 1 - std::sqrt((2 * nir + 1) * (2 * nir + 1) - 8 * (nir - r))) / 2,
          (g - nir) / (nir + g),
          nir / g - 1,
      };
      const auto got = vegetation_indices(nir, r, g, re, cfg);
      for (int k = 0; k < 8; ++k) worst = std::max(worst, rel_err(got[k], expect[k]));
    }
    EXPECT_LT(worst, 1e-12);
  }
}

TEST(Indices, AsPrintedRedEdgeRowsDuplicateRedRows) {
  Rng rng(103);
  const FeatureConfig cfg;
  for (int i = 0; i < 1000; ++i) {
    const auto v = vegetation_indices(rng.uniform(), rng.uniform(), rng.uniform(),
                                      rng.uniform(), cfg);
    EXPECT_EQ(v[NDRE], v[NDVI]);
    EXPECT_EQ(v[RECI], v[SR] - 1.0);
  }
}

TEST(Indices, RangesAndMsaviDiscriminant) {
  Rng rng(107);
  const FeatureConfig cfg;
  for (int i = 0; i < 5000; ++i) {
    const double nir = 1.0 - rng.uniform(), r = 1.0 - rng.uniform(), g = 1.0 - rng.uniform();
    const auto v = vegetation_indices(nir, r, g, 0.5, cfg);
    EXPECT_GE(v[NDVI], -1.0);
    EXPECT_LE(v[NDVI], 1.0);
    EXPECT_GE(v[NDWI], -1.0);
    EXPECT_LE(v[NDWI], 1.0);
    const double a = 2 * nir + 1;
    EXPECT_GE(a * a - 8 * (nir - r), 0.0);
    EXPECT_NEAR(a * a - 8 * (nir - r), (2 * nir - 1) * (2 * nir - 1) + 8 * r, 1e-12);
  }
}

TEST(Indices, SaviWithZeroLIsNdvi) {
  FeatureConfig cfg;
  cfg.savi_L = 0.0;
  Rng rng(109);
  for (int i = 0; i < 200; ++i) {
    const auto v = vegetation_indices(rng.uniform(), rng.uniform(), rng.uniform(), 0.1, cfg);
    EXPECT_EQ(v[SAVI], v[NDVI]);
  }
}

TEST(ComputeIndices, AppendsChannelsAndManifest) {
  const SampleSet s = one_row(0.5, 0.1, 0.2, 0.3);
  const SampleSet out = compute_indices(s, FeatureConfig{});
  ASSERT_EQ(out.channels(), 13u);
  EXPECT_EQ(out.values.at({0, 0, 4}), 100.0);
  EXPECT_NEAR(out.values.at({0, 0, 5}), 0.666667, 1e-6);
  EXPECT_EQ(out.manifest.bands[5].name, "NDVI");
  EXPECT_EQ(out.manifest.bands[12].name, "GCI");
  EXPECT_EQ(out.manifest.bands[12].column, 12u);
  EXPECT_FALSE(out.manifest.bands[12].wavelength_nm.has_value());
  EXPECT_EQ(out.labels, s.labels);
  out.validate();
}

TEST(ComputeIndices, CorrectedModeUsesRedEdge) {
  FeatureConfig cfg;
  cfg.corrected_red_edge = true;
  const SampleSet out = compute_indices(one_row(0.5, 0.1, 0.2, 0.3), cfg);
  EXPECT_NEAR(out.values.at({0, 0, 5 + NDRE}), 0.2 / 0.8, 1e-15);
  EXPECT_NEAR(out.values.at({0, 0, 5 + RECI}), 0.5 / 0.3 - 1, 1e-15);
}

TEST(ComputeIndices, Errors) {
  SampleSet s = one_row(0.5, 0.1, 0.2, 0.3);
  s.manifest.bands[2].role = BandRole::none;
  EXPECT_THROW(compute_indices(s, FeatureConfig{}), InputError);  // no green band

  SampleSet dup = one_row(0.5, 0.1, 0.2, 0.3);
  dup.manifest.bands[3].role = BandRole::nir;
  EXPECT_THROW(compute_indices(dup, FeatureConfig{}), InputError);

  SampleSet out_of_range = one_row(1.5, 0.1, 0.2, 0.3);
  EXPECT_THROW(compute_indices(out_of_range, FeatureConfig{}), InputError);

  SampleSet no_re = one_row(0.5, 0.1, 0.2, 0.3);
  no_re.manifest.bands[3].role = BandRole::none;
  EXPECT_NO_THROW(compute_indices(no_re, FeatureConfig{}));
  FeatureConfig cfg;
  cfg.corrected_red_edge = true;
  EXPECT_THROW(compute_indices(no_re, cfg), InputError);
}

TEST(Normalize, Example) {
  SampleSet s;
  s.values = tensor_create({2, 1, 2}, {1, 5, 3, 5});
  s.labels = {0, 1};
  s.ids = {"a", "b"};
  s.manifest = BandManifest::from_names({"u", "v"});
  auto [n, st] = normalize(s);
  EXPECT_EQ(st.mean, (std::vector<double>{2, 5}));
  EXPECT_EQ(st.std, (std::vector<double>{1, 0}));
  EXPECT_EQ(n.values.values(), (std::vector<double>{-1, 0, 1, 0}));

  // Reusing train statistics on new data.
  SampleSet t = s;
  t.values = tensor_create({2, 1, 2}, {4, 6, 2, 5});
  EXPECT_EQ(normalize(t, st).first.values.values(), (std::vector<double>{2, 1, 0, 0}));

  ChannelStats wrong{{0}, {1}};
  EXPECT_THROW(normalize(s, wrong), DimensionError);
}

TEST(Normalize, ZeroMeanUnitVariance) {
  const SampleSet s = synth(SynthTask::channel, 40, 6, 3, 5);
  const auto [n, st] = normalize(s);
  const ChannelStats after = channel_stats(n);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_NEAR(after.mean[k], 0.0, 1e-12);
    EXPECT_NEAR(after.std[k], 1.0, 1e-12);
  }
}

TEST(Csv, RoundTripIsExact) {
  SampleSet s = synth(SynthTask::temporal, 6, 5, 3, 11);
  s.values.mutable_data()[0] = 0.1 + 0.2;  // needs all 17 digits
  std::stringstream buf;
  write_csv(buf, s);
  const SampleSet r = read_csv(buf);
  EXPECT_EQ(r.values, s.values);
  EXPECT_EQ(r.labels, s.labels);
  EXPECT_EQ(r.ids, s.ids);
  EXPECT_EQ(r.manifest, s.manifest);

  std::stringstream again;
  write_csv(again, r);
  std::stringstream first;
  write_csv(first, s);
  EXPECT_EQ(again.str(), first.str());
}

TEST(Csv, ParsesHandWrittenFile) {
  std::istringstream in(
      "sample_id,t,a,b,label\n"
      "p1,0,1.5,2,1\n"
      "p1,1,-3,4e-1,1\n"
      "\n"
      "p2,0,0,0,0\n"
      "p2,1,1,1,0\n");
  const SampleSet s = read_csv(in);
  EXPECT_EQ(s.values.shape(), (Shape{2, 2, 2}));
  EXPECT_EQ(s.values.at({0, 1, 1}), 0.4);
  EXPECT_EQ(s.labels, (std::vector<int>{1, 0}));
  EXPECT_EQ(s.ids, (std::vector<std::string>{"p1", "p2"}));
}

namespace {

std::string csv_error(const std::string& text) {
  std::istringstream in(text);
  try {
    read_csv(in);
  } catch (const InputError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Csv, ErrorsNameTheLine) {
  const std::string h = "sample_id,t,a,label\n";
  EXPECT_NE(csv_error("").find("line 1"), std::string::npos);
  EXPECT_NE(csv_error("id,t,a,label\n").find("line 1"), std::string::npos);
  EXPECT_NE(csv_error(h + "p,0,1,1\np,1,x,1\n").find("line 3"), std::string::npos);
  EXPECT_NE(csv_error(h + "p,0,1,1\np,1,2\n").find("line 3"), std::string::npos);
  EXPECT_NE(csv_error(h + "p,0,1,1\np,2,2,1\n").find("line 3"), std::string::npos);
  EXPECT_NE(csv_error(h + "p,0,1,1\np,1,2,0\n").find("line 3"), std::string::npos);
  EXPECT_NE(csv_error(h + "p,0,1,1\nq,0,1,1\np,1,1,1\n").find("line 4"), std::string::npos);
  EXPECT_NE(csv_error(h + "p,0,1,1\np,1,1,1\nq,0,1,0\nr,0,1,0\n").find("line"),
            std::string::npos);
  EXPECT_NE(csv_error(h + "p,0,1,2\n").find("line 2"), std::string::npos);
  EXPECT_NE(csv_error(h + "p,0,nan,1\n").find("line 2"), std::string::npos);
  EXPECT_FALSE(csv_error(h).empty());
}

TEST(Csv, ManifestClampsReflectance) {
  const std::string text =
      "sample_id,t,B8,B4,B3,B6,elev,label\n"
      "p,0,1.2,-0.01,0.3,0.4,250,1\n";
  std::istringstream in(text);
  const SampleSet s = read_csv(in, spectral_manifest());
  EXPECT_EQ(s.values.at({0, 0, 0}), 1.0);
  EXPECT_EQ(s.values.at({0, 0, 1}), 0.0);
  EXPECT_EQ(s.values.at({0, 0, 4}), 250.0);

  std::istringstream bad("sample_id,t,B8,B4,B3,B5,elev,label\np,0,1,1,1,1,1,1\n");
  EXPECT_THROW(read_csv(bad, spectral_manifest()), InputError);
}

TEST(Manifest, RoundTripAndErrors) {
  std::stringstream buf;
  write_manifest(buf, spectral_manifest());
  EXPECT_EQ(read_manifest(buf), spectral_manifest());

  auto err = [](const std::string& text) {
    std::istringstream in(text);
    return read_manifest(in);
  };
  EXPECT_THROW(err("B8,0,835,NIR\nB4,2,665,R\n"), InputError);   // gap in columns
  EXPECT_THROW(err("B8,0,835,NIR\nB4,0,665,R\n"), InputError);   // duplicate column
  EXPECT_THROW(err("B8,0,835,XX\n"), InputError);                 // unknown role
  EXPECT_THROW(err("B8,0,abc,NIR\n"), InputError);
  EXPECT_THROW(err("B8,0,835\n"), InputError);
  EXPECT_EQ(err("B8,0,835,NIR\nNDVI,1,-,-\n").bands[1].wavelength_nm, std::nullopt);
}

TEST(Split, PrefixAndRest) {
  const SampleSet s = synth(SynthTask::channel, 10, 4, 2, 3);
  const auto [a, b] = split(s, 0.8);
  EXPECT_EQ(a.samples(), 8u);
  EXPECT_EQ(b.samples(), 2u);
  EXPECT_EQ(b.ids.front(), s.ids[8]);
  EXPECT_EQ(b.values.at({1, 3, 1}), s.values.at({9, 3, 1}));
  EXPECT_THROW(split(s, 1.0), ShapeError);
}

TEST(Synth, DeterministicAndShaped) {
  const SampleSet a = synth(SynthTask::temporal, 20, 12, 6, 5);
  const SampleSet b = synth(SynthTask::temporal, 20, 12, 6, 5);
  EXPECT_EQ(a.values, b.values);
  EXPECT_EQ(a.values.shape(), (Shape{20, 12, 6}));
  EXPECT_NE(synth(SynthTask::temporal, 20, 12, 6, 6).values, a.values);
  a.validate();
  int ones = 0;
  for (int y : a.labels) ones += y;
  EXPECT_EQ(ones, 10);
  EXPECT_THROW(synth(SynthTask::temporal, 1, 12, 6, 5), InputError);
  EXPECT_THROW(parse_synth_task("spatial"), InputError);
}

TEST(Synth, BumpShape) {
  EXPECT_NEAR(seasonal_bump(3, 3, 12), 0.3, 1e-15);
  EXPECT_EQ(seasonal_bump(0, 3, 12), 0.0);
  EXPECT_EQ(seasonal_bump(6, 3, 12), 0.0);
  EXPECT_NEAR(seasonal_bump(11, 1, 12), seasonal_bump(3, 1, 12), 1e-15);  // wraps
  for (int k = 0; k < 12; ++k) EXPECT_NEAR(seasonal_bump(k, 3, 12), seasonal_bump(k + 6, 9, 12), 1e-15);
}

// Class statistics over n samples: per-timestep class means differ for the
// temporal task, per-channel time averages agree within 3 sigma/sqrt(n).
TEST(Synth, TemporalTaskStatistics) {
  const std::size_t n = 2000, t = 12, c = 4;
  const SampleSet s = synth(SynthTask::temporal, n, t, c, 21);
  std::vector<double> step_mean[2] = {std::vector<double>(t), std::vector<double>(t)};
  std::vector<double> chan_mean[2] = {std::vector<double>(c), std::vector<double>(c)};
  for (std::size_t i = 0; i < n; ++i) {
    const int y = s.labels[i];
    for (std::size_t k = 0; k < t; ++k)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double v = s.values.at({i, k, ch}) / (n / 2.0);
        step_mean[y][k] += v / c;
        chan_mean[y][ch] += v / t;
      }
  }
  // Each per-channel time average is a mean over (n/2)*t noise draws.
  const double tol = 3.0 * std::sqrt(2.0) * kSynthNoise / std::sqrt(n / 2.0 * t);
  for (std::size_t ch = 0; ch < c; ++ch) EXPECT_LT(std::fabs(chan_mean[0][ch] - chan_mean[1][ch]), tol);
  EXPECT_GT(step_mean[0][3] - step_mean[1][3], 0.25);
  EXPECT_GT(step_mean[1][9] - step_mean[0][9], 0.25);
}

TEST(Synth, ChannelTaskStatistics) {
  const std::size_t n = 2000, t = 6, c = 4;
  const SampleSet s = synth(SynthTask::channel, n, t, c, 23);
  std::vector<double> mean[2] = {std::vector<double>(c), std::vector<double>(c)};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < t; ++k)
      for (std::size_t ch = 0; ch < c; ++ch)
        mean[s.labels[i]][ch] += s.values.at({i, k, ch}) / (n / 2.0 * t);
  const double tol = 3.0 * std::sqrt(2.0) * kSynthNoise / std::sqrt(n / 2.0 * t);
  EXPECT_NEAR(mean[1][0] - mean[0][0], kSynthAmplitude, tol);
  EXPECT_NEAR(mean[1][1] - mean[0][1], kSynthAmplitude, tol);
  EXPECT_NEAR(mean[1][2] - mean[0][2], 0.0, tol);
  EXPECT_NEAR(mean[1][3] - mean[0][3], 0.0, tol);
}
