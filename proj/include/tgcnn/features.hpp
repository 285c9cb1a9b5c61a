#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <numbers>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tgcnn/error.hpp"
#include "tgcnn/random.hpp"
#include "tgcnn/tensor.hpp"

namespace tgcnn {

enum class BandRole { nir, red, green, red_edge, none };

inline std::string_view to_string(BandRole r) {
  switch (r) {
    case BandRole::nir: return "NIR";
    case BandRole::red: return "R";
    case BandRole::green: return "G";
    case BandRole::red_edge: return "RE";
    case BandRole::none: return "-";
  }
  return "-";
}

inline std::optional<BandRole> parse_band_role(std::string_view s) {
  if (s == "NIR") return BandRole::nir;
  if (s == "R") return BandRole::red;
  if (s == "G") return BandRole::green;
  if (s == "RE") return BandRole::red_edge;
  if (s == "-") return BandRole::none;
  return std::nullopt;
}

struct Band {
  std::string name;
  std::size_t column = 0;
  std::optional<double> wavelength_nm;  // nullopt for derived channels
  BandRole role = BandRole::none;

  friend bool operator==(const Band&, const Band&) = default;
};

// Ordered channel descriptors; bands[i].column == i.
struct BandManifest {
  std::vector<Band> bands;

  std::size_t size() const { return bands.size(); }

  std::optional<std::size_t> find(BandRole role) const {
    std::optional<std::size_t> hit;
    for (const Band& b : bands) {
      if (b.role != role) continue;
      if (hit) {
        throw InputError("manifest: role " + std::string(to_string(role)) +
                         " assigned to more than one band");
      }
      hit = b.column;
    }
    return hit;
  }

  std::size_t require(BandRole role) const {
    auto c = find(role);
    if (!c) {
      throw InputError("manifest: no band with role " +
                       std::string(to_string(role)));
    }
    return *c;
  }

  bool is_reflectance(std::size_t column) const {
    return bands.at(column).role != BandRole::none;
  }

  // Unlabelled manifest with one role-less band per name.
  static BandManifest from_names(const std::vector<std::string>& names) {
    BandManifest m;
    for (std::size_t i = 0; i < names.size(); ++i) {
      m.bands.push_back({names[i], i, std::nullopt, BandRole::none});
    }
    return m;
  }

  friend bool operator==(const BandManifest&, const BandManifest&) = default;
};

struct SampleSet {
  Tensor values;  // [N, T, C]
  std::vector<int> labels;
  BandManifest manifest;
  std::vector<std::string> ids;

  std::size_t samples() const { return values.dim(0); }
  std::size_t timesteps() const { return values.dim(1); }
  std::size_t channels() const { return values.dim(2); }

  void validate() const {
    if (values.rank() != 3) throw ShapeError("SampleSet: values must be [N,T,C]");
    if (labels.size() != samples() || ids.size() != samples()) {
      throw ShapeError("SampleSet: labels/ids length != sample count");
    }
    if (manifest.size() != channels()) {
      throw ShapeError("SampleSet: manifest has " +
                       std::to_string(manifest.size()) + " bands for " +
                       std::to_string(channels()) + " channels");
    }
    for (int y : labels) {
      if (y != 0 && y != 1) throw InputError("SampleSet: labels must be 0/1");
    }
  }
};

// Samples picked by index, in the given order.
inline SampleSet subset(const SampleSet& s, std::span<const std::size_t> idx) {
  const std::size_t per = s.timesteps() * s.channels();
  std::vector<double> v;
  v.reserve(idx.size() * per);
  SampleSet out;
  for (std::size_t i : idx) {
    const auto d = s.values.data().subspan(i * per, per);
    v.insert(v.end(), d.begin(), d.end());
    out.labels.push_back(s.labels.at(i));
    out.ids.push_back(s.ids.at(i));
  }
  out.values = Tensor({idx.size(), s.timesteps(), s.channels()}, std::move(v));
  out.manifest = s.manifest;
  return out;
}

// First `fraction` of the samples and the rest.
inline std::pair<SampleSet, SampleSet> split(const SampleSet& s,
                                             double fraction) {
  const auto n = s.samples();
  const auto k = static_cast<std::size_t>(std::llround(fraction * n));
  if (k == 0 || k >= n) throw ShapeError("split: both parts must be non-empty");
  std::vector<std::size_t> a(k), b(n - k);
  std::iota(a.begin(), a.end(), 0);
  std::iota(b.begin(), b.end(), k);
  return {subset(s, a), subset(s, b)};
}

// ---------------------------------------------------------------------------
// Vegetation indices.

struct FeatureConfig {
  double savi_L = 0.5;
  double denom_guard = 1e-12;
  // Use the RE band in NDRE and RECI instead of the R band.
  bool corrected_red_edge = false;
};

inline constexpr std::array<std::string_view, 8> kIndexNames = {
    "NDVI", "SAVI", "SR", "RECI", "NDRE", "MSAVI", "NDWI", "GCI"};

// Values in kIndexNames order.
using IndexValues = std::array<double, 8>;

inline IndexValues vegetation_indices(double nir, double red, double green,
                                      double red_edge,
                                      const FeatureConfig& cfg) {
  auto ratio = [&](double num, double den) {
    return std::fabs(den) < cfg.denom_guard ? 0.0 : num / den;
  };
  const double L = cfg.savi_L;
  const double re_or_r = cfg.corrected_red_edge ? red_edge : red;
  const double a = 2.0 * nir + 1.0;
  const double disc = std::max(0.0, a * a - 8.0 * (nir - red));
  IndexValues v{};
  v[0] = ratio(nir - red, nir + red);
  v[1] = ratio(nir - red, nir + red + L) * (1.0 + L);
  v[2] = ratio(nir, red);
  v[3] = ratio(nir, re_or_r) - (std::fabs(re_or_r) < cfg.denom_guard ? 0.0 : 1.0);
  v[4] = ratio(nir - re_or_r, nir + re_or_r);
  v[5] = (a - std::sqrt(disc)) / 2.0;
  v[6] = ratio(green - nir, nir + green);
  v[7] = ratio(nir, green) - (std::fabs(green) < cfg.denom_guard ? 0.0 : 1.0);
  return v;
}

// Appends the eight indices as new channels (kIndexNames order). Existing
// channels are copied unchanged.
inline SampleSet compute_indices(const SampleSet& s, const FeatureConfig& cfg) {
  if (!(cfg.denom_guard > 0.0)) {
    throw InputError("features: denom_guard must be > 0");
  }
  const std::size_t nir = s.manifest.require(BandRole::nir);
  const std::size_t red = s.manifest.require(BandRole::red);
  const std::size_t green = s.manifest.require(BandRole::green);
  const std::optional<std::size_t> re =
      cfg.corrected_red_edge
          ? std::optional<std::size_t>(s.manifest.require(BandRole::red_edge))
          : s.manifest.find(BandRole::red_edge);

  const std::size_t n = s.samples(), t = s.timesteps(), c = s.channels();
  const std::size_t out_c = c + kIndexNames.size();
  std::vector<double> out(n * t * out_c);
  const auto d = s.values.data();
  for (std::size_t row = 0; row < n * t; ++row) {
    const double* src = d.data() + row * c;
    for (std::size_t col : {nir, red, green}) {
      if (!(src[col] >= 0.0 && src[col] <= 1.0)) {
        throw InputError("features: reflectance " + std::to_string(src[col]) +
                         " outside [0,1] in band '" +
                         s.manifest.bands[col].name + "' (sample " +
                         std::to_string(row / t) + ", t " +
                         std::to_string(row % t) + ")");
      }
    }
    const double re_v = re ? src[*re] : 0.0;
    if (cfg.corrected_red_edge && !(re_v >= 0.0 && re_v <= 1.0)) {
      throw InputError("features: red-edge reflectance outside [0,1]");
    }
    double* dst = out.data() + row * out_c;
    std::copy_n(src, c, dst);
    const IndexValues v =
        vegetation_indices(src[nir], src[red], src[green], re_v, cfg);
    std::copy(v.begin(), v.end(), dst + c);
  }
  SampleSet r;
  r.values = Tensor({n, t, out_c}, std::move(out));
  r.labels = s.labels;
  r.ids = s.ids;
  r.manifest = s.manifest;
  for (std::size_t i = 0; i < kIndexNames.size(); ++i) {
    r.manifest.bands.push_back(
        {std::string(kIndexNames[i]), c + i, std::nullopt, BandRole::none});
  }
  return r;
}

// ---------------------------------------------------------------------------
// Channel normalization.

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> std;  // population standard deviation

  friend bool operator==(const ChannelStats&, const ChannelStats&) = default;
};

inline constexpr double kMinChannelStd = 1e-8;

inline ChannelStats channel_stats(const SampleSet& s) {
  const std::size_t c = s.channels();
  const std::size_t rows = s.samples() * s.timesteps();
  ChannelStats st{std::vector<double>(c, 0.0), std::vector<double>(c, 0.0)};
  const auto d = s.values.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < c; ++k) st.mean[k] += d[r * c + k];
  }
  for (double& m : st.mean) m /= static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < c; ++k) {
      const double dev = d[r * c + k] - st.mean[k];
      st.std[k] += dev * dev;
    }
  }
  for (double& v : st.std) v = std::sqrt(v / static_cast<double>(rows));
  return st;
}

// z-score per channel with the given statistics (or ones computed from s).
// Channels with std < 1e-8 are only mean-subtracted.
inline std::pair<SampleSet, ChannelStats> normalize(
    const SampleSet& s, const std::optional<ChannelStats>& stats = std::nullopt) {
  ChannelStats st = stats ? *stats : channel_stats(s);
  const std::size_t c = s.channels();
  if (st.mean.size() != c || st.std.size() != c) {
    throw DimensionError("normalize: statistics cover " +
                         std::to_string(st.mean.size()) + " channels, data has " +
                         std::to_string(c));
  }
  SampleSet out = s;
  auto d = out.values.mutable_data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    const std::size_t k = i % c;
    const double centered = d[i] - st.mean[k];
    d[i] = st.std[k] < kMinChannelStd ? centered : centered / st.std[k];
  }
  return {std::move(out), std::move(st)};
}

// ---------------------------------------------------------------------------
// Text I/O.

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line,
                                                  char sep = ',') {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

inline std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty()) {
    return std::nullopt;
  }
  return v;
}

template <class Int>
std::optional<Int> parse_int(std::string_view s) {
  s = trim(s);
  Int v{};
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty()) {
    return std::nullopt;
  }
  return v;
}

// Shortest representation that parses back to the identical double.
inline std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, p);
}

[[noreturn]] inline void fail_line(std::size_t line, const std::string& msg) {
  throw InputError("line " + std::to_string(line) + ": " + msg);
}

}  // namespace detail

// Manifest lines: name,column,wavelength_nm,role with role in
// {NIR,R,G,RE,-}; wavelength '-' marks a derived channel. Blank lines and
// '#' comments are skipped; an optional literal header line is accepted.
inline BandManifest read_manifest(std::istream& in) {
  BandManifest m;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto body = detail::trim(line);
    if (body.empty() || body.front() == '#') continue;
    if (body == "name,column,wavelength_nm,role") continue;
    const auto f = detail::split_fields(body);
    if (f.size() != 4) detail::fail_line(lineno, "manifest needs 4 fields");
    Band b;
    b.name = std::string(detail::trim(f[0]));
    if (b.name.empty()) detail::fail_line(lineno, "empty band name");
    auto col = detail::parse_int<std::size_t>(f[1]);
    if (!col) detail::fail_line(lineno, "bad column index");
    b.column = *col;
    if (detail::trim(f[2]) != "-") {
      auto wl = detail::parse_double(f[2]);
      if (!wl || !(*wl > 0.0) || !std::isfinite(*wl)) {
        detail::fail_line(lineno, "wavelength must be a positive number or '-'");
      }
      b.wavelength_nm = *wl;
    }
    auto role = parse_band_role(detail::trim(f[3]));
    if (!role) detail::fail_line(lineno, "unknown role '" + std::string(f[3]) + "'");
    b.role = *role;
    m.bands.push_back(std::move(b));
  }
  std::sort(m.bands.begin(), m.bands.end(),
            [](const Band& a, const Band& b) { return a.column < b.column; });
  for (std::size_t i = 0; i < m.bands.size(); ++i) {
    if (m.bands[i].column != i) {
      throw InputError("manifest: columns must be unique and dense from 0");
    }
  }
  if (m.bands.empty()) throw InputError("manifest: no bands");
  for (BandRole r : {BandRole::nir, BandRole::red, BandRole::green,
                     BandRole::red_edge}) {
    (void)m.find(r);  // throws on duplicate roles
  }
  return m;
}

inline void write_manifest(std::ostream& out, const BandManifest& m) {
  for (const Band& b : m.bands) {
    out << b.name << ',' << b.column << ','
        << (b.wavelength_nm ? detail::format_double(*b.wavelength_nm) : "-")
        << ',' << to_string(b.role) << '\n';
  }
}

inline BandManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open manifest '" + path + "'");
  return read_manifest(in);
}

inline void save_manifest(const BandManifest& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write manifest '" + path + "'");
  write_manifest(out, m);
}

// CSV: header `sample_id,t,<band...>,label`, one row per (sample, step),
// samples contiguous, t ascending from 0, label constant within a sample.
// With a manifest, header band names must match it and reflectance-role
// channels are clamped to [0, 1].
inline SampleSet read_csv(std::istream& in,
                          const std::optional<BandManifest>& manifest = std::nullopt) {
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line)) throw InputError("line 1: missing header");
  const auto header = detail::split_fields(detail::trim(line));
  if (header.size() < 4 || detail::trim(header[0]) != "sample_id" ||
      detail::trim(header[1]) != "t" || detail::trim(header.back()) != "label") {
    detail::fail_line(1, "header must be sample_id,t,<bands...>,label");
  }
  std::vector<std::string> names;
  for (std::size_t i = 2; i + 1 < header.size(); ++i) {
    names.emplace_back(detail::trim(header[i]));
  }
  const std::size_t c = names.size();
  BandManifest m;
  if (manifest) {
    if (manifest->size() != c) {
      detail::fail_line(1, "header has " + std::to_string(c) +
                               " bands, manifest " +
                               std::to_string(manifest->size()));
    }
    for (std::size_t i = 0; i < c; ++i) {
      if (manifest->bands[i].name != names[i]) {
        detail::fail_line(1, "band '" + names[i] + "' does not match manifest band '" +
                                 manifest->bands[i].name + "'");
      }
    }
    m = *manifest;
  } else {
    m = BandManifest::from_names(names);
  }

  std::vector<double> values;
  std::vector<int> labels;
  std::vector<std::string> ids;
  std::optional<std::size_t> steps;  // timesteps per sample
  std::size_t cur_t = 0;
  std::string cur_id;
  int cur_label = -1;
  auto close_sample = [&](std::size_t at_line) {
    if (ids.empty()) return;
    if (!steps) {
      steps = cur_t;
    } else if (*steps != cur_t) {
      detail::fail_line(at_line, "sample '" + cur_id + "' has " +
                                     std::to_string(cur_t) + " timesteps, expected " +
                                     std::to_string(*steps));
    }
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto f = detail::split_fields(detail::trim(line));
    if (f.size() != c + 3) {
      detail::fail_line(lineno, "expected " + std::to_string(c + 3) +
                                    " fields, got " + std::to_string(f.size()));
    }
    const std::string id(detail::trim(f[0]));
    if (id.empty()) detail::fail_line(lineno, "empty sample_id");
    auto t = detail::parse_int<std::size_t>(f[1]);
    if (!t) detail::fail_line(lineno, "non-integer t");
    auto label = detail::parse_int<int>(f.back());
    if (!label || (*label != 0 && *label != 1)) {
      detail::fail_line(lineno, "label must be 0 or 1");
    }
    if (ids.empty() || id != cur_id) {
      close_sample(lineno);
      if (std::find(ids.begin(), ids.end(), id) != ids.end()) {
        detail::fail_line(lineno, "rows of sample '" + id + "' are not contiguous");
      }
      ids.push_back(id);
      labels.push_back(*label);
      cur_id = id;
      cur_label = *label;
      cur_t = 0;
    } else if (*label != cur_label) {
      detail::fail_line(lineno, "label changes within sample '" + id + "'");
    }
    if (*t != cur_t) {
      detail::fail_line(lineno, "expected t=" + std::to_string(cur_t) + ", got " +
                                    std::to_string(*t));
    }
    for (std::size_t k = 0; k < c; ++k) {
      auto v = detail::parse_double(f[2 + k]);
      if (!v) detail::fail_line(lineno, "non-numeric value '" + std::string(f[2 + k]) + "'");
      if (!std::isfinite(*v)) detail::fail_line(lineno, "non-finite value");
      double x = *v;
      if (m.is_reflectance(k)) x = std::clamp(x, 0.0, 1.0);
      values.push_back(x);
    }
    ++cur_t;
  }
  close_sample(lineno);
  if (ids.empty()) throw InputError("csv: no data rows");
  SampleSet s;
  s.values = Tensor({ids.size(), *steps, c}, std::move(values));
  s.labels = std::move(labels);
  s.ids = std::move(ids);
  s.manifest = std::move(m);
  return s;
}

inline void write_csv(std::ostream& out, const SampleSet& s) {
  out << "sample_id,t";
  for (const Band& b : s.manifest.bands) out << ',' << b.name;
  out << ",label\n";
  const std::size_t t = s.timesteps(), c = s.channels();
  const auto d = s.values.data();
  std::string row;
  for (std::size_t i = 0; i < s.samples(); ++i) {
    for (std::size_t k = 0; k < t; ++k) {
      row = s.ids[i];
      row += ',';
      row += std::to_string(k);
      for (std::size_t ch = 0; ch < c; ++ch) {
        row += ',';
        row += detail::format_double(d[(i * t + k) * c + ch]);
      }
      row += ',';
      row += std::to_string(s.labels[i]);
      row += '\n';
      out << row;
    }
  }
}

inline SampleSet load_csv(const std::string& path,
                          const std::optional<BandManifest>& manifest = std::nullopt) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path + "'");
  return read_csv(in, manifest);
}

inline void save_csv(const SampleSet& s, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path + "'");
  write_csv(out, s);
}

// ---------------------------------------------------------------------------
// Synthetic tasks.

enum class SynthTask { temporal, channel };

inline SynthTask parse_synth_task(std::string_view s) {
  if (s == "temporal") return SynthTask::temporal;
  if (s == "channel") return SynthTask::channel;
  throw InputError("unknown task '" + std::string(s) + "' (temporal|channel)");
}

inline constexpr double kSynthAmplitude = 0.3;
inline constexpr double kSynthNoise = 0.1;

// Half-sine of width t/2 centred at `centre` on a circular season of length t.
inline double seasonal_bump(double step, double centre, double t) {
  double d = std::fmod(step - centre, t);
  if (d < -t / 2) d += t;
  if (d >= t / 2) d -= t;
  const double quarter = t / 4.0;
  if (std::fabs(d) >= quarter) return 0.0;
  return kSynthAmplitude * std::cos(std::numbers::pi * d / (2.0 * quarter));
}

// Labels alternate 0,1,0,... so any prefix split stays balanced.
//
// temporal: every channel of a sample carries the seasonal bump, centred at
//   t/4 for class 0 and 3t/4 for class 1. The profiles are circular shifts
//   of each other, so per-channel time averages coincide across classes
//   while per-timestep means differ.
// channel: flat in time; class 1 is shifted by +0.3 on the first c/2
//   channels.
// Both add N(0, 0.1^2) noise on top of per-channel base levels drawn once.
inline SampleSet synth(SynthTask task, std::size_t n, std::size_t t,
                       std::size_t c, std::uint64_t seed) {
  if (n < 2) throw InputError("synth: n must be >= 2");
  if (t < 4) throw InputError("synth: t must be >= 4");
  if (c < 2) throw InputError("synth: c must be >= 2");
  Rng rng(seed);
  std::vector<double> base(c);
  for (double& b : base) b = rng.uniform(0.2, 0.5);
  const double td = static_cast<double>(t);
  std::vector<double> v(n * t * c);
  SampleSet s;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = static_cast<int>(i % 2);
    for (std::size_t k = 0; k < t; ++k) {
      double* row = v.data() + (i * t + k) * c;
      for (std::size_t ch = 0; ch < c; ++ch) {
        double signal = 0.0;
        if (task == SynthTask::temporal) {
          const double centre = y == 0 ? td / 4.0 : 3.0 * td / 4.0;
          signal = seasonal_bump(static_cast<double>(k), centre, td);
        } else if (y == 1 && ch < c / 2) {
          signal = kSynthAmplitude;
        }
        row[ch] = base[ch] + signal + rng.normal(0.0, kSynthNoise);
      }
    }
    s.labels.push_back(y);
    std::string id = std::to_string(i);
    s.ids.push_back("s" + std::string(id.size() < 5 ? 5 - id.size() : 0, '0') + id);
  }
  s.values = Tensor({n, t, c}, std::move(v));
  std::vector<std::string> names;
  for (std::size_t ch = 0; ch < c; ++ch) names.push_back("x" + std::to_string(ch));
  s.manifest = BandManifest::from_names(names);
  return s;
}

}  // namespace tgcnn
