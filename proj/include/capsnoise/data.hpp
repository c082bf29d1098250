#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "capsnoise/error.hpp"
#include "capsnoise/tensor.hpp"

namespace capsnoise {

inline constexpr std::size_t kNumClasses = 5;

struct Beat {
  Tensor signal;  // [L], values in [0, 1]
  std::size_t label = 0;

  friend bool operator==(const Beat&, const Beat&) = default;
};

struct Dataset {
  std::vector<Beat> beats;
  std::size_t length = 0;

  [[nodiscard]] std::size_t size() const noexcept { return beats.size(); }

  [[nodiscard]] std::array<std::size_t, kNumClasses> histogram() const {
    std::array<std::size_t, kNumClasses> h{};
    for (const Beat& b : beats) ++h[b.label];
    return h;
  }

  void validate() const {
    if (beats.empty()) throw DataError("dataset is empty");
    for (const Beat& b : beats) {
      if (b.signal.size() != length) throw DataError("dataset has inconsistent signal lengths");
      if (b.label >= kNumClasses) throw DataError("label " + std::to_string(b.label) + " outside 0..4");
      if (!b.signal.all_finite()) throw DataError("dataset contains non-finite values");
    }
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Min-max scale into [0, 1] when any value lies outside it. A constant
/// out-of-range signal is clamped instead.
inline void normalize_unit_range(Tensor& signal) {
  const auto [lo_it, hi_it] = std::minmax_element(signal.data().begin(), signal.data().end());
  const double lo = *lo_it, hi = *hi_it;
  if (lo >= 0.0 && hi <= 1.0) return;
  if (hi == lo) {
    for (double& v : signal.data()) v = std::clamp(v, 0.0, 1.0);
    return;
  }
  for (double& v : signal.data()) v = (v - lo) / (hi - lo);
}

namespace detail {

inline double parse_real(std::string_view field, std::size_t line_no) {
  while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
  while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r')) field.remove_suffix(1);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc{} || ptr != field.data() + field.size() || !std::isfinite(value)) {
    throw DataError("line " + std::to_string(line_no) + ": cannot parse '" + std::string(field) + "' as a number");
  }
  return value;
}

}  // namespace detail

/// Rows of L reals followed by an integer label in the last column.
inline Dataset parse_csv(std::istream& in) {
  Dataset ds;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::vector<double> fields;
    std::string_view rest(line);
    while (true) {
      const auto comma = rest.find(',');
      fields.push_back(detail::parse_real(rest.substr(0, comma), line_no));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (fields.size() < 2) throw DataError("line " + std::to_string(line_no) + ": need at least one value and a label");
    const double label = fields.back();
    fields.pop_back();
    if (label != std::floor(label) || label < 0.0 || label >= static_cast<double>(kNumClasses)) {
      throw DataError("line " + std::to_string(line_no) + ": label must be an integer in 0..4");
    }
    if (ds.beats.empty()) {
      ds.length = fields.size();
    } else if (fields.size() != ds.length) {
      throw DataError("line " + std::to_string(line_no) + ": expected " + std::to_string(ds.length) +
                      " values, got " + std::to_string(fields.size()));
    }
    const std::size_t n_values = fields.size();
    Tensor signal({n_values}, std::move(fields));
    normalize_unit_range(signal);
    ds.beats.push_back({std::move(signal), static_cast<std::size_t>(label)});
  }
  if (ds.beats.empty()) throw DataError("no rows in dataset");
  return ds;
}

inline Dataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return parse_csv(in);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

/// Shortest representation that parses back to the same double.
inline std::string format_real(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

inline void write_csv(const Dataset& ds, std::ostream& out) {
  for (const Beat& b : ds.beats) {
    for (double v : b.signal.data()) out << format_real(v) << ',';
    out << b.label << '\n';
  }
}

inline void save_csv(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  write_csv(ds, out);
  if (!out) throw DataError("write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// Synthetic heartbeat-like waveforms

struct Bump {
  double center;
  double width;
  double amplitude;  // negative for dips
};

struct BeatTemplate {
  const char* name;
  double baseline;
  std::vector<Bump> bumps;
};

inline const std::array<BeatTemplate, kNumClasses>& beat_templates() {
  static const std::array<BeatTemplate, kNumClasses> templates = {{
      {"spike", 0.2, {{0.50, 0.03, 0.70}}},
      {"wide-dome", 0.2, {{0.50, 0.15, 0.50}}},
      {"double-bump", 0.2, {{0.33, 0.05, 0.50}, {0.67, 0.05, 0.50}}},
      {"notch", 0.8, {{0.50, 0.03, -0.60}}},
      {"flat-with-dip", 0.5, {{0.70, 0.12, -0.30}}},
  }};
  return templates;
}

inline Tensor render_template(std::size_t cls, std::size_t length) {
  const BeatTemplate& tpl = beat_templates().at(cls);
  Tensor out({length});
  for (std::size_t t = 0; t < length; ++t) {
    const double pos = length == 1 ? 0.0 : static_cast<double>(t) / static_cast<double>(length - 1);
    double v = tpl.baseline;
    for (const Bump& b : tpl.bumps) {
      const double z = (pos - b.center) / b.width;
      v += b.amplitude * std::exp(-0.5 * z * z);
    }
    out[t] = v;
  }
  return out;
}

/// n_per_class beats of each class: template plus N(0, noise_std^2) noise, clipped to [0, 1].
inline Dataset synth_dataset(std::size_t n_per_class, std::size_t length, double noise_std, std::uint64_t seed) {
  if (n_per_class == 0) throw UsageError("synth: n_per_class must be positive");
  if (length < 2) throw UsageError("synth: length must be at least 2");
  if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) throw UsageError("synth: noise_std must be >= 0");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Dataset ds;
  ds.length = length;
  ds.beats.reserve(n_per_class * kNumClasses);
  for (std::size_t cls = 0; cls < kNumClasses; ++cls) {
    const Tensor tpl = render_template(cls, length);
    for (std::size_t n = 0; n < n_per_class; ++n) {
      Tensor signal = tpl;
      for (double& v : signal.data()) v = std::clamp(v + noise_std * normal(rng), 0.0, 1.0);
      ds.beats.push_back({std::move(signal), cls});
    }
  }
  return ds;
}

/// Stratified split: each class contributes round(fraction * n_class) beats to train.
inline std::pair<Dataset, Dataset> split(const Dataset& ds, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw UsageError("split: fraction must lie in (0, 1)");
  std::mt19937_64 rng(seed);
  std::array<std::vector<std::size_t>, kNumClasses> by_class;
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[ds.beats[i].label].push_back(i);
  Dataset train{{}, ds.length}, test{{}, ds.length};
  for (auto& idx : by_class) {
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(idx.size())));
    for (std::size_t k = 0; k < idx.size(); ++k) (k < n_train ? train : test).beats.push_back(ds.beats[idx[k]]);
  }
  if (train.beats.empty() || test.beats.empty()) throw DataError("split: one side of the split is empty");
  return {std::move(train), std::move(test)};
}

}  // namespace capsnoise
