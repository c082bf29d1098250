#pragma once

// Report emission (report.json, report.csv, SVG overlays) and the attack-set
// JSON-lines file. All output is a pure function of its input: no timestamps,
// sorted JSON keys, shortest round-trip number formatting.

#include <algorithm>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "capsnoise/evaluate.hpp"
#include "capsnoise/serialize.hpp"

namespace capsnoise {

// ---------------------------------------------------------------------------
// JSON

inline json to_json(const EvalCell& c) {
  json j{{"model", c.model},
         {"attack", c.attack},
         {"accuracy", c.accuracy},
         {"f1_macro", c.f1_macro},
         {"n_samples", c.n_samples}};
  j["recon_mse"] = c.recon_mse ? json(*c.recon_mse) : json(nullptr);
  return j;
}

inline EvalCell eval_cell_from_json(const json& j) {
  using detail::get_field;
  EvalCell c{get_field<std::string>(j, "model"), get_field<std::string>(j, "attack"), get_field<double>(j, "accuracy"),
             get_field<double>(j, "f1_macro"),   {},                                  get_field<std::size_t>(j, "n_samples")};
  const json& r = get_field<json>(j, "recon_mse");
  if (!r.is_null()) c.recon_mse = r.get<double>();
  return c;
}

inline json to_json(const SignalExample& e) {
  return {{"attack", e.attack},           {"source_index", e.source_index}, {"label", e.label},
          {"original", to_json(e.original)}, {"attacked", to_json(e.attacked)}, {"reconstruction", to_json(e.reconstruction)}};
}

inline SignalExample signal_example_from_json(const json& j) {
  using detail::get_field;
  return {get_field<std::string>(j, "attack"),
          get_field<std::size_t>(j, "source_index"),
          get_field<std::size_t>(j, "label"),
          tensor_from_json(get_field<json>(j, "original")),
          tensor_from_json(get_field<json>(j, "attacked")),
          tensor_from_json(get_field<json>(j, "reconstruction"))};
}

inline json to_json(const EvalReport& r) {
  json cells = json::array(), attacks = json::array(), examples = json::array();
  for (const EvalCell& c : r.cells) cells.push_back(to_json(c));
  for (const AttackSpec& a : r.attacks) attacks.push_back(to_json(a));
  for (const SignalExample& e : r.examples) examples.push_back(to_json(e));
  json robustness = nullptr;
  if (r.robustness) {
    robustness = {{"capsnet_mean_drop", r.robustness->capsnet_mean_drop},
                  {"cnn_mean_drop", r.robustness->cnn_mean_drop},
                  {"capsnet_more_robust", r.robustness->capsnet_more_robust}};
  }
  return {{"cells", cells},
          {"attacks", attacks},
          {"examples", examples},
          {"robustness", robustness},
          {"capsnet_config", to_json(r.capsnet_config)},
          {"cnn_config", to_json(r.cnn_config)},
          {"n_per_attack", r.n_per_attack},
          {"seed", r.seed},
          {"test_size", r.test_size},
          {"f1_variant", r.f1_variant},
          {"run", r.run}};
}

inline EvalReport eval_report_from_json(const json& j) {
  using detail::get_field;
  EvalReport r;
  for (const json& c : get_field<json>(j, "cells")) r.cells.push_back(eval_cell_from_json(c));
  for (const json& a : get_field<json>(j, "attacks")) r.attacks.push_back(attack_spec_from_json(a));
  for (const json& e : get_field<json>(j, "examples")) r.examples.push_back(signal_example_from_json(e));
  const json& rob = get_field<json>(j, "robustness");
  if (!rob.is_null()) {
    r.robustness = RobustnessSummary{get_field<double>(rob, "capsnet_mean_drop"), get_field<double>(rob, "cnn_mean_drop"),
                                     get_field<bool>(rob, "capsnet_more_robust")};
  }
  r.capsnet_config = capsnet_config_from_json(get_field<json>(j, "capsnet_config"));
  r.cnn_config = cnn_config_from_json(get_field<json>(j, "cnn_config"));
  r.n_per_attack = get_field<std::size_t>(j, "n_per_attack");
  r.seed = get_field<std::uint64_t>(j, "seed");
  r.test_size = get_field<std::size_t>(j, "test_size");
  r.f1_variant = get_field<std::string>(j, "f1_variant");
  r.run = get_field<json>(j, "run");
  return r;
}

// ---------------------------------------------------------------------------
// CSV and SVG

inline std::string report_csv(const EvalReport& r) {
  std::string out = "model,attack,accuracy,f1_macro,recon_mse,n_samples\n";
  for (const EvalCell& c : r.cells) {
    out += c.model + "," + c.attack + "," + format_real(c.accuracy) + "," + format_real(c.f1_macro) + "," +
           (c.recon_mse ? format_real(*c.recon_mse) : std::string()) + "," + std::to_string(c.n_samples) + "\n";
  }
  return out;
}

namespace detail {

inline std::string svg_polyline(const Tensor& y, double lo, double hi, const char* color, const char* dash) {
  constexpr double width = 600.0, height = 240.0, pad = 20.0;
  const double span = hi > lo ? hi - lo : 1.0;
  const double dx = y.size() > 1 ? (width - 2 * pad) / static_cast<double>(y.size() - 1) : 0.0;
  std::ostringstream pts;
  for (std::size_t t = 0; t < y.size(); ++t) {
    if (t) pts << ' ';
    const double px = pad + dx * static_cast<double>(t);
    const double py = height - pad - (y[t] - lo) / span * (height - 2 * pad);
    pts << format_real(std::round(px * 100.0) / 100.0) << ',' << format_real(std::round(py * 100.0) / 100.0);
  }
  std::string line = "  <polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"1.5\"";
  if (*dash) line += " stroke-dasharray=\"" + std::string(dash) + "\"";
  return line + " points=\"" + pts.str() + "\"/>\n";
}

}  // namespace detail

/// Overlay of original (black), attacked (red, dashed) and reconstruction (blue).
inline std::string example_svg(const SignalExample& e) {
  double lo = 0.0, hi = 1.0;
  for (const Tensor* t : {&e.original, &e.attacked, &e.reconstruction}) {
    for (double v : t->data()) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  std::string out =
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"600\" height=\"240\" viewBox=\"0 0 600 240\">\n"
      "  <rect width=\"600\" height=\"240\" fill=\"white\"/>\n"
      "  <text x=\"20\" y=\"14\" font-family=\"monospace\" font-size=\"11\">" +
      e.attack + " sample " + std::to_string(e.source_index) + " label " + std::to_string(e.label) +
      ": original (black), attacked (red), reconstruction (blue)</text>\n";
  out += detail::svg_polyline(e.original, lo, hi, "black", "");
  out += detail::svg_polyline(e.attacked, lo, hi, "red", "4 2");
  out += detail::svg_polyline(e.reconstruction, lo, hi, "blue", "");
  return out + "</svg>\n";
}

/// Files written by write_report, in order.
struct ReportFiles {
  std::filesystem::path json_path;
  std::filesystem::path csv_path;
  std::vector<std::filesystem::path> svg_paths;
};

inline ReportFiles write_report(const EvalReport& r, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create report directory " + dir.string() + ": " + ec.message());
  ReportFiles files{dir / "report.json", dir / "report.csv", {}};
  write_text_file(files.json_path, to_json(r).dump(2) + "\n");
  write_text_file(files.csv_path, report_csv(r));
  for (const SignalExample& e : r.examples) {
    std::size_t k = 0;
    for (const SignalExample& prev : r.examples) {
      if (&prev == &e) break;
      if (prev.attack == e.attack) ++k;
    }
    const auto path = dir / (e.attack + "_example" + std::to_string(k) + ".svg");
    write_text_file(path, example_svg(e));
    files.svg_paths.push_back(path);
  }
  return files;
}

inline EvalReport read_report(const std::filesystem::path& path) { return eval_report_from_json(read_json_file(path)); }

// ---------------------------------------------------------------------------
// Attack-set file: one JSON object per line.

inline json to_json(const AttackedSample& s) {
  return {{"source_index", s.source_index}, {"label", s.label},
          {"spec", to_json(s.spec)},         {"sub_seed", s.sub_seed},
          {"realized_magnitude", s.realized_magnitude},
          {"original", s.original.values()}, {"attacked", s.attacked.values()}};
}

inline AttackedSample attacked_sample_from_json(const json& j) {
  using detail::get_field;
  const auto original = get_field<std::vector<double>>(j, "original");
  const auto attacked = get_field<std::vector<double>>(j, "attacked");
  if (original.size() != attacked.size()) throw DataError("attack record: original/attacked length mismatch");
  AttackedSample s{Tensor({original.size()}, original), Tensor({attacked.size()}, attacked),
                   attack_spec_from_json(get_field<json>(j, "spec")), get_field<double>(j, "realized_magnitude")};
  s.label = get_field<std::size_t>(j, "label");
  s.source_index = get_field<std::size_t>(j, "source_index");
  s.sub_seed = get_field<std::uint64_t>(j, "sub_seed");
  return s;
}

inline std::string attack_set_jsonl(const std::vector<AttackedSample>& set) {
  std::string out;
  for (const AttackedSample& s : set) out += to_json(s).dump() + "\n";
  return out;
}

inline void save_attack_set(const std::vector<AttackedSample>& set, const std::filesystem::path& path) {
  write_text_file(path, attack_set_jsonl(set));
}

inline std::vector<AttackedSample> load_attack_set(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<AttackedSample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(attacked_sample_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw DataError(path.string() + ": line " + std::to_string(line_no) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(path.string() + ": line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace capsnoise
