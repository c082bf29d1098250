#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "capsnoise/attacks.hpp"
#include "capsnoise/capsnet.hpp"
#include "capsnoise/cnn.hpp"
#include "capsnoise/data.hpp"
#include "capsnoise/metrics.hpp"
#include "capsnoise/train.hpp"

namespace capsnoise {

/// One (model x attack condition) entry. recon_mse is set for the capsule network only.
struct EvalCell {
  std::string model;   // capsnet | cnn
  std::string attack;  // none | offset | drift-inc | drift-dec | lag-fwd | lag-bwd | fgsm
  double accuracy = 0.0;
  double f1_macro = 0.0;
  std::optional<double> recon_mse;
  std::size_t n_samples = 0;

  friend bool operator==(const EvalCell&, const EvalCell&) = default;
};

/// Original / attacked / capsule-reconstructed signal triple used for plots.
struct SignalExample {
  std::string attack;
  std::size_t source_index = 0;
  std::size_t label = 0;
  Tensor original;
  Tensor attacked;
  Tensor reconstruction;

  friend bool operator==(const SignalExample&, const SignalExample&) = default;
};

/// Mean clean-minus-attacked accuracy over the attack cells of each model.
struct RobustnessSummary {
  double capsnet_mean_drop = 0.0;
  double cnn_mean_drop = 0.0;
  bool capsnet_more_robust = false;

  friend bool operator==(const RobustnessSummary&, const RobustnessSummary&) = default;
};

struct EvalReport {
  std::vector<EvalCell> cells;
  std::vector<AttackSpec> attacks;
  std::vector<SignalExample> examples;
  std::optional<RobustnessSummary> robustness;
  CapsNetConfig capsnet_config;
  CnnConfig cnn_config;
  std::size_t n_per_attack = 0;
  std::uint64_t seed = 0;
  std::size_t test_size = 0;
  std::string f1_variant = "macro";
  nlohmann::json run;  // caller-supplied config echo

  [[nodiscard]] const EvalCell* find(const std::string& model, const std::string& attack) const {
    for (const EvalCell& c : cells)
      if (c.model == model && c.attack == attack) return &c;
    return nullptr;
  }

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

inline constexpr std::size_t kExamplesPerAttack = 3;

struct LabelledInputs {
  std::vector<Tensor> inputs;
  std::vector<Tensor> originals;
  std::vector<std::size_t> labels;
  std::vector<std::size_t> source_index;
};

inline LabelledInputs clean_inputs(const Dataset& ds) {
  LabelledInputs li;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    li.inputs.push_back(ds.beats[i].signal);
    li.originals.push_back(ds.beats[i].signal);
    li.labels.push_back(ds.beats[i].label);
    li.source_index.push_back(i);
  }
  return li;
}

inline LabelledInputs from_attack_set(const std::vector<AttackedSample>& set) {
  LabelledInputs li;
  for (const AttackedSample& s : set) {
    li.inputs.push_back(s.attacked);
    li.originals.push_back(s.original);
    li.labels.push_back(s.label);
    li.source_index.push_back(s.source_index);
  }
  return li;
}

/// Capsule-network cell; reconstruction error is measured against the clean signal.
inline EvalCell evaluate_capsnet_cell(const CapsNetModel& m, const LabelledInputs& in, const std::string& attack,
                                      std::vector<SignalExample>* examples = nullptr) {
  std::vector<std::size_t> preds;
  double recon_total = 0.0;
  for (std::size_t k = 0; k < in.inputs.size(); ++k) {
    const CapsNetOutput out = capsnet_forward(m, in.inputs[k]);
    preds.push_back(argmax(out.norms));
    recon_total += mse(out.recon, in.originals[k]);
    if (examples && k < kExamplesPerAttack) {
      examples->push_back({attack, in.source_index[k], in.labels[k], in.originals[k],
                           in.inputs[k].reshaped({in.inputs[k].size()}), out.recon});
    }
  }
  EvalCell cell{"capsnet", attack, accuracy(preds, in.labels), f1_macro(preds, in.labels, m.config.num_classes),
                {}, in.inputs.size()};
  if (!in.inputs.empty()) cell.recon_mse = recon_total / static_cast<double>(in.inputs.size());
  return cell;
}

inline EvalCell evaluate_cnn_cell(const CnnModel& m, const LabelledInputs& in, const std::string& attack) {
  std::vector<std::size_t> preds;
  for (const Tensor& x : in.inputs) preds.push_back(cnn_predict(m, x));
  return {"cnn", attack, accuracy(preds, in.labels), f1_macro(preds, in.labels, m.config.num_classes), {},
          in.inputs.size()};
}

/// RNG stream for an attack condition, independent of evaluation order.
inline std::uint64_t cell_seed(std::uint64_t seed, const std::string& attack) {
  const auto& names = attack_names();
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == attack) return derive_seed(seed, i + 1);
  throw UsageError("unknown attack '" + attack + "'");
}

inline std::optional<RobustnessSummary> summarize_robustness(const std::vector<EvalCell>& cells) {
  const auto clean_acc = [&](const std::string& model) -> std::optional<double> {
    for (const EvalCell& c : cells)
      if (c.model == model && c.attack == "none") return c.accuracy;
    return std::nullopt;
  };
  const auto caps_clean = clean_acc("capsnet"), cnn_clean = clean_acc("cnn");
  if (!caps_clean || !cnn_clean) return std::nullopt;
  double caps_drop = 0.0, cnn_drop = 0.0;
  std::size_t n_caps = 0, n_cnn = 0;
  for (const EvalCell& c : cells) {
    if (c.attack == "none") continue;
    if (c.model == "capsnet") {
      caps_drop += *caps_clean - c.accuracy;
      ++n_caps;
    } else {
      cnn_drop += *cnn_clean - c.accuracy;
      ++n_cnn;
    }
  }
  if (n_caps == 0 || n_cnn == 0) return std::nullopt;
  RobustnessSummary s{caps_drop / static_cast<double>(n_caps), cnn_drop / static_cast<double>(n_cnn), false};
  s.capsnet_more_robust = s.capsnet_mean_drop < s.cnn_mean_drop;
  return s;
}

/// Clean cell plus one cell per attack for both models. Manual attacks draw
/// n_per_attack samples shared by both models; FGSM perturbs the whole test set
/// with each model's own input gradient.
inline EvalReport evaluate_matrix(const CapsNetModel& caps, const CnnModel& cnn, const Dataset& test,
                                  const std::vector<AttackSpec>& attacks, std::size_t n_per_attack,
                                  std::uint64_t seed) {
  test.validate();
  if (is_fresh_init(caps)) throw UsageError("evaluate: capsule network parameters equal their fresh initialization");
  if (is_fresh_init(cnn)) throw UsageError("evaluate: cnn parameters equal their fresh initialization");
  check_trunk_parity(caps, cnn);
  if (test.length != caps.config.trunk.signal_length)
    throw DataError("evaluate: test signals have length " + std::to_string(test.length) + ", models expect " +
                    std::to_string(caps.config.trunk.signal_length));
  for (const AttackSpec& a : attacks) validate_spec(a);

  EvalReport report;
  report.attacks = attacks;
  report.capsnet_config = caps.config;
  report.cnn_config = cnn.config;
  report.n_per_attack = n_per_attack;
  report.seed = seed;
  report.test_size = test.size();

  const LabelledInputs clean = clean_inputs(test);
  report.cells.push_back(evaluate_capsnet_cell(caps, clean, "none"));
  report.cells.push_back(evaluate_cnn_cell(cnn, clean, "none"));

  for (const AttackSpec& spec : attacks) {
    const std::string name = attack_name(spec);
    if (const auto* f = std::get_if<FgsmAttack>(&spec)) {
      LabelledInputs caps_in = clean, cnn_in = clean;
      for (std::size_t k = 0; k < clean.inputs.size(); ++k) {
        caps_in.inputs[k] = fgsm_attack(caps, clean.inputs[k], clean.labels[k], f->alpha).attacked;
        cnn_in.inputs[k] = fgsm_attack(cnn, clean.inputs[k], clean.labels[k], f->alpha).attacked;
      }
      report.cells.push_back(evaluate_capsnet_cell(caps, caps_in, name, &report.examples));
      report.cells.push_back(evaluate_cnn_cell(cnn, cnn_in, name));
    } else {
      const LabelledInputs in = from_attack_set(generate_attack_set(test, spec, n_per_attack, cell_seed(seed, name)));
      report.cells.push_back(evaluate_capsnet_cell(caps, in, name, &report.examples));
      report.cells.push_back(evaluate_cnn_cell(cnn, in, name));
    }
  }
  report.robustness = summarize_robustness(report.cells);
  return report;
}

}  // namespace capsnoise
