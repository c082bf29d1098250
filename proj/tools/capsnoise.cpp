// capsnoise: command-line driver for data synthesis, training, attack
// generation, the evaluation matrix and the gradient self-check.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "capsnoise/attacks.hpp"
#include "capsnoise/data.hpp"
#include "capsnoise/evaluate.hpp"
#include "capsnoise/report.hpp"
#include "capsnoise/selfcheck.hpp"
#include "capsnoise/serialize.hpp"
#include "capsnoise/train.hpp"

namespace {

using namespace capsnoise;

struct SynthArgs {
  std::string out;
  std::size_t n_per_class = 100;
  std::size_t length = 64;
  double noise_std = 0.1;
  std::uint64_t seed = 0;
};

struct TrainArgs {
  std::string data;
  std::string model;
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  double lr = 1e-3;
  std::string optimizer = "adam";
  double recon_weight = 0.0005;
  std::uint64_t seed = 0;
  std::string out_checkpoint;
  std::string loss_log;
};

struct NoiseArgs {
  double alpha = 0.01;
  double mu = 0.1;
  double sigma = 0.3;
  double scale = 0.2;
  double lag_fraction = 0.1;
};

struct AttackArgs {
  std::string data;
  std::string spec;
  std::size_t n = 100;
  NoiseArgs noise;
  std::uint64_t seed = 0;
  std::string checkpoint;
  std::string out;
};

struct EvalArgs {
  std::string caps_checkpoint;
  std::string cnn_checkpoint;
  std::string data;
  std::string attacks = "all";
  std::size_t n = 100;
  NoiseArgs noise;
  std::uint64_t seed = 0;
  std::string out_dir;
};

struct GradcheckArgs {
  std::uint64_t seed = 0;
  std::size_t configs = 10;
  std::string inject_fault;
};

json noise_json(const NoiseArgs& a) {
  return {{"alpha", a.alpha}, {"mu", a.mu}, {"sigma", a.sigma}, {"scale", a.scale}, {"lag_fraction", a.lag_fraction}};
}

void print_config(const json& config) { std::cout << "config " << config.dump() << "\n"; }

AttackDefaults attack_defaults(const NoiseArgs& a, std::size_t length) {
  AttackDefaults d = default_attack_settings(length);
  d.noise.mu = a.mu;
  d.noise.sigma = a.sigma;
  d.scale = a.scale;
  d.lag_max_fraction = a.lag_fraction;
  d.alpha = a.alpha;
  return d;
}

std::vector<std::string> parse_attack_list(const std::string& text) {
  if (text == "all") return attack_names();
  if (text == "none") return {};
  std::vector<std::string> names;
  std::set<std::string> seen;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto& known = attack_names();
    if (std::find(known.begin(), known.end(), item) == known.end())
      throw UsageError("unknown attack '" + item + "' (expected all, none, or a list of: offset, drift-inc, drift-dec, "
                       "lag-fwd, lag-bwd, fgsm)");
    if (!seen.insert(item).second) throw UsageError("attack '" + item + "' listed twice");
    names.push_back(item);
  }
  if (names.empty()) throw UsageError("empty attack list");
  return names;
}

int cmd_synth(const SynthArgs& a) {
  print_config({{"command", "synth"},
                {"out", a.out},
                {"n_per_class", a.n_per_class},
                {"length", a.length},
                {"noise_std", a.noise_std},
                {"seed", a.seed}});
  const Dataset ds = synth_dataset(a.n_per_class, a.length, a.noise_std, a.seed);
  save_csv(ds, a.out);
  std::cout << "wrote " << ds.size() << " beats of length " << ds.length << " to " << a.out << "\n";
  return 0;
}

template <class Model>
int train_and_save(Model model, const Dataset& data, const TrainArgs& a, const TrainConfig& tc, const json& config) {
  std::ofstream log;
  if (!a.loss_log.empty()) {
    log.open(a.loss_log, std::ios::binary);
    if (!log) throw DataError("cannot write " + a.loss_log);
    log << "epoch,loss\n";
  }
  train(model, data, tc, [&](std::size_t epoch, double loss) {
    std::cout << "epoch " << epoch + 1 << " loss " << format_real(loss) << "\n";
    if (log) log << epoch + 1 << "," << format_real(loss) << "\n";
  });
  std::cout << "train accuracy " << format_real(dataset_accuracy(model, data)) << "\n";
  save_checkpoint(model, a.out_checkpoint, config);
  std::cout << "wrote checkpoint " << a.out_checkpoint << "\n";
  return 0;
}

int cmd_train(const TrainArgs& a) {
  const json config{{"command", "train"},       {"data", a.data},
                    {"model", a.model},         {"epochs", a.epochs},
                    {"batch_size", a.batch_size}, {"lr", a.lr},
                    {"optimizer", a.optimizer}, {"recon_weight", a.recon_weight},
                    {"seed", a.seed},           {"out_checkpoint", a.out_checkpoint},
                    {"loss_log", a.loss_log}};
  print_config(config);
  TrainConfig tc;
  tc.epochs = a.epochs;
  tc.batch_size = a.batch_size;
  tc.optimizer.kind = parse_optimizer(a.optimizer);
  tc.optimizer.learning_rate = a.lr;
  tc.seed = derive_seed(a.seed, 1);
  tc.validate();
  const Dataset data = load_csv(a.data);
  TrunkConfig trunk;
  trunk.signal_length = data.length;
  if (a.model == "capsnet") {
    CapsNetConfig mc;
    mc.trunk = trunk;
    mc.recon_weight = a.recon_weight;
    mc.seed = a.seed;
    mc.validate();
    return train_and_save(make_capsnet(mc), data, a, tc, config);
  }
  return train_and_save(make_cnn({trunk, kNumClasses, a.seed}), data, a, tc, config);
}

int cmd_attack(const AttackArgs& a) {
  print_config({{"command", "attack"},
                {"data", a.data},
                {"spec", a.spec},
                {"n", a.n},
                {"noise", noise_json(a.noise)},
                {"seed", a.seed},
                {"checkpoint", a.checkpoint},
                {"out", a.out}});
  const Dataset data = load_csv(a.data);
  const AttackSpec spec = make_attack_spec(a.spec, attack_defaults(a.noise, data.length));
  validate_spec(spec);
  std::vector<AttackedSample> set;
  if (const auto* f = std::get_if<FgsmAttack>(&spec)) {
    if (a.checkpoint.empty()) throw UsageError("--spec fgsm requires --checkpoint");
    const AnyModel model = load_checkpoint(a.checkpoint);
    std::visit([&](const auto& m) { set = generate_fgsm_set(data, m, f->alpha, a.n, a.seed); }, model);
  } else {
    set = generate_attack_set(data, spec, a.n, a.seed);
  }
  save_attack_set(set, a.out);
  std::cout << "wrote " << set.size() << " " << a.spec << " records to " << a.out << "\n";
  return 0;
}

int cmd_eval(const EvalArgs& a) {
  const json config{{"command", "eval"},
                    {"caps_checkpoint", a.caps_checkpoint},
                    {"cnn_checkpoint", a.cnn_checkpoint},
                    {"data", a.data},
                    {"attacks", a.attacks},
                    {"n", a.n},
                    {"noise", noise_json(a.noise)},
                    {"seed", a.seed},
                    {"out_dir", a.out_dir}};
  print_config(config);
  const auto names = parse_attack_list(a.attacks);
  const auto caps = load_checkpoint_as<CapsNetModel>(a.caps_checkpoint);
  const auto cnn = load_checkpoint_as<CnnModel>(a.cnn_checkpoint);
  const Dataset test = load_csv(a.data);
  std::vector<AttackSpec> specs;
  for (const auto& n : names) specs.push_back(make_attack_spec(n, attack_defaults(a.noise, test.length)));
  EvalReport report = evaluate_matrix(caps, cnn, test, specs, a.n, a.seed);
  report.run = config;
  const ReportFiles files = write_report(report, a.out_dir);

  std::cout << std::left << std::setw(9) << "model" << std::setw(11) << "attack" << std::setw(10) << "accuracy"
            << std::setw(10) << "f1_macro" << "recon_mse\n";
  for (const EvalCell& c : report.cells) {
    std::cout << std::left << std::setw(9) << c.model << std::setw(11) << c.attack << std::fixed << std::setprecision(4)
              << std::setw(10) << c.accuracy << std::setw(10) << c.f1_macro;
    if (c.recon_mse) std::cout << std::setprecision(6) << *c.recon_mse;
    std::cout << std::defaultfloat << "\n";
  }
  if (report.robustness) {
    std::cout << "mean accuracy drop: capsnet " << format_real(report.robustness->capsnet_mean_drop) << ", cnn "
              << format_real(report.robustness->cnn_mean_drop) << "\n";
  }
  std::cout << "wrote " << files.json_path.string() << ", " << files.csv_path.string() << " and "
            << files.svg_paths.size() << " svg plots\n";
  return 0;
}

int cmd_gradcheck(const GradcheckArgs& a) {
  json config{{"command", "gradcheck"}, {"seed", a.seed}, {"configs", a.configs}};
  if (!a.inject_fault.empty()) config["inject_fault"] = a.inject_fault;
  print_config(config);
  GradcheckOptions opts;
  opts.seed = a.seed;
  opts.n_configs = a.configs;
  opts.inject_fault = a.inject_fault;
  const GradcheckReport r = run_gradcheck(opts);
  for (const ComponentResult& c : r.components) {
    std::cout << std::left << std::setw(15) << c.name << " max_rel_error " << std::scientific << std::setprecision(3)
              << c.max_rel_error << std::defaultfloat << "  checks " << std::setw(4) << c.n_checks
              << (c.passed ? " PASS" : " FAIL") << "\n";
  }
  std::cout << (r.passed() ? "gradcheck PASS" : "gradcheck FAIL") << " (tolerance " << r.tolerance << ")\n";
  return r.passed() ? 0 : static_cast<int>(ErrorKind::numeric);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"capsnoise: capsule network vs CNN robustness under sensor-fault and FGSM attacks"};
  app.require_subcommand(1);
  app.allow_extras(false);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Write a synthetic 5-class waveform dataset as CSV");
  s->add_option("--out", synth.out, "Output CSV path")->required();
  s->add_option("--n-per-class", synth.n_per_class, "Beats per class")->capture_default_str();
  s->add_option("--length", synth.length, "Samples per beat")->capture_default_str();
  s->add_option("--noise-std", synth.noise_std, "Std of additive Gaussian noise")->capture_default_str();
  s->add_option("--seed", synth.seed, "RNG seed")->capture_default_str();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a capsule network or the matched CNN");
  t->add_option("--data", tr.data, "Training CSV")->required();
  t->add_option("--model", tr.model, "capsnet or cnn")->required()->check(CLI::IsMember({"capsnet", "cnn"}));
  t->add_option("--epochs", tr.epochs, "Training epochs")->capture_default_str();
  t->add_option("--batch-size", tr.batch_size, "Mini-batch size")->capture_default_str();
  t->add_option("--lr", tr.lr, "Learning rate")->capture_default_str();
  t->add_option("--optimizer", tr.optimizer, "adam or sgd-momentum")
      ->capture_default_str()
      ->check(CLI::IsMember({"adam", "sgd-momentum"}));
  t->add_option("--recon-weight", tr.recon_weight, "Reconstruction loss weight (capsnet)")->capture_default_str();
  t->add_option("--seed", tr.seed, "Init and shuffle seed")->capture_default_str();
  t->add_option("--out-checkpoint", tr.out_checkpoint, "Checkpoint output path")->required();
  t->add_option("--loss-log", tr.loss_log, "Optional CSV of per-epoch mean loss");

  auto add_noise_flags = [](CLI::App* cmd, NoiseArgs& n) {
    cmd->add_option("--alpha", n.alpha, "FGSM step size")->capture_default_str();
    cmd->add_option("--mu", n.mu, "Noise-move drift rate")->capture_default_str();
    cmd->add_option("--sigma", n.sigma, "Noise-move volatility")->capture_default_str();
    cmd->add_option("--scale", n.scale, "Offset/drift amplitude scale")->capture_default_str();
    cmd->add_option("--lag-fraction", n.lag_fraction, "Lag max fraction of the signal length")->capture_default_str();
  };

  AttackArgs at;
  auto* a = app.add_subcommand("attack", "Generate an attack set (JSON lines)");
  a->add_option("--data", at.data, "Source CSV")->required();
  a->add_option("--spec", at.spec, "offset|drift-inc|drift-dec|lag-fwd|lag-bwd|fgsm")
      ->required()
      ->check(CLI::IsMember(attack_names()));
  a->add_option("--n", at.n, "Number of attacked samples")->capture_default_str();
  add_noise_flags(a, at.noise);
  a->add_option("--seed", at.seed, "RNG seed")->capture_default_str();
  a->add_option("--checkpoint", at.checkpoint, "Model checkpoint (required for fgsm)");
  a->add_option("--out", at.out, "Output JSON-lines path")->required();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Run the (model x attack) evaluation matrix and write reports");
  e->add_option("--caps-checkpoint", ev.caps_checkpoint, "Capsule network checkpoint")->required();
  e->add_option("--cnn-checkpoint", ev.cnn_checkpoint, "CNN checkpoint")->required();
  e->add_option("--data", ev.data, "Test CSV")->required();
  e->add_option("--attacks", ev.attacks, "all, none, or comma-separated attack names")->capture_default_str();
  e->add_option("--n", ev.n, "Samples per manual attack")->capture_default_str();
  add_noise_flags(e, ev.noise);
  e->add_option("--seed", ev.seed, "RNG seed")->capture_default_str();
  e->add_option("--out-dir", ev.out_dir, "Report directory")->required();

  GradcheckArgs gc;
  auto* g = app.add_subcommand("gradcheck", "Finite-difference check of every backward pass");
  g->add_option("--seed", gc.seed, "RNG seed")->capture_default_str();
  g->add_option("--configs", gc.configs, "Random configurations per component")->capture_default_str();
  g->add_option("--inject-fault", gc.inject_fault)->group("");  // test-only negative control

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return static_cast<int>(ErrorKind::usage);
  }

  try {
    if (*s) return cmd_synth(synth);
    if (*t) return cmd_train(tr);
    if (*a) return cmd_attack(at);
    if (*e) return cmd_eval(ev);
    if (*g) return cmd_gradcheck(gc);
  } catch (const capsnoise::Error& err) {
    std::cerr << "error: " << err.what() << "\n";
    return err.exit_code();
  } catch (const std::filesystem::filesystem_error& err) {
    std::cerr << "error: " << err.what() << "\n";
    return static_cast<int>(ErrorKind::data);
  } catch (const std::exception& err) {
    std::cerr << "internal error: " << err.what() << "\n";
    return static_cast<int>(ErrorKind::numeric);
  }
  return static_cast<int>(ErrorKind::usage);
}
