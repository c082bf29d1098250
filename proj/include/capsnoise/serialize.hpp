#pragma once

// JSON encoding of tensors, configs, attack specs and model checkpoints.
// Doubles are written in shortest round-trip form, so load(save(x)) == x bitwise.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <variant>

#include "json.hpp"

#include "capsnoise/attacks.hpp"
#include "capsnoise/capsnet.hpp"
#include "capsnoise/cnn.hpp"
#include "capsnoise/error.hpp"

namespace capsnoise {

using json = nlohmann::json;

inline constexpr const char* kCheckpointFormat = "capsnoise-checkpoint";
inline constexpr int kCheckpointVersion = 1;

namespace detail {

template <class T>
T get_field(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw DataError(std::string("missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw DataError(std::string("bad field '") + key + "': " + e.what());
  }
}

}  // namespace detail

inline json to_json(const Tensor& t) { return {{"shape", t.shape()}, {"data", t.values()}}; }

inline Tensor tensor_from_json(const json& j) {
  try {
    return Tensor(detail::get_field<Shape>(j, "shape"), detail::get_field<std::vector<double>>(j, "data"));
  } catch (const ShapeError& e) {
    throw DataError(e.what());
  }
}

inline json to_json(const TrunkConfig& t) {
  return {{"signal_length", t.signal_length},       {"conv_channels", t.conv_channels},
          {"conv_kernel", t.conv_kernel},           {"primary_channels", t.primary_channels},
          {"primary_kernel", t.primary_kernel},     {"primary_stride", t.primary_stride}};
}

inline TrunkConfig trunk_from_json(const json& j) {
  using detail::get_field;
  return {get_field<std::size_t>(j, "signal_length"),  get_field<std::size_t>(j, "conv_channels"),
          get_field<std::size_t>(j, "conv_kernel"),    get_field<std::size_t>(j, "primary_channels"),
          get_field<std::size_t>(j, "primary_kernel"), get_field<std::size_t>(j, "primary_stride")};
}

inline json to_json(const CapsNetConfig& c) {
  return {{"trunk", to_json(c.trunk)},
          {"primary_dim", c.primary_dim},
          {"num_classes", c.num_classes},
          {"class_dim", c.class_dim},
          {"routing_iters", c.routing_iters},
          {"decoder_hidden1", c.decoder_hidden1},
          {"decoder_hidden2", c.decoder_hidden2},
          {"m_plus", c.margin.m_plus},
          {"m_minus", c.margin.m_minus},
          {"lambda", c.margin.lambda},
          {"recon_weight", c.recon_weight},
          {"seed", c.seed}};
}

inline CapsNetConfig capsnet_config_from_json(const json& j) {
  using detail::get_field;
  CapsNetConfig c;
  c.trunk = trunk_from_json(get_field<json>(j, "trunk"));
  c.primary_dim = get_field<std::size_t>(j, "primary_dim");
  c.num_classes = get_field<std::size_t>(j, "num_classes");
  c.class_dim = get_field<std::size_t>(j, "class_dim");
  c.routing_iters = get_field<std::size_t>(j, "routing_iters");
  c.decoder_hidden1 = get_field<std::size_t>(j, "decoder_hidden1");
  c.decoder_hidden2 = get_field<std::size_t>(j, "decoder_hidden2");
  c.margin = {get_field<double>(j, "m_plus"), get_field<double>(j, "m_minus"), get_field<double>(j, "lambda")};
  c.recon_weight = get_field<double>(j, "recon_weight");
  c.seed = get_field<std::uint64_t>(j, "seed");
  c.validate();
  return c;
}

inline json to_json(const CnnConfig& c) {
  return {{"trunk", to_json(c.trunk)}, {"num_classes", c.num_classes}, {"seed", c.seed}};
}

inline CnnConfig cnn_config_from_json(const json& j) {
  using detail::get_field;
  return {trunk_from_json(get_field<json>(j, "trunk")), get_field<std::size_t>(j, "num_classes"),
          get_field<std::uint64_t>(j, "seed")};
}

inline json to_json(const NoiseMoveParams& p) {
  return {{"mu", p.mu}, {"sigma", p.sigma}, {"dt", p.dt}, {"s0", p.s0}, {"seed", p.seed}};
}

inline NoiseMoveParams noise_params_from_json(const json& j) {
  using detail::get_field;
  NoiseMoveParams p{get_field<double>(j, "mu"), get_field<double>(j, "sigma"), get_field<double>(j, "dt"),
                    get_field<double>(j, "s0"), get_field<std::uint64_t>(j, "seed")};
  p.validate();
  return p;
}

inline json to_json(const AttackSpec& spec) {
  json j{{"kind", attack_name(spec)}};
  std::visit(
      [&](const auto& s) {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, OffsetAttack> || std::is_same_v<S, DriftAttack>) j["scale"] = s.scale;
        if constexpr (std::is_same_v<S, LagAttack>) j["max_fraction"] = s.max_fraction;
        if constexpr (std::is_same_v<S, FgsmAttack>) j["alpha"] = s.alpha;
        if constexpr (!std::is_same_v<S, FgsmAttack>) j["noise"] = to_json(s.noise);
      },
      spec);
  return j;
}

inline AttackSpec attack_spec_from_json(const json& j) {
  using detail::get_field;
  const auto kind = get_field<std::string>(j, "kind");
  AttackSpec spec = make_attack_spec(kind, {});
  std::visit(
      [&](auto& s) {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, OffsetAttack> || std::is_same_v<S, DriftAttack>)
          s.scale = get_field<double>(j, "scale");
        if constexpr (std::is_same_v<S, LagAttack>) s.max_fraction = get_field<double>(j, "max_fraction");
        if constexpr (std::is_same_v<S, FgsmAttack>) s.alpha = get_field<double>(j, "alpha");
        if constexpr (!std::is_same_v<S, FgsmAttack>) s.noise = noise_params_from_json(get_field<json>(j, "noise"));
      },
      spec);
  validate_spec(spec);
  return spec;
}

// ---------------------------------------------------------------------------
// Checkpoints

template <class Params>
json params_to_json(const Params& p) {
  json tensors = json::array();
  for_each_tensor(p, [&](const std::string& name, const Tensor& t) {
    json e = to_json(t);
    e["name"] = name;
    tensors.push_back(std::move(e));
  });
  return tensors;
}

template <class Params>
void params_from_json(const json& tensors, Params& p) {
  if (!tensors.is_array()) throw DataError("checkpoint: 'tensors' must be an array");
  std::size_t k = 0;
  for_each_tensor(p, [&](const std::string& name, Tensor& t) {
    if (k >= tensors.size()) throw DataError("checkpoint: missing tensor '" + name + "'");
    const json& e = tensors[k++];
    if (detail::get_field<std::string>(e, "name") != name)
      throw DataError("checkpoint: expected tensor '" + name + "'");
    Tensor loaded = tensor_from_json(e);
    if (loaded.shape() != t.shape())
      throw DataError("checkpoint: tensor '" + name + "' has shape " + shape_str(loaded.shape()) + ", config implies " +
                      shape_str(t.shape()));
    t = std::move(loaded);
  });
  if (k != tensors.size()) throw DataError("checkpoint: unexpected extra tensors");
}

inline json checkpoint_json(const CapsNetModel& m) {
  return {{"format", kCheckpointFormat}, {"version", kCheckpointVersion}, {"kind", "capsnet"},
          {"config", to_json(m.config)},  {"tensors", params_to_json(m.params)}};
}

inline json checkpoint_json(const CnnModel& m) {
  return {{"format", kCheckpointFormat}, {"version", kCheckpointVersion}, {"kind", "cnn"},
          {"config", to_json(m.config)},  {"tensors", params_to_json(m.params)}};
}

using AnyModel = std::variant<CapsNetModel, CnnModel>;

inline AnyModel model_from_checkpoint_json(const json& j) {
  using detail::get_field;
  if (get_field<std::string>(j, "format") != kCheckpointFormat) throw DataError("not a capsnoise checkpoint");
  if (get_field<int>(j, "version") != kCheckpointVersion) throw DataError("unsupported checkpoint version");
  const auto kind = get_field<std::string>(j, "kind");
  if (kind == "capsnet") {
    CapsNetModel m;
    m.config = capsnet_config_from_json(get_field<json>(j, "config"));
    m.params = capsnet_zero_params(m.config);
    params_from_json(get_field<json>(j, "tensors"), m.params);
    return m;
  }
  if (kind == "cnn") {
    CnnModel m;
    m.config = cnn_config_from_json(get_field<json>(j, "config"));
    m.params = cnn_zero_params(m.config);
    params_from_json(get_field<json>(j, "tensors"), m.params);
    return m;
  }
  throw DataError("checkpoint: unknown model kind '" + kind + "'");
}

inline json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed for " + path.string());
}

/// `run` is an optional echo of the producing command's resolved flags; it is
/// stored alongside the model and ignored on load.
template <class Model>
void save_checkpoint(const Model& m, const std::filesystem::path& path, const json& run = nullptr) {
  json j = checkpoint_json(m);
  if (!run.is_null()) j["run"] = run;
  write_text_file(path, j.dump() + "\n");
}

inline AnyModel load_checkpoint(const std::filesystem::path& path) {
  try {
    return model_from_checkpoint_json(read_json_file(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

template <class Model>
Model load_checkpoint_as(const std::filesystem::path& path) {
  AnyModel any = load_checkpoint(path);
  if (auto* m = std::get_if<Model>(&any)) return std::move(*m);
  throw UsageError(path.string() + ": checkpoint holds a different model kind");
}

}  // namespace capsnoise
