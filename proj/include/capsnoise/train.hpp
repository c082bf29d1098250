#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "capsnoise/capsnet.hpp"
#include "capsnoise/cnn.hpp"
#include "capsnoise/data.hpp"
#include "capsnoise/metrics.hpp"
#include "capsnoise/optim.hpp"

namespace capsnoise {

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  OptimizerSettings optimizer;
  std::uint64_t seed = 0;

  void validate() const {
    if (batch_size == 0) throw UsageError("train: batch_size must be positive");
    if (!(optimizer.learning_rate >= 0.0) || !std::isfinite(optimizer.learning_rate))
      throw UsageError("train: learning rate must be finite and >= 0");
  }
};

struct TrainResult {
  std::vector<double> epoch_loss;  // mean per-sample loss of each epoch
};

/// Per-sample loss and parameter gradients for one labelled signal.
template <class Params>
struct SampleGrad {
  double loss = 0.0;
  Params grads;
};

inline SampleGrad<CapsNetParams> loss_and_grads(const CapsNetModel& m, const Tensor& x, std::size_t label) {
  const CapsNetOutput out = capsnet_forward(m, x, label);
  return {capsnet_loss(m, out, label), capsnet_backward(m, out.cache, label).params};
}

inline SampleGrad<CnnParams> loss_and_grads(const CnnModel& m, const Tensor& x, std::size_t label) {
  const CnnOutput out = cnn_forward(m, x);
  return {cross_entropy_loss(out.logits, label), cnn_backward(m, out, label).params};
}

inline std::size_t predict(const CapsNetModel& m, const Tensor& x) { return capsnet_predict(m, x); }
inline std::size_t predict(const CnnModel& m, const Tensor& x) { return cnn_predict(m, x); }

inline CapsNetParams zero_params_like(const CapsNetModel& m) { return capsnet_zero_params(m.config); }
inline CnnParams zero_params_like(const CnnModel& m) { return cnn_zero_params(m.config); }

template <class Params>
std::vector<Tensor*> tensor_list(Params& p) {
  std::vector<Tensor*> out;
  for_each_tensor(p, [&](const std::string&, Tensor& t) { out.push_back(&t); });
  return out;
}

/// Mini-batch training with per-epoch shuffling. Gradients are averaged over
/// each batch. Deterministic for a fixed config seed.
template <class Model>
TrainResult train(Model& model, const Dataset& data, const TrainConfig& cfg,
                  const std::function<void(std::size_t, double)>& on_epoch = {}) {
  cfg.validate();
  data.validate();
  Optimizer opt(cfg.optimizer);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<Tensor*> params = tensor_list(model.params);
  TrainResult result;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      auto acc = zero_params_like(model);
      std::vector<Tensor*> acc_list = tensor_list(acc);
      for (std::size_t k = start; k < stop; ++k) {
        const Beat& beat = data.beats[order[k]];
        auto sg = loss_and_grads(model, beat.signal, beat.label);
        if (!std::isfinite(sg.loss)) {
          throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) + ", sample " +
                             std::to_string(order[k]));
        }
        epoch_loss += sg.loss;
        std::vector<Tensor*> g_list = tensor_list(sg.grads);
        for (std::size_t t = 0; t < acc_list.size(); ++t) *acc_list[t] += *g_list[t];
      }
      const double inv = 1.0 / static_cast<double>(stop - start);
      std::vector<const Tensor*> grads;
      for (Tensor* t : acc_list) {
        *t *= inv;
        grads.push_back(t);
      }
      opt.step(params, grads);
    }
    epoch_loss /= static_cast<double>(data.size());
    if (!std::isfinite(epoch_loss)) throw NumericError("train: diverged at epoch " + std::to_string(epoch));
    for (const Tensor* p : params)
      if (!p->all_finite()) throw NumericError("train: non-finite parameter after epoch " + std::to_string(epoch));
    result.epoch_loss.push_back(epoch_loss);
    if (on_epoch) on_epoch(epoch, epoch_loss);
  }
  return result;
}

template <class Model>
std::vector<std::size_t> predict_all(const Model& model, const Dataset& data) {
  std::vector<std::size_t> preds;
  preds.reserve(data.size());
  for (const Beat& b : data.beats) preds.push_back(predict(model, b.signal));
  return preds;
}

inline std::vector<std::size_t> labels_of(const Dataset& data) {
  std::vector<std::size_t> labels;
  for (const Beat& b : data.beats) labels.push_back(b.label);
  return labels;
}

template <class Model>
double dataset_accuracy(const Model& model, const Dataset& data) {
  return accuracy(predict_all(model, data), labels_of(data));
}

}  // namespace capsnoise
