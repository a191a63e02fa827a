#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dkd/data.hpp"
#include "dkd/distill.hpp"
#include "dkd/models.hpp"

namespace dkd {

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;

  // Zero moments shaped like `params`.
  static AdamState init(std::span<const Tensor<T>* const> params, AdamConfig config = {});
  static AdamState init(const ModelGraph<T>& model, AdamConfig config = {});
};

// One bias-corrected Adam update in place. Throws DimensionError when the
// parameter, gradient and moment shapes disagree.
template <typename T>
void adam_step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>> grads, AdamState<T>& state);
template <typename T>
void adam_step(ModelGraph<T>& model, std::span<const Tensor<T>> grads, AdamState<T>& state);

enum class Precision { f32, f64 };

std::string_view to_string(Precision p);
Precision precision_from_string(std::string_view s);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  double learning_rate = 0.001;
  // f64 trains a double copy of the model and rounds back at the end.
  Precision precision = Precision::f32;
  bool shuffle = true;
  std::optional<AugmentPolicy> augment;
  // Keep the parameters of the epoch with the best validation accuracy
  // (earliest on ties) instead of the last epoch.
  bool select_best = true;
  std::function<void(const EpochRecord&)> on_epoch;

  // Throws ContractError for epochs == 0, batch_size == 0 or lr <= 0.
  void validate() const;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  // False when the validation split was empty; the validation columns are
  // then left blank and the last epoch is kept.
  bool has_validation = true;
  std::size_t selected_epoch = 0;

  // "epoch,train_loss,val_loss,val_acc" plus one row per epoch.
  std::string to_csv() const;
};

// Minibatch Adam on the hard loss.
TrainHistory train_supervised(ModelGraph<float>& model, const DatasetSplit& data, const TrainConfig& cfg);
TrainHistory train_teacher(ModelGraph<float>& model, const DatasetSplit& data, const TrainConfig& cfg);

// Trains `student` on alpha * hard + (1 - alpha) * soft with teacher logits
// from an infer-mode forward. The teacher is only read. At alpha == 1 the
// teacher is never evaluated, so the run equals train_supervised exactly.
TrainHistory distill_student(const ModelGraph<float>& teacher, ModelGraph<float>& student, const DatasetSplit& data,
                             const DistillConfig& dcfg, const TrainConfig& tcfg);

template <typename T>
struct Predictions {
  std::vector<int> labels;
  Tensor<T> probabilities;  // [N, C]
};

// Infer-mode argmax of the softmax output; ties resolve to the lowest index.
template <typename T>
Predictions<T> predict(const ModelGraph<T>& model, const std::vector<Sample>& samples, std::size_t batch_size = 64);
template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& scores);

std::vector<int> labels_of(const std::vector<Sample>& samples);

}  // namespace dkd
