#include "dkd/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "dkd/errors.hpp"

namespace dkd {

template <typename T>
AdamState<T> AdamState<T>::init(std::span<const Tensor<T>* const> params, AdamConfig config) {
  AdamState s;
  s.config = config;
  for (const Tensor<T>* p : params) {
    s.m.emplace_back(p->shape(), T(0));
    s.v.emplace_back(p->shape(), T(0));
  }
  return s;
}

template <typename T>
AdamState<T> AdamState<T>::init(const ModelGraph<T>& model, AdamConfig config) {
  std::vector<const Tensor<T>*> ptrs;
  for (const auto& p : model.params()) ptrs.push_back(&p.tensor);
  return init(ptrs, config);
}

template <typename T>
void adam_step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>> grads, AdamState<T>& state) {
  if (params.size() != grads.size() || params.size() != state.m.size() || params.size() != state.v.size()) {
    throw DimensionError("adam_step: " + std::to_string(params.size()) + " params, " + std::to_string(grads.size()) +
                         " grads, " + std::to_string(state.m.size()) + " moment slots");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i].shape() || params[i]->shape() != state.m[i].shape() ||
        params[i]->shape() != state.v[i].shape()) {
      throw DimensionError("adam_step: shape mismatch at slot " + std::to_string(i) + " (param " +
                           shape_string(params[i]->shape()) + ", grad " + shape_string(grads[i].shape()) + ")");
    }
  }
  const AdamConfig& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const T b1 = static_cast<T>(c.beta1), b2 = static_cast<T>(c.beta2);
  const T c1 = static_cast<T>(1.0 / (1.0 - std::pow(c.beta1, t)));
  const T c2 = static_cast<T>(1.0 / (1.0 - std::pow(c.beta2, t)));
  const T lr = static_cast<T>(c.lr), eps = static_cast<T>(c.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    T* p = params[i]->data();
    const T* g = grads[i].data();
    T* m = state.m[i].data();
    T* v = state.v[i].data();
    for (std::size_t j = 0, n = params[i]->size(); j < n; ++j) {
      m[j] = b1 * m[j] + (T(1) - b1) * g[j];
      v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
      p[j] -= lr * (m[j] * c1) / (std::sqrt(v[j] * c2) + eps);
    }
  }
}

template <typename T>
void adam_step(ModelGraph<T>& model, std::span<const Tensor<T>> grads, AdamState<T>& state) {
  std::vector<Tensor<T>*> ptrs;
  for (auto& p : model.params()) ptrs.push_back(&p.tensor);
  adam_step<T>(ptrs, grads, state);
}

std::string_view to_string(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

Precision precision_from_string(std::string_view s) {
  if (s == "f32" || s == "float32") return Precision::f32;
  if (s == "f64" || s == "float64") return Precision::f64;
  throw ContractError("unknown precision '" + std::string(s) + "' (expected f32 or f64)");
}

void TrainConfig::validate() const {
  if (epochs == 0) throw ContractError("epochs must be at least 1");
  if (batch_size == 0) throw ContractError("batch size must be at least 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ContractError("learning rate must be positive");
  if (augment) augment->validate();
}

std::string TrainHistory::to_csv() const {
  std::ostringstream os;
  os << "epoch,train_loss,val_loss,val_acc\n";
  char buf[128];
  for (const auto& e : epochs) {
    if (has_validation) {
      std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g\n", e.epoch, e.train_loss, e.val_loss, e.val_accuracy);
    } else {
      std::snprintf(buf, sizeof buf, "%zu,%.9g,,\n", e.epoch, e.train_loss);
    }
    os << buf;
  }
  return os.str();
}

std::vector<int> labels_of(const std::vector<Sample>& samples) {
  std::vector<int> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.label);
  return out;
}

template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& scores) {
  if (scores.rank() != 2) throw DimensionError("argmax_rows expects [N, C], got " + shape_string(scores.shape()));
  const std::size_t n = scores.dim(0), c = scores.dim(1);
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j) {
      if (scores[i * c + j] > scores[i * c + best]) best = j;
    }
    out[i] = static_cast<int>(best);
  }
  return out;
}

namespace {

template <typename T>
Tensor<T> batch_images(const Batch& b) {
  if constexpr (std::is_same_v<T, float>) {
    return b.images;
  } else {
    return b.images.template cast<T>();
  }
}

void check_compatible(const ModelGraph<float>& model, const DatasetSplit& data, const char* role) {
  if (data.train.empty()) throw ContractError("training split is empty");
  if (model.num_classes() != data.num_classes()) {
    throw ContractError(std::string(role) + " predicts " + std::to_string(model.num_classes()) +
                        " classes but the dataset has " + std::to_string(data.num_classes()));
  }
  const InputShape in = model.input_shape();
  const Shape want{in.channels, in.height, in.width};
  for (const auto* split : {&data.train, &data.validation, &data.test}) {
    for (const auto& s : *split) {
      if (s.image.shape() != want) {
        throw ContractError(std::string(role) + " expects images " + shape_string(want) + ", got " +
                            shape_string(s.image.shape()) + " for " + s.source_id);
      }
    }
  }
}

template <typename T>
Tensor<T> teacher_logits(const ModelGraph<float>& teacher, const Tensor<float>& images) {
  if constexpr (std::is_same_v<T, float>) {
    return forward_logits(teacher, images);
  } else {
    return forward_logits(teacher, images).template cast<T>();
  }
}

struct Teacher {
  const ModelGraph<float>* model;
  DistillConfig config;
};

template <typename T>
std::pair<double, double> evaluate(const ModelGraph<T>& model, const std::vector<Sample>& samples,
                                   std::size_t batch_size) {
  const auto pred = predict(model, samples, batch_size);
  const auto truth = labels_of(samples);
  const double loss = static_cast<double>(hard_loss<T>(pred.probabilities, truth));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) correct += pred.labels[i] == truth[i];
  return {loss, static_cast<double>(correct) / static_cast<double>(truth.size())};
}

template <typename T>
TrainHistory fit(ModelGraph<T>& model, const DatasetSplit& data, const TrainConfig& cfg,
                 const std::optional<Teacher>& teacher) {
  AdamState<T> adam = AdamState<T>::init(model, AdamConfig{cfg.learning_rate});
  TrainHistory history;
  history.has_validation = !data.validation.empty();
  std::vector<NamedTensor<T>> best_params;
  double best_acc = -1.0;
  const T alpha = teacher ? static_cast<T>(teacher->config.alpha) : T(1);
  const T temperature = teacher ? static_cast<T>(teacher->config.temperature) : T(1);

  // Without augmentation the teacher sees the same images every epoch, so its
  // logits are computed once.
  std::optional<Tensor<T>> cached_teacher;
  if (teacher && alpha != T(1) && !cfg.augment) {
    const std::size_t k = teacher->model->num_classes();
    cached_teacher.emplace(Shape{data.train.size(), k});
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < data.train.size(); start += 64) {
      idx.clear();
      for (std::size_t i = start; i < std::min(data.train.size(), start + 64); ++i) idx.push_back(i);
      const Tensor<T> logits = teacher_logits<T>(*teacher->model, make_batch(data.train, idx).images);
      std::copy(logits.values().begin(), logits.values().end(), cached_teacher->data() + start * k);
    }
  }

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    BatchStream stream(data.train, cfg.batch_size, cfg.seed, epoch, cfg.shuffle, cfg.augment);
    Rng dropout_rng = make_rng({cfg.seed, epoch, 0x64726f70});
    double loss_sum = 0.0;
    std::size_t seen = 0;
    while (auto batch = stream.next()) {
      Tape<T> tape;
      const Var<T> input = tape.constant(batch_images<T>(*batch));
      ForwardOptions opts;
      opts.mode = Mode::train;
      opts.rng = &dropout_rng;
      opts.track_params = true;
      const auto out = forward(model, tape, input, opts);
      Var<T> loss = hard_loss_from_logits(out.logits, std::span<const int>(batch->labels));
      if (teacher && alpha != T(1)) {
        Tensor<T> t_logits;
        if (cached_teacher) {
          const std::size_t k = cached_teacher->dim(1);
          t_logits = Tensor<T>(Shape{batch->indices.size(), k});
          for (std::size_t r = 0; r < batch->indices.size(); ++r) {
            std::copy_n(cached_teacher->data() + batch->indices[r] * k, k, t_logits.data() + r * k);
          }
        } else {
          t_logits = teacher_logits<T>(*teacher->model, batch->images);
        }
        const Var<T> soft = soft_loss(t_logits, out.logits, temperature, teacher->config.soft_variant,
                                      teacher->config.t_squared_scaling);
        loss = total_loss(loss, soft, alpha);
      }
      const double lv = static_cast<double>(loss.value().item());
      if (!std::isfinite(lv)) throw NumericError("non-finite training loss at epoch " + std::to_string(epoch));
      const auto grads = tape.backward(loss);
      std::vector<Tensor<T>> g;
      g.reserve(out.params.size());
      for (const auto& p : out.params) g.push_back(grads[p]);
      adam_step<T>(model, g, adam);
      loss_sum += lv * static_cast<double>(batch->labels.size());
      seen += batch->labels.size();
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(seen);
    if (history.has_validation) {
      std::tie(rec.val_loss, rec.val_accuracy) = evaluate(model, data.validation, 64);
      if (cfg.select_best && rec.val_accuracy > best_acc) {
        best_acc = rec.val_accuracy;
        best_params = model.params();
        history.selected_epoch = epoch;
      }
    }
    history.epochs.push_back(rec);
    if (cfg.on_epoch) cfg.on_epoch(rec);
  }
  if (history.has_validation && cfg.select_best) {
    model.params() = std::move(best_params);
  } else {
    history.selected_epoch = cfg.epochs;
  }
  return history;
}

TrainHistory run(ModelGraph<float>& model, const DatasetSplit& data, const TrainConfig& cfg,
                 const std::optional<Teacher>& teacher) {
  cfg.validate();
  check_compatible(model, data, "model");
  if (cfg.precision == Precision::f32) return fit(model, data, cfg, teacher);
  auto wide = model.cast<double>();
  auto history = fit(wide, data, cfg, teacher);
  model = wide.cast<float>();
  return history;
}

}  // namespace

TrainHistory train_supervised(ModelGraph<float>& model, const DatasetSplit& data, const TrainConfig& cfg) {
  return run(model, data, cfg, std::nullopt);
}

TrainHistory train_teacher(ModelGraph<float>& model, const DatasetSplit& data, const TrainConfig& cfg) {
  return train_supervised(model, data, cfg);
}

TrainHistory distill_student(const ModelGraph<float>& teacher, ModelGraph<float>& student, const DatasetSplit& data,
                             const DistillConfig& dcfg, const TrainConfig& tcfg) {
  dcfg.validate();
  if (teacher.num_classes() != student.num_classes()) {
    throw ContractError("teacher has " + std::to_string(teacher.num_classes()) + " classes, student " +
                        std::to_string(student.num_classes()));
  }
  if (!(teacher.input_shape() == student.input_shape())) {
    throw ContractError("teacher and student input shapes differ");
  }
  check_compatible(teacher, data, "teacher");
  // At alpha == 1 the soft term has zero weight; skip it to match plain training exactly.
  if (dcfg.alpha == 1.0) return run(student, data, tcfg, std::nullopt);
  return run(student, data, tcfg, Teacher{&teacher, dcfg});
}

template <typename T>
Predictions<T> predict(const ModelGraph<T>& model, const std::vector<Sample>& samples, std::size_t batch_size) {
  if (samples.empty()) throw ContractError("predict: no samples");
  if (batch_size == 0) throw ContractError("predict: batch size must be at least 1");
  const std::size_t k = model.num_classes();
  Predictions<T> out{{}, Tensor<T>(Shape{samples.size(), k})};
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(samples.size(), start + batch_size); ++i) idx.push_back(i);
    const Batch b = make_batch(samples, idx);
    const Tensor<T> probs = softmax(forward_logits(model, batch_images<T>(b)));
    std::copy(probs.values().begin(), probs.values().end(), out.probabilities.data() + start * k);
  }
  out.labels = argmax_rows(out.probabilities);
  return out;
}

template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step<float>(std::span<Tensor<float>* const>, std::span<const Tensor<float>>, AdamState<float>&);
template void adam_step<double>(std::span<Tensor<double>* const>, std::span<const Tensor<double>>,
                                AdamState<double>&);
template void adam_step<float>(ModelGraph<float>&, std::span<const Tensor<float>>, AdamState<float>&);
template void adam_step<double>(ModelGraph<double>&, std::span<const Tensor<double>>, AdamState<double>&);
template Predictions<float> predict<float>(const ModelGraph<float>&, const std::vector<Sample>&, std::size_t);
template Predictions<double> predict<double>(const ModelGraph<double>&, const std::vector<Sample>&, std::size_t);
template std::vector<int> argmax_rows<float>(const Tensor<float>&);
template std::vector<int> argmax_rows<double>(const Tensor<double>&);

}  // namespace dkd
