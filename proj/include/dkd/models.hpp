#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "dkd/ops.hpp"

namespace dkd {

struct InputShape {
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;
  bool operator==(const InputShape&) const = default;
};

struct Conv2dSpec {
  std::size_t filters = 1;
  Window kernel{3, 3};
  Window stride{1, 1};
  Padding padding = Padding::same;
};
struct MaxPool2dSpec {
  Window pool{2, 2};
  Window stride{2, 2};
  Padding padding = Padding::valid;
};
struct DenseSpec {
  std::size_t units = 1;
};
struct LeakyReluSpec {
  double slope = 0.2;
};
struct SiluSpec {};
struct ReluSpec {};
struct DropoutSpec {
  double rate = 0.5;
};
struct FlattenSpec {};
struct SoftmaxSpec {};
struct GlobalAvgPoolSpec {};

enum class BlockActivation { relu, silu };

// x + conv(act(conv(x))), both convolutions filters x kernel, stride 1, same
// padding. `filters` must equal the incoming channel count.
struct ResidualBlockSpec {
  std::size_t filters = 1;
  Window kernel{3, 3};
  BlockActivation activation = BlockActivation::relu;
};

using LayerSpec = std::variant<Conv2dSpec, MaxPool2dSpec, DenseSpec, LeakyReluSpec, SiluSpec, ReluSpec, DropoutSpec,
                               FlattenSpec, SoftmaxSpec, ResidualBlockSpec, GlobalAvgPoolSpec>;

std::string_view layer_kind(const LayerSpec& spec);

struct Layer {
  std::string name;
  LayerSpec spec;
};

nlohmann::json layer_to_json(const Layer& layer);
Layer layer_from_json(const nlohmann::json& j);

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

// An ordered layer list with its parameter tensors. Shapes are propagated and
// checked when the graph is built; afterwards only parameter values change.
template <typename T>
class ModelGraph {
 public:
  // Validates the layer list against `input`, allocates parameters and fills
  // them with fan-in scaled uniform weights (bound sqrt(6/fan_in)) and zero
  // biases drawn from `init_seed`.
  static ModelGraph build(std::string architecture, InputShape input, std::vector<Layer> layers,
                          std::uint64_t init_seed);

  const std::string& architecture() const noexcept { return architecture_; }
  InputShape input_shape() const noexcept { return input_; }
  std::size_t num_classes() const noexcept { return num_classes_; }
  const std::vector<Layer>& layers() const noexcept { return layers_; }

  std::vector<NamedTensor<T>>& params() noexcept { return params_; }
  const std::vector<NamedTensor<T>>& params() const noexcept { return params_; }
  Tensor<T>& param(std::string_view name);
  const Tensor<T>& param(std::string_view name) const;

  // Output shape of layer i without the batch axis ({C, H, W} or {F}).
  const Shape& layer_output_shape(std::size_t i) const { return output_shapes_.at(i); }

  // Layers whose spatial output can be captured during forward, by name.
  // "final_conv" aliases the last convolutional stage.
  const std::map<std::string, std::size_t>& capture_points() const noexcept { return captures_; }
  std::size_t capture_layer(std::string_view name) const;

  std::size_t param_count() const;

  nlohmann::json architecture_json() const;
  static ModelGraph from_architecture_json(const nlohmann::json& j);

  template <typename U>
  ModelGraph<U> cast() const;

 private:
  template <typename>
  friend class ModelGraph;

  std::string architecture_;
  InputShape input_;
  std::size_t num_classes_ = 0;
  std::vector<Layer> layers_;
  std::vector<Shape> output_shapes_;
  std::vector<NamedTensor<T>> params_;
  // First parameter index per layer.
  std::vector<std::size_t> param_offset_;
  std::map<std::string, std::size_t> captures_;
};

template <typename T>
template <typename U>
ModelGraph<U> ModelGraph<T>::cast() const {
  ModelGraph<U> out;
  out.architecture_ = architecture_;
  out.input_ = input_;
  out.num_classes_ = num_classes_;
  out.layers_ = layers_;
  out.output_shapes_ = output_shapes_;
  out.param_offset_ = param_offset_;
  out.captures_ = captures_;
  for (const auto& p : params_) out.params_.push_back({p.name, p.tensor.template cast<U>()});
  return out;
}

struct ForwardOptions {
  Mode mode = Mode::infer;
  // Required when mode is train and the model has dropout.
  Rng* rng = nullptr;
  // Record parameters as gradient-receiving leaves.
  bool track_params = false;
  // Capture point names whose outputs are returned.
  std::vector<std::string> capture;
};

template <typename T>
struct ForwardOutput {
  // Pre-softmax scores [N, C]. A trailing softmax layer is not applied.
  Var<T> logits;
  std::map<std::string, Var<T>> captured;
  // One leaf per entry of model.params(), same order.
  std::vector<Var<T>> params;
};

template <typename T>
ForwardOutput<T> forward(const ModelGraph<T>& model, Tape<T>& tape, const Var<T>& batch, const ForwardOptions& options);

// Infer-mode logits without gradient recording.
template <typename T>
Tensor<T> forward_logits(const ModelGraph<T>& model, const Tensor<T>& batch);

// A residual block on explicit parameter leaves.
template <typename T>
Var<T> residual_block(const Var<T>& x, const Var<T>& w1, const Var<T>& b1, const Var<T>& w2, const Var<T>& b2,
                      BlockActivation activation);

// The compact student: four conv(3x3, stride 2, same) + LeakyReLU(0.2) +
// maxpool(2x2, stride 1, same) stages with 64/128/128/256 filters, dropout
// 0.25, flatten, dense(num_classes), softmax.
template <typename T>
ModelGraph<T> build_dcsnet(InputShape input, std::size_t num_classes, std::uint64_t init_seed = 0);

enum class TeacherArchetype { residual, silu_net };

std::string_view to_string(TeacherArchetype a);
TeacherArchetype teacher_archetype_from_string(std::string_view s);

struct TeacherConfig {
  TeacherArchetype archetype = TeacherArchetype::residual;
  std::size_t width = 96;
  std::size_t depth = 4;

  // Desk-scale defaults; both exceed the 32x32 student's parameter count.
  static TeacherConfig defaults(TeacherArchetype archetype);
};

// Stem conv(width, 3x3, stride 2) + activation + maxpool(2x2, stride 2), then
// `depth` residual blocks (residual) or conv+SiLU layers (silu_net), global
// average pooling and a dense classifier.
template <typename T>
ModelGraph<T> build_teacher(InputShape input, std::size_t num_classes, const TeacherConfig& cfg,
                            std::uint64_t init_seed = 0);

extern template class ModelGraph<float>;
extern template class ModelGraph<double>;

}  // namespace dkd
