#include "dkd/models.hpp"

#include <cmath>
#include <string>

namespace dkd {

namespace {

template <class... Fs>
struct Overloaded : Fs... {
  using Fs::operator()...;
};
template <class... Fs>
Overloaded(Fs...) -> Overloaded<Fs...>;

nlohmann::json window_json(Window w) { return nlohmann::json::array({w.rows, w.cols}); }

Window window_from(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 2) throw ContractError("window must be a two-element array");
  return {j.at(0).get<std::size_t>(), j.at(1).get<std::size_t>()};
}

std::string_view to_string(BlockActivation a) { return a == BlockActivation::relu ? "relu" : "silu"; }

BlockActivation block_activation_from(std::string_view s) {
  if (s == "relu") return BlockActivation::relu;
  if (s == "silu") return BlockActivation::silu;
  throw ContractError("unknown block activation '" + std::string(s) + "'");
}

[[noreturn]] void build_fail(const Layer& layer, const std::string& why) {
  throw BuildError("layer '" + layer.name + "' (" + std::string(layer_kind(layer.spec)) + "): " + why);
}

void require_window(const Layer& layer, Window w, const char* what) {
  if (w.rows == 0 || w.cols == 0) build_fail(layer, std::string(what) + " must be >= 1 in both axes");
}

}  // namespace

std::string_view layer_kind(const LayerSpec& spec) {
  return std::visit(Overloaded{
                        [](const Conv2dSpec&) { return std::string_view("conv2d"); },
                        [](const MaxPool2dSpec&) { return std::string_view("maxpool2d"); },
                        [](const DenseSpec&) { return std::string_view("dense"); },
                        [](const LeakyReluSpec&) { return std::string_view("leaky_relu"); },
                        [](const SiluSpec&) { return std::string_view("silu"); },
                        [](const ReluSpec&) { return std::string_view("relu"); },
                        [](const DropoutSpec&) { return std::string_view("dropout"); },
                        [](const FlattenSpec&) { return std::string_view("flatten"); },
                        [](const SoftmaxSpec&) { return std::string_view("softmax"); },
                        [](const ResidualBlockSpec&) { return std::string_view("residual_block"); },
                        [](const GlobalAvgPoolSpec&) { return std::string_view("global_avg_pool"); },
                    },
                    spec);
}

nlohmann::json layer_to_json(const Layer& layer) {
  nlohmann::json j = {{"name", layer.name}, {"kind", std::string(layer_kind(layer.spec))}};
  std::visit(Overloaded{
                 [&](const Conv2dSpec& s) {
                   j["filters"] = s.filters;
                   j["kernel"] = window_json(s.kernel);
                   j["stride"] = window_json(s.stride);
                   j["padding"] = std::string(to_string(s.padding));
                 },
                 [&](const MaxPool2dSpec& s) {
                   j["pool"] = window_json(s.pool);
                   j["stride"] = window_json(s.stride);
                   j["padding"] = std::string(to_string(s.padding));
                 },
                 [&](const DenseSpec& s) { j["units"] = s.units; },
                 [&](const LeakyReluSpec& s) { j["slope"] = s.slope; },
                 [&](const DropoutSpec& s) { j["rate"] = s.rate; },
                 [&](const ResidualBlockSpec& s) {
                   j["filters"] = s.filters;
                   j["kernel"] = window_json(s.kernel);
                   j["activation"] = std::string(to_string(s.activation));
                 },
                 [](const auto&) {},
             },
             layer.spec);
  return j;
}

Layer layer_from_json(const nlohmann::json& j) {
  Layer layer;
  layer.name = j.at("name").get<std::string>();
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "conv2d") {
    layer.spec = Conv2dSpec{j.at("filters").get<std::size_t>(), window_from(j.at("kernel")), window_from(j.at("stride")),
                            padding_from_string(j.at("padding").get<std::string>())};
  } else if (kind == "maxpool2d") {
    layer.spec = MaxPool2dSpec{window_from(j.at("pool")), window_from(j.at("stride")),
                               padding_from_string(j.at("padding").get<std::string>())};
  } else if (kind == "dense") {
    layer.spec = DenseSpec{j.at("units").get<std::size_t>()};
  } else if (kind == "leaky_relu") {
    layer.spec = LeakyReluSpec{j.at("slope").get<double>()};
  } else if (kind == "silu") {
    layer.spec = SiluSpec{};
  } else if (kind == "relu") {
    layer.spec = ReluSpec{};
  } else if (kind == "dropout") {
    layer.spec = DropoutSpec{j.at("rate").get<double>()};
  } else if (kind == "flatten") {
    layer.spec = FlattenSpec{};
  } else if (kind == "softmax") {
    layer.spec = SoftmaxSpec{};
  } else if (kind == "residual_block") {
    layer.spec = ResidualBlockSpec{j.at("filters").get<std::size_t>(), window_from(j.at("kernel")),
                                   block_activation_from(j.at("activation").get<std::string>())};
  } else if (kind == "global_avg_pool") {
    layer.spec = GlobalAvgPoolSpec{};
  } else {
    throw ContractError("unknown layer kind '" + kind + "'");
  }
  return layer;
}

template <typename T>
ModelGraph<T> ModelGraph<T>::build(std::string architecture, InputShape input, std::vector<Layer> layers,
                                   std::uint64_t init_seed) {
  if (input.channels == 0 || input.height == 0 || input.width == 0) throw BuildError("input shape must be positive");
  ModelGraph<T> m;
  m.architecture_ = std::move(architecture);
  m.input_ = input;
  m.layers_ = std::move(layers);

  // Fan-in per weight tensor, used for initialization below.
  std::vector<std::size_t> fan_in;
  Shape cur{input.channels, input.height, input.width};
  std::optional<std::size_t> last_conv;

  auto add_param = [&](std::string name, Shape shape, std::size_t fan) {
    m.params_.push_back({std::move(name), Tensor<T>(std::move(shape))});
    fan_in.push_back(fan);
  };

  for (std::size_t i = 0; i < m.layers_.size(); ++i) {
    const Layer& layer = m.layers_[i];
    if (layer.name.empty()) throw BuildError("layer " + std::to_string(i) + " has no name");
    for (std::size_t j = 0; j < i; ++j) {
      if (m.layers_[j].name == layer.name) build_fail(layer, "duplicate layer name");
    }
    m.param_offset_.push_back(m.params_.size());
    auto spatial = [&]() {
      if (cur.size() != 3) build_fail(layer, "needs a spatial [C, H, W] input, got " + shape_string(cur));
    };
    auto geometry = [&](std::size_t in, std::size_t window, std::size_t stride, Padding pad, const char* axis) {
      try {
        return axis_geometry(in, window, stride, pad, axis);
      } catch (const Error& e) {
        build_fail(layer, e.what());
      }
    };
    std::visit(Overloaded{
                   [&](const Conv2dSpec& s) {
                     spatial();
                     if (s.filters == 0) build_fail(layer, "filters must be >= 1");
                     require_window(layer, s.kernel, "kernel");
                     require_window(layer, s.stride, "stride");
                     const auto gh = geometry(cur[1], s.kernel.rows, s.stride.rows, s.padding, "height");
                     const auto gw = geometry(cur[2], s.kernel.cols, s.stride.cols, s.padding, "width");
                     const std::size_t fan = cur[0] * s.kernel.rows * s.kernel.cols;
                     add_param(layer.name + ".weight", {s.filters, cur[0], s.kernel.rows, s.kernel.cols}, fan);
                     add_param(layer.name + ".bias", {s.filters}, 0);
                     cur = {s.filters, gh.out, gw.out};
                     last_conv = i;
                   },
                   [&](const MaxPool2dSpec& s) {
                     spatial();
                     require_window(layer, s.pool, "pool");
                     require_window(layer, s.stride, "stride");
                     const auto gh = geometry(cur[1], s.pool.rows, s.stride.rows, s.padding, "height");
                     const auto gw = geometry(cur[2], s.pool.cols, s.stride.cols, s.padding, "width");
                     cur = {cur[0], gh.out, gw.out};
                   },
                   [&](const DenseSpec& s) {
                     if (cur.size() != 1) build_fail(layer, "needs a flat input, got " + shape_string(cur));
                     if (s.units == 0) build_fail(layer, "units must be >= 1");
                     add_param(layer.name + ".weight", {cur[0], s.units}, cur[0]);
                     add_param(layer.name + ".bias", {s.units}, 0);
                     cur = {s.units};
                   },
                   [&](const LeakyReluSpec& s) {
                     if (!(s.slope >= 0.0)) build_fail(layer, "slope must be >= 0");
                   },
                   [&](const DropoutSpec& s) {
                     if (!(s.rate >= 0.0 && s.rate < 1.0)) build_fail(layer, "rate must lie in [0, 1)");
                   },
                   [&](const FlattenSpec&) { cur = {shape_numel(cur)}; },
                   [&](const SoftmaxSpec&) {
                     if (cur.size() != 1) build_fail(layer, "needs a flat input, got " + shape_string(cur));
                   },
                   [&](const ResidualBlockSpec& s) {
                     spatial();
                     if (s.filters != cur[0]) {
                       build_fail(layer, "filters (" + std::to_string(s.filters) + ") must equal input channels (" +
                                             std::to_string(cur[0]) + ") for the identity skip");
                     }
                     require_window(layer, s.kernel, "kernel");
                     const std::size_t fan = s.filters * s.kernel.rows * s.kernel.cols;
                     const Shape w{s.filters, s.filters, s.kernel.rows, s.kernel.cols};
                     add_param(layer.name + ".conv1.weight", w, fan);
                     add_param(layer.name + ".conv1.bias", {s.filters}, 0);
                     add_param(layer.name + ".conv2.weight", w, fan);
                     add_param(layer.name + ".conv2.bias", {s.filters}, 0);
                     last_conv = i;
                   },
                   [&](const GlobalAvgPoolSpec&) {
                     spatial();
                     cur = {cur[0]};
                   },
                   [](const auto&) {},
               },
               layer.spec);
    // final_conv ends after the activation and pooling that follow the last conv.
    const bool stage_tail = std::holds_alternative<MaxPool2dSpec>(layer.spec) ||
                            std::holds_alternative<LeakyReluSpec>(layer.spec) ||
                            std::holds_alternative<ReluSpec>(layer.spec) || std::holds_alternative<SiluSpec>(layer.spec);
    if (stage_tail && last_conv && *last_conv + 1 == i) last_conv = i;
    m.output_shapes_.push_back(cur);
    if (cur.size() == 3) m.captures_[layer.name] = i;
  }
  if (cur.size() != 1) throw BuildError("model output must be flat class scores, got " + shape_string(cur));
  m.num_classes_ = cur[0];
  if (last_conv) m.captures_["final_conv"] = *last_conv;

  Rng rng = make_rng({init_seed, 0x696e6974ull});
  for (std::size_t k = 0; k < m.params_.size(); ++k) {
    if (fan_in[k] == 0) continue;
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in[k]));
    for (T& v : m.params_[k].tensor.values()) v = static_cast<T>(uniform(rng, -bound, bound));
  }
  return m;
}

template <typename T>
Tensor<T>& ModelGraph<T>::param(std::string_view name) {
  for (auto& p : params_) {
    if (p.name == name) return p.tensor;
  }
  throw ContractError("no parameter named '" + std::string(name) + "'");
}

template <typename T>
const Tensor<T>& ModelGraph<T>::param(std::string_view name) const {
  return const_cast<ModelGraph*>(this)->param(name);
}

template <typename T>
std::size_t ModelGraph<T>::capture_layer(std::string_view name) const {
  auto it = captures_.find(std::string(name));
  if (it == captures_.end()) {
    throw ContractError("'" + std::string(name) + "' is not a capture point with spatial output");
  }
  return it->second;
}

template <typename T>
std::size_t ModelGraph<T>::param_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.size();
  return n;
}

template <typename T>
nlohmann::json ModelGraph<T>::architecture_json() const {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : layers_) layers.push_back(layer_to_json(l));
  return {{"architecture", architecture_},
          {"input_shape", {input_.channels, input_.height, input_.width}},
          {"num_classes", num_classes_},
          {"layers", layers}};
}

template <typename T>
ModelGraph<T> ModelGraph<T>::from_architecture_json(const nlohmann::json& j) {
  const auto& shape = j.at("input_shape");
  if (!shape.is_array() || shape.size() != 3) throw ContractError("input_shape must be [C, H, W]");
  std::vector<Layer> layers;
  for (const auto& l : j.at("layers")) layers.push_back(layer_from_json(l));
  ModelGraph m = build(j.at("architecture").get<std::string>(),
                       {shape.at(0).get<std::size_t>(), shape.at(1).get<std::size_t>(), shape.at(2).get<std::size_t>()},
                       std::move(layers), 0);
  if (j.contains("num_classes") && j.at("num_classes").get<std::size_t>() != m.num_classes()) {
    throw ContractError("num_classes disagrees with the layer list");
  }
  return m;
}

template <typename T>
Var<T> residual_block(const Var<T>& x, const Var<T>& w1, const Var<T>& b1, const Var<T>& w2, const Var<T>& b2,
                      BlockActivation activation) {
  Var<T> h = conv2d(x, w1, b1, Window{1, 1}, Padding::same);
  h = activation == BlockActivation::relu ? relu(h) : silu(h);
  h = conv2d(h, w2, b2, Window{1, 1}, Padding::same);
  return add(x, h);
}

template <typename T>
ForwardOutput<T> forward(const ModelGraph<T>& model, Tape<T>& tape, const Var<T>& batch, const ForwardOptions& options) {
  const Shape& bs = batch.shape();
  const InputShape in = model.input_shape();
  if (bs.size() != 4 || bs[1] != in.channels || bs[2] != in.height || bs[3] != in.width) {
    throw DimensionError("batch shape " + shape_string(bs) + " does not match model input [N, " +
                         std::to_string(in.channels) + ", " + std::to_string(in.height) + ", " +
                         std::to_string(in.width) + "]");
  }
  std::map<std::size_t, std::vector<std::string>> wanted;
  for (const auto& name : options.capture) wanted[model.capture_layer(name)].push_back(name);

  ForwardOutput<T> out;
  for (const auto& p : model.params()) {
    out.params.push_back(options.track_params ? tape.parameter(p.tensor) : tape.constant(p.tensor));
  }

  const auto& layers = model.layers();
  Var<T> h = batch;
  std::size_t next_param = 0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Layer& layer = layers[i];
    const bool last = i + 1 == layers.size();
    std::visit(Overloaded{
                   [&](const Conv2dSpec& s) {
                     h = conv2d(h, out.params[next_param], out.params[next_param + 1], s.stride, s.padding);
                     next_param += 2;
                   },
                   [&](const MaxPool2dSpec& s) { h = maxpool2d(h, s.pool, s.stride, s.padding); },
                   [&](const DenseSpec&) {
                     h = dense(h, out.params[next_param], out.params[next_param + 1]);
                     next_param += 2;
                   },
                   [&](const LeakyReluSpec& s) { h = leaky_relu(h, static_cast<T>(s.slope)); },
                   [&](const SiluSpec&) { h = silu(h); },
                   [&](const ReluSpec&) { h = relu(h); },
                   [&](const DropoutSpec& s) { h = dropout(h, static_cast<T>(s.rate), options.mode, options.rng); },
                   [&](const FlattenSpec&) { h = flatten(h); },
                   [&](const SoftmaxSpec&) {
                     if (!last) h = softmax(h);
                   },
                   [&](const ResidualBlockSpec& s) {
                     h = residual_block(h, out.params[next_param], out.params[next_param + 1],
                                        out.params[next_param + 2], out.params[next_param + 3], s.activation);
                     next_param += 4;
                   },
                   [&](const GlobalAvgPoolSpec&) { h = global_avg_pool(h); },
               },
               layer.spec);
    if (auto it = wanted.find(i); it != wanted.end()) {
      for (const auto& name : it->second) out.captured[name] = h;
    }
  }
  out.logits = h;
  return out;
}

template <typename T>
Tensor<T> forward_logits(const ModelGraph<T>& model, const Tensor<T>& batch) {
  Tape<T> tape(false);
  const Var<T> x = tape.constant(batch);
  return forward(model, tape, x, ForwardOptions{}).logits.value();
}

template <typename T>
ModelGraph<T> build_dcsnet(InputShape input, std::size_t num_classes, std::uint64_t init_seed) {
  if (input.height < 16 || input.width < 16) {
    throw BuildError("DCSNet needs spatial input of at least 16x16 for its four stride-2 stages");
  }
  if (num_classes < 2) throw BuildError("DCSNet needs at least two classes");
  std::vector<Layer> layers;
  const std::size_t filters[] = {64, 128, 128, 256};
  for (std::size_t s = 0; s < 4; ++s) {
    const std::string idx = std::to_string(s + 1);
    layers.push_back({"conv" + idx, Conv2dSpec{filters[s], {3, 3}, {2, 2}, Padding::same}});
    layers.push_back({"lrelu" + idx, LeakyReluSpec{0.2}});
    layers.push_back({"pool" + idx, MaxPool2dSpec{{2, 2}, {1, 1}, Padding::same}});
  }
  layers.push_back({"dropout", DropoutSpec{0.25}});
  layers.push_back({"flatten", FlattenSpec{}});
  layers.push_back({"dense", DenseSpec{num_classes}});
  layers.push_back({"softmax", SoftmaxSpec{}});
  return ModelGraph<T>::build("dcsnet", input, std::move(layers), init_seed);
}

std::string_view to_string(TeacherArchetype a) { return a == TeacherArchetype::residual ? "residual" : "silu_net"; }

TeacherArchetype teacher_archetype_from_string(std::string_view s) {
  if (s == "residual") return TeacherArchetype::residual;
  if (s == "silu_net") return TeacherArchetype::silu_net;
  throw ContractError("unknown teacher archetype '" + std::string(s) + "'");
}

TeacherConfig TeacherConfig::defaults(TeacherArchetype archetype) {
  if (archetype == TeacherArchetype::residual) return {archetype, 96, 4};
  return {archetype, 128, 4};
}

template <typename T>
ModelGraph<T> build_teacher(InputShape input, std::size_t num_classes, const TeacherConfig& cfg,
                            std::uint64_t init_seed) {
  if (cfg.depth < 1) throw BuildError("teacher depth must be >= 1");
  if (cfg.width < 1) throw BuildError("teacher width must be >= 1");
  if (num_classes < 2) throw BuildError("teacher needs at least two classes");
  const bool residual = cfg.archetype == TeacherArchetype::residual;
  std::vector<Layer> layers;
  layers.push_back({"stem_conv", Conv2dSpec{cfg.width, {3, 3}, {2, 2}, Padding::same}});
  if (residual) {
    layers.push_back({"stem_relu", ReluSpec{}});
  } else {
    layers.push_back({"stem_silu", SiluSpec{}});
  }
  layers.push_back({"stem_pool", MaxPool2dSpec{{2, 2}, {2, 2}, Padding::same}});
  for (std::size_t d = 0; d < cfg.depth; ++d) {
    const std::string idx = std::to_string(d + 1);
    if (residual) {
      layers.push_back({"block" + idx, ResidualBlockSpec{cfg.width, {3, 3}, BlockActivation::relu}});
    } else {
      layers.push_back({"conv" + idx, Conv2dSpec{cfg.width, {3, 3}, {1, 1}, Padding::same}});
      layers.push_back({"silu" + idx, SiluSpec{}});
    }
  }
  layers.push_back({"gap", GlobalAvgPoolSpec{}});
  layers.push_back({"dense", DenseSpec{num_classes}});
  layers.push_back({"softmax", SoftmaxSpec{}});
  return ModelGraph<T>::build(std::string("teacher-") + std::string(to_string(cfg.archetype)), input,
                              std::move(layers), init_seed);
}

template class ModelGraph<float>;
template class ModelGraph<double>;

#define DKD_INSTANTIATE_MODELS(T)                                                                             \
  template ForwardOutput<T> forward(const ModelGraph<T>&, Tape<T>&, const Var<T>&, const ForwardOptions&);    \
  template Tensor<T> forward_logits(const ModelGraph<T>&, const Tensor<T>&);                                  \
  template Var<T> residual_block(const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&,   \
                                 BlockActivation);                                                            \
  template ModelGraph<T> build_dcsnet(InputShape, std::size_t, std::uint64_t);                                \
  template ModelGraph<T> build_teacher(InputShape, std::size_t, const TeacherConfig&, std::uint64_t);

DKD_INSTANTIATE_MODELS(float)
DKD_INSTANTIATE_MODELS(double)

#undef DKD_INSTANTIATE_MODELS

}  // namespace dkd
