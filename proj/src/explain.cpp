#include "dkd/explain.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dkd/errors.hpp"

namespace dkd {

std::string_view to_string(CamTarget t) { return t == CamTarget::logit ? "logit" : "log_odds"; }

CamTarget cam_target_from_string(std::string_view s) {
  if (s == "logit") return CamTarget::logit;
  if (s == "log_odds") return CamTarget::log_odds;
  throw ContractError("unknown Grad-CAM target '" + std::string(s) + "' (expected logit or log_odds)");
}

Heatmap grad_cam(const ModelGraph<float>& model, const Tensor<float>& image, std::size_t target_class,
                 const std::string& layer, CamTarget target_kind) {
  if (target_class >= model.num_classes()) {
    throw ContractError("target class " + std::to_string(target_class) + " out of range for " +
                        std::to_string(model.num_classes()) + " classes");
  }
  model.capture_layer(layer);
  const InputShape in = model.input_shape();
  if (image.shape() != Shape{in.channels, in.height, in.width}) {
    throw DimensionError("grad_cam: image " + shape_string(image.shape()) + " does not match model input");
  }

  Tape<float> tape;
  const Var<float> x = tape.constant(image.reshaped({1, in.channels, in.height, in.width}));
  ForwardOptions opts;
  opts.mode = Mode::infer;
  // Parameter leaves make every downstream node differentiable.
  opts.track_params = true;
  opts.capture = {layer};
  const auto out = forward(model, tape, x, opts);
  const Var<float> act = out.captured.at(layer);
  Var<float> target = select(out.logits, target_class);
  if (target_kind == CamTarget::log_odds && model.num_classes() > 1) {
    // d logsumexp_{j != c} z_j = sum_j q_j dz_j with q the softmax over the
    // rivals, so constant weights q give the exact gradient.
    const Tensor<float>& z = out.logits.value();
    const std::size_t k = model.num_classes();
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) {
      if (j != target_class) peak = std::max(peak, static_cast<double>(z[j]));
    }
    std::vector<double> q(k, 0.0);
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      if (j == target_class) continue;
      q[j] = std::exp(static_cast<double>(z[j]) - peak);
      total += q[j];
    }
    for (std::size_t j = 0; j < k; ++j) {
      if (j == target_class) continue;
      target = weighted_sum(target, 1.0f, select(out.logits, j), static_cast<float>(-q[j] / total));
    }
  }
  const Var<float> keep[] = {act};
  const auto grads = tape.backward(target, keep);
  const Tensor<float>& g = grads[act];
  const Tensor<float>& a = act.value();

  const std::size_t c = a.dim(1), h = a.dim(2), w = a.dim(3), hw = h * w;
  std::vector<double> cam(hw, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double weight = 0.0;
    for (std::size_t i = 0; i < hw; ++i) weight += g[ch * hw + i];
    weight /= static_cast<double>(hw);
    if (weight == 0.0) continue;
    for (std::size_t i = 0; i < hw; ++i) cam[i] += weight * a[ch * hw + i];
  }
  double peak = 0.0;
  for (double& v : cam) {
    v = std::max(v, 0.0);
    peak = std::max(peak, v);
  }
  Heatmap hm{Tensor<float>(Shape{h, w}), layer, target_class, {in.height, in.width}};
  if (peak > 0.0) {
    for (std::size_t i = 0; i < hw; ++i) hm.values[i] = static_cast<float>(cam[i] / peak);
  }
  return hm;
}

Heatmap upsample(const Heatmap& hm, ImageSize size) {
  if (size.height < hm.height() || size.width < hm.width()) {
    throw ContractError("upsample: target " + std::to_string(size.height) + "x" + std::to_string(size.width) +
                        " is smaller than the heatmap");
  }
  Heatmap out = hm;
  const auto resized = resize_bilinear(hm.values.reshaped({1, hm.height(), hm.width()}), size);
  out.values = resized.reshaped({size.height, size.width});
  for (auto& v : out.values.values()) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

RgbImage overlay_image(const Heatmap& hm, const Tensor<float>& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw DimensionError("overlay expects a [3, H, W] image, got " + shape_string(image.shape()));
  }
  const std::size_t h = image.dim(1), w = image.dim(2), hw = h * w;
  if (hm.height() != h || hm.width() != w) {
    throw DimensionError("heatmap " + shape_string(hm.values.shape()) + " must be upsampled to the image size first");
  }
  Tensor<float> blended(Shape{3, h, w});
  for (std::size_t i = 0; i < hw; ++i) {
    const float gray = 0.299f * image[i] + 0.587f * image[hw + i] + 0.114f * image[2 * hw + i];
    const float heat = hm.values[i];
    blended[i] = 0.5f * gray + 0.5f * heat;
    blended[hw + i] = 0.5f * gray;
    blended[2 * hw + i] = 0.5f * gray + 0.5f * (1.0f - heat);
  }
  return from_tensor(blended);
}

void render_overlay(const Heatmap& hm, const Tensor<float>& image, const std::filesystem::path& path) {
  write_ppm(path, overlay_image(hm, image));
}

double mass_in_quadrant(const Heatmap& hm, Quadrant q) {
  const std::size_t h = hm.height(), w = hm.width();
  const bool want_bottom = q == Quadrant::bottom_left || q == Quadrant::bottom_right;
  const bool want_right = q == Quadrant::top_right || q == Quadrant::bottom_right;
  double inside = 0.0, total = 0.0;
  for (std::size_t y = 0; y < h; ++y) {
    const bool bottom = 2 * y >= h;
    for (std::size_t x = 0; x < w; ++x) {
      const bool right = 2 * x >= w;
      const double v = hm.values[y * w + x];
      total += v;
      if (bottom == want_bottom && right == want_right) inside += v;
    }
  }
  return total > 0.0 ? inside / total : 0.0;
}

}  // namespace dkd
