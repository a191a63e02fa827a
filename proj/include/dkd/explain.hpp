#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>

#include "dkd/data.hpp"
#include "dkd/image.hpp"
#include "dkd/models.hpp"

namespace dkd {

struct Heatmap {
  Tensor<float> values;  // [H, W], in [0, 1]
  std::string layer;
  std::size_t target_class = 0;
  ImageSize input_size;

  std::size_t height() const { return values.dim(0); }
  std::size_t width() const { return values.dim(1); }
};

// What the channel weights differentiate.
//   logit     z_c
//   log_odds  z_c - logsumexp_{j != c} z_j, i.e. log(p_c / (1 - p_c)). Adding
//             the same amount to every logit leaves it unchanged, as it does
//             the softmax.
enum class CamTarget { logit, log_odds };

std::string_view to_string(CamTarget t);
CamTarget cam_target_from_string(std::string_view s);

// Gradient-weighted class activation map at a capture point (default: the
// last convolutional stage). Infer mode, so deterministic. The map is ReLU'd
// and divided by its maximum; an all-zero map stays zero.
Heatmap grad_cam(const ModelGraph<float>& model, const Tensor<float>& image, std::size_t target_class,
                 const std::string& layer = "final_conv", CamTarget target = CamTarget::logit);

// Bilinear resize to at least the current size. Throws ContractError when
// shrinking.
Heatmap upsample(const Heatmap& hm, ImageSize size);

// 0.5 * grayscale(image) + 0.5 * (h, 0, 1 - h) per pixel.
RgbImage overlay_image(const Heatmap& hm, const Tensor<float>& image);
void render_overlay(const Heatmap& hm, const Tensor<float>& image, const std::filesystem::path& path);

// Share of the total heat inside a quadrant; 0 for an all-zero map. With odd
// sizes the middle row/column belongs to the top/left half.
double mass_in_quadrant(const Heatmap& hm, Quadrant q);

}  // namespace dkd
