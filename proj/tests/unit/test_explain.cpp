#include <gtest/gtest.h>

#include <algorithm>

#include "dkd/explain.hpp"
#include "support/temp_dir.hpp"

using namespace dkd;

namespace {

// conv1x1 summing the channels -> GAP -> dense with logits (s, -s).
ModelGraph<float> summing_model(std::size_t h, std::size_t w) {
  auto m = ModelGraph<float>::build("sum", {3, h, w},
                                    {{"conv", Conv2dSpec{1, {1, 1}, {1, 1}, Padding::same}},
                                     {"gap", GlobalAvgPoolSpec{}},
                                     {"fc", DenseSpec{2}}},
                                    0);
  m.param("conv.weight") = Tensor<float>(Shape{1, 3, 1, 1}, 1.0f);
  m.param("fc.weight") = Tensor<float>(Shape{1, 2}, std::vector<float>{1.0f, -1.0f});
  return m;
}

Tensor<float> ramp_image(std::size_t h, std::size_t w) {
  Tensor<float> img(Shape{3, h, w});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < h * w; ++i) img[c * h * w + i] = 0.1f * static_cast<float>(c + 1) * (i + 1) / (h * w);
  return img;
}

Heatmap make_map(std::size_t h, std::size_t w, float fill) {
  return Heatmap{Tensor<float>(Shape{h, w}, fill), "test", 0, {h, w}};
}

}  // namespace

TEST(GradCam, ExactMapForLinearModel) {
  const auto model = summing_model(4, 5);
  const auto img = ramp_image(4, 5);
  const auto hm = grad_cam(model, img, 0, "conv");
  ASSERT_EQ(hm.values.shape(), (Shape{4, 5}));
  // Activation is the channel sum; positive weight, so the map is a / max(a).
  for (std::size_t i = 0; i < 20; ++i) {
    const double a = (0.1 + 0.2 + 0.3) * (i + 1) / 20.0;
    EXPECT_NEAR(hm.values[i], a / 0.6, 1e-6);
  }
  EXPECT_EQ(hm.values[19], 1.0f);
  EXPECT_EQ(hm.layer, "conv");
  EXPECT_EQ(hm.input_size, (ImageSize{4, 5}));
}

TEST(GradCam, NegativeEvidenceGivesAllZeroMap) {
  const auto model = summing_model(4, 4);
  const auto hm = grad_cam(model, ramp_image(4, 4), 1, "final_conv");
  for (float v : hm.values.values()) EXPECT_EQ(v, 0.0f);
  EXPECT_EQ(mass_in_quadrant(hm, Quadrant::top_left), 0.0);
}

TEST(GradCam, LogOddsIgnoresCommonShift) {
  const auto model = summing_model(4, 4);
  const auto img = ramp_image(4, 4);
  // With two classes the log-odds is z0 - z1 = 2 z0.
  const auto a = grad_cam(model, img, 0, "conv", CamTarget::logit);
  const auto b = grad_cam(model, img, 0, "conv", CamTarget::log_odds);
  for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(a.values[i], b.values[i], 1e-6);
}

TEST(GradCam, ZeroWeightsGiveZeroMap) {
  auto model = summing_model(4, 4);
  model.param("fc.weight") = Tensor<float>(Shape{1, 2}, 0.0f);
  const auto hm = grad_cam(model, ramp_image(4, 4), 0);
  for (float v : hm.values.values()) EXPECT_EQ(v, 0.0f);
}

TEST(GradCam, ScaleInvariantForBiasFreeReluModel) {
  const auto model = ModelGraph<float>::build("relu", {3, 8, 8},
                                              {{"c1", Conv2dSpec{4, {3, 3}, {1, 1}, Padding::same}},
                                               {"r1", ReluSpec{}},
                                               {"c2", Conv2dSpec{4, {3, 3}, {2, 2}, Padding::same}},
                                               {"r2", ReluSpec{}},
                                               {"gap", GlobalAvgPoolSpec{}},
                                               {"fc", DenseSpec{3}}},
                                              5);
  const auto img = ramp_image(8, 8);
  Tensor<float> doubled = img;
  for (auto& v : doubled.values()) v *= 2.0f;
  for (std::size_t k = 0; k < 3; ++k) {
    const auto a = grad_cam(model, img, k, "r2");
    const auto b = grad_cam(model, doubled, k, "r2");
    for (std::size_t i = 0; i < a.values.size(); ++i) EXPECT_NEAR(a.values[i], b.values[i], 1e-5);
  }
}

TEST(GradCam, StudentMapShapeAndRange) {
  const auto model = build_dcsnet<float>({3, 32, 32}, 3, 1);
  const auto hm = grad_cam(model, ramp_image(32, 32), 2);
  EXPECT_EQ(hm.values.shape(), (Shape{2, 2}));
  for (float v : hm.values.values()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
  const auto up = upsample(hm, {32, 32});
  EXPECT_EQ(up.values.shape(), (Shape{32, 32}));
  EXPECT_EQ(up.target_class, 2u);
}

TEST(GradCam, Errors) {
  const auto model = summing_model(4, 4);
  EXPECT_THROW(grad_cam(model, ramp_image(4, 4), 2), ContractError);
  EXPECT_THROW(grad_cam(model, ramp_image(4, 4), 0, "gap"), ContractError);
  EXPECT_THROW(grad_cam(model, ramp_image(5, 4), 0), DimensionError);
  EXPECT_THROW(cam_target_from_string("prob"), ContractError);
  EXPECT_EQ(cam_target_from_string(to_string(CamTarget::log_odds)), CamTarget::log_odds);
}

TEST(Upsample, RejectsShrinkAndKeepsConstants) {
  const auto hm = make_map(4, 4, 0.5f);
  EXPECT_THROW(upsample(hm, {2, 8}), ContractError);
  const auto up = upsample(hm, {9, 7});
  for (float v : up.values.values()) EXPECT_EQ(v, 0.5f);
}

TEST(Quadrants, OddSizesAssignMiddleToTopLeft) {
  auto hm = make_map(3, 3, 1.0f);
  EXPECT_NEAR(mass_in_quadrant(hm, Quadrant::top_left), 4.0 / 9.0, 1e-15);
  EXPECT_NEAR(mass_in_quadrant(hm, Quadrant::top_right), 2.0 / 9.0, 1e-15);
  EXPECT_NEAR(mass_in_quadrant(hm, Quadrant::bottom_left), 2.0 / 9.0, 1e-15);
  EXPECT_NEAR(mass_in_quadrant(hm, Quadrant::bottom_right), 1.0 / 9.0, 1e-15);
  hm = make_map(3, 3, 0.0f);
  hm.values[4] = 1.0f;
  EXPECT_EQ(mass_in_quadrant(hm, Quadrant::top_left), 1.0);
}

TEST(Overlay, BlendFormula) {
  Tensor<float> img(Shape{3, 1, 2});
  img[0] = 1.0f;  // pixel 0 pure red, pixel 1 black
  auto hm = make_map(1, 2, 0.0f);
  hm.values[0] = 1.0f;
  const auto out = overlay_image(hm, img);
  // gray = 0.299: (0.5*0.299 + 0.5, 0.5*0.299, 0.5*0.299)
  EXPECT_EQ(out.pixels, (std::vector<std::uint8_t>{166, 38, 38, 0, 0, 128}));
  EXPECT_THROW(overlay_image(make_map(2, 2, 0.0f), img), DimensionError);

  dkd::testing::TempDir dir("overlay");
  render_overlay(hm, img, dir / "o.ppm");
  EXPECT_EQ(read_ppm(dir / "o.ppm"), out);
}
