#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dkd/tensor.hpp"

namespace dkd {

struct ImageSize {
  std::size_t height = 0;
  std::size_t width = 0;
  bool operator==(const ImageSize&) const = default;
};

// 8-bit interleaved RGB.
struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;

  bool operator==(const RgbImage&) const = default;
};

// Binary PPM (P6): "P6", width, height, maxval separated by whitespace (with
// '#' comments allowed), one whitespace byte, then raw RGB triplets. Only
// maxval <= 255 is accepted; samples are rescaled to 0..255.
RgbImage decode_ppm(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_ppm(const RgbImage& image);

RgbImage read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const RgbImage& image);

bool png_supported();
// Reads .ppm always and .png when built with libpng. Throws DataError otherwise.
RgbImage read_image(const std::filesystem::path& path);

// [3, H, W] floats in [0, 1], channel order R, G, B.
Tensor<float> to_tensor(const RgbImage& image);
// Clamps to [0, 1] and rounds to the nearest 8-bit level.
RgbImage from_tensor(const Tensor<float>& chw);

// Bilinear resampling with half-pixel centres and edge clamping. A constant
// image stays exactly constant.
Tensor<float> resize_bilinear(const Tensor<float>& chw, ImageSize size);

}  // namespace dkd
