#include "dkd/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#ifdef DKD_HAVE_PNG
#include <png.h>
#endif

namespace dkd {

namespace {

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class HeaderReader {
 public:
  explicit HeaderReader(std::span<const std::uint8_t> b) : b_(b) {}

  void skip_space_and_comments() {
    while (pos_ < b_.size()) {
      if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else if (std::isspace(b_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::size_t number(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    std::size_t v = 0;
    while (pos_ < b_.size() && std::isdigit(b_[pos_])) {
      v = v * 10 + static_cast<std::size_t>(b_[pos_] - '0');
      if (v > (1u << 24)) throw FormatError(std::string("PPM ") + what + " is too large", start);
      ++pos_;
    }
    if (pos_ == start) throw FormatError(std::string("PPM header: expected ") + what, start);
    return v;
  }

  std::size_t pos_ = 0;

 private:
  std::span<const std::uint8_t> b_;
};

}  // namespace

RgbImage decode_ppm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw FormatError("not a binary PPM (missing P6)", 0);
  HeaderReader hr(bytes);
  hr.pos_ = 2;
  const std::size_t width = hr.number("width");
  const std::size_t height = hr.number("height");
  const std::size_t maxval = hr.number("maxval");
  if (width == 0 || height == 0) throw FormatError("PPM dimensions must be positive", hr.pos_);
  if (maxval == 0 || maxval > 255) throw FormatError("PPM maxval must be in 1..255", hr.pos_);
  if (hr.pos_ >= bytes.size() || !std::isspace(bytes[hr.pos_])) {
    throw FormatError("PPM header must end with a single whitespace byte", hr.pos_);
  }
  ++hr.pos_;
  const std::size_t need = width * height * 3;
  if (bytes.size() - hr.pos_ < need) throw FormatError("PPM pixel data truncated", bytes.size());
  RgbImage img{width, height, std::vector<std::uint8_t>(bytes.begin() + static_cast<std::ptrdiff_t>(hr.pos_),
                                                        bytes.begin() + static_cast<std::ptrdiff_t>(hr.pos_ + need))};
  if (maxval != 255) {
    for (auto& v : img.pixels) {
      v = static_cast<std::uint8_t>(std::lround(255.0 * std::min<std::size_t>(v, maxval) / static_cast<double>(maxval)));
    }
  }
  return img;
}

std::vector<std::uint8_t> encode_ppm(const RgbImage& image) {
  if (image.pixels.size() != image.width * image.height * 3) throw ContractError("RGB buffer size mismatch");
  const std::string header = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), image.pixels.begin(), image.pixels.end());
  return out;
}

RgbImage read_ppm(const std::filesystem::path& path) { return decode_ppm(slurp(path)); }

void write_ppm(const std::filesystem::path& path, const RgbImage& image) {
  const auto bytes = encode_ppm(image);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

bool png_supported() {
#ifdef DKD_HAVE_PNG
  return true;
#else
  return false;
#endif
}

#ifdef DKD_HAVE_PNG
namespace {

RgbImage read_png(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  const auto bytes = slurp(path);
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    throw DataError("cannot decode PNG '" + path.string() + "': " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  RgbImage out{img.width, img.height, std::vector<std::uint8_t>(PNG_IMAGE_SIZE(img))};
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&img);
    throw DataError("cannot decode PNG '" + path.string() + "': " + img.message);
  }
  return out;
}

}  // namespace
#endif

RgbImage read_image(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
  if (ext == ".ppm") return read_ppm(path);
#ifdef DKD_HAVE_PNG
  if (ext == ".png") return read_png(path);
#endif
  throw DataError("unsupported image format '" + ext + "' for '" + path.string() + "'");
}

Tensor<float> to_tensor(const RgbImage& image) {
  const std::size_t hw = image.width * image.height;
  Tensor<float> t(Shape{3, image.height, image.width});
  for (std::size_t i = 0; i < hw; ++i) {
    for (std::size_t ch = 0; ch < 3; ++ch) t[ch * hw + i] = static_cast<float>(image.pixels[i * 3 + ch]) / 255.0f;
  }
  return t;
}

RgbImage from_tensor(const Tensor<float>& chw) {
  if (chw.rank() != 3 || chw.dim(0) != 3) throw DimensionError("expected a [3, H, W] tensor, got " + shape_string(chw.shape()));
  const std::size_t h = chw.dim(1), w = chw.dim(2), hw = h * w;
  RgbImage img{w, h, std::vector<std::uint8_t>(hw * 3)};
  for (std::size_t i = 0; i < hw; ++i) {
    for (std::size_t ch = 0; ch < 3; ++ch) {
      const float v = std::clamp(chw[ch * hw + i], 0.0f, 1.0f);
      img.pixels[i * 3 + ch] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
  }
  return img;
}

Tensor<float> resize_bilinear(const Tensor<float>& chw, ImageSize size) {
  if (chw.rank() != 3) throw DimensionError("resize_bilinear expects [C, H, W], got " + shape_string(chw.shape()));
  if (size.height == 0 || size.width == 0) throw ContractError("resize target must be positive");
  const std::size_t c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  Tensor<float> out(Shape{c, size.height, size.width});

  struct Tap {
    std::size_t lo, hi;
    float t;
  };
  auto taps = [](std::size_t in, std::size_t out_len) {
    std::vector<Tap> v(out_len);
    const double ratio = static_cast<double>(in) / static_cast<double>(out_len);
    for (std::size_t i = 0; i < out_len; ++i) {
      const double src = std::clamp((static_cast<double>(i) + 0.5) * ratio - 0.5, 0.0, static_cast<double>(in - 1));
      const auto lo = static_cast<std::size_t>(std::floor(src));
      v[i] = {lo, std::min(lo + 1, in - 1), static_cast<float>(src - static_cast<double>(lo))};
    }
    return v;
  };
  const auto ty = taps(h, size.height);
  const auto tx = taps(w, size.width);
  // lerp form a + (b - a) t keeps constant regions exact.
  auto lerp = [](float a, float b, float t) { return a + (b - a) * t; };
  for (std::size_t ch = 0; ch < c; ++ch) {
    const float* src = chw.data() + ch * h * w;
    float* dst = out.data() + ch * size.height * size.width;
    for (std::size_t y = 0; y < size.height; ++y) {
      const Tap& a = ty[y];
      for (std::size_t x = 0; x < size.width; ++x) {
        const Tap& b = tx[x];
        const float top = lerp(src[a.lo * w + b.lo], src[a.lo * w + b.hi], b.t);
        const float bottom = lerp(src[a.hi * w + b.lo], src[a.hi * w + b.hi], b.t);
        dst[y * size.width + x] = lerp(top, bottom, a.t);
      }
    }
  }
  return out;
}

}  // namespace dkd
