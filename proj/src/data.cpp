#include "dkd/data.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>

namespace dkd {

void AugmentPolicy::validate() const {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!(max_rotation_deg >= 0.0)) throw ContractError("augment: max rotation must be >= 0");
  if (!prob(rotation_prob) || !prob(hflip_prob) || !prob(vflip_prob)) {
    throw ContractError("augment: probabilities must lie in [0, 1]");
  }
}

LoadedImages load_image_dir(const std::filesystem::path& root, ImageSize resize) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw DataError("dataset root '" + root.string() + "' is not a directory");
  std::vector<fs::path> class_dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) class_dirs.push_back(entry.path());
  }
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty()) throw DataError("dataset root '" + root.string() + "' has no class directories");

  LoadedImages out;
  for (std::size_t label = 0; label < class_dirs.size(); ++label) {
    const std::string cls = class_dirs[label].filename().string();
    out.class_names.push_back(cls);
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(class_dirs[label])) {
      if (entry.is_regular_file()) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    std::size_t loaded = 0;
    for (const auto& file : files) {
      Tensor<float> image;
      try {
        image = to_tensor(read_image(file));
      } catch (const Error& e) {
        out.warnings.push_back("skipping '" + file.string() + "': " + e.what());
        continue;
      }
      if (image.dim(1) != resize.height || image.dim(2) != resize.width) image = resize_bilinear(image, resize);
      out.samples.push_back({std::move(image), static_cast<int>(label), cls + "/" + file.filename().string(), {}});
      ++loaded;
    }
    if (loaded == 0) throw DataError("class directory '" + class_dirs[label].string() + "' has no readable images");
  }
  return out;
}

DatasetSplit split(const std::vector<Sample>& samples, std::vector<std::string> class_names, SplitRatios ratios,
                   std::uint64_t seed) {
  const double ratio[3] = {ratios.train, ratios.validation, ratios.test};
  for (double r : ratio) {
    if (!(r >= 0.0)) throw ContractError("split ratios must be non-negative");
  }
  if (std::abs(ratio[0] + ratio[1] + ratio[2] - 1.0) > 1e-6) throw ContractError("split ratios must sum to 1");
  const std::size_t k = class_names.size();

  // Per class, groups of sample indices sharing a source id, in first-seen order.
  std::vector<std::vector<std::vector<std::size_t>>> groups(k);
  std::vector<std::map<std::string, std::size_t>> group_of(k);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const int label = samples[i].label;
    if (label < 0 || static_cast<std::size_t>(label) >= k) {
      throw ContractError("sample '" + samples[i].source_id + "' has label outside the class list");
    }
    auto& index = group_of[label];
    auto [it, inserted] = index.emplace(samples[i].source_id, groups[label].size());
    if (inserted) groups[label].emplace_back();
    groups[label][it->second].push_back(i);
  }

  std::vector<std::size_t> members[3];
  for (std::size_t c = 0; c < k; ++c) {
    auto& g = groups[c];
    const std::size_t n = g.size();
    std::size_t count[3];
    count[0] = static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratio[0] + 0.5 + 1e-9));
    count[1] = static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratio[1] + 0.5 + 1e-9));
    if (count[0] + count[1] > n) count[1] = n - count[0];
    count[2] = n - count[0] - count[1];
    for (int s = 0; s < 3; ++s) {
      if (ratio[s] > 0.0 && count[s] == 0) {
        throw ContractError("class '" + class_names[c] + "' has " + std::to_string(n) +
                            " samples, too few to fill every split");
      }
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng = make_rng({seed, c});
    shuffle_range(order.begin(), order.end(), rng);
    std::size_t at = 0;
    for (int s = 0; s < 3; ++s) {
      for (std::size_t j = 0; j < count[s]; ++j, ++at) {
        for (std::size_t idx : g[order[at]]) members[s].push_back(idx);
      }
    }
  }

  DatasetSplit out;
  out.class_names = std::move(class_names);
  std::vector<Sample>* dest[3] = {&out.train, &out.validation, &out.test};
  for (int s = 0; s < 3; ++s) {
    std::sort(members[s].begin(), members[s].end());
    for (std::size_t idx : members[s]) dest[s]->push_back(samples[idx]);
  }
  return out;
}

Tensor<float> rotate_nearest(const Tensor<float>& chw, double degrees) {
  if (chw.rank() != 3) throw DimensionError("rotate expects [C, H, W]");
  const std::size_t c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  const double rad = degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(rad), sn = std::sin(rad);
  const double cy = static_cast<double>(h) / 2.0, cx = static_cast<double>(w) / 2.0;
  Tensor<float> out(chw.shape());
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      // Inverse-map the output pixel centre into the source image.
      const double dx = static_cast<double>(x) + 0.5 - cx;
      const double dy = static_cast<double>(y) + 0.5 - cy;
      const double sx = cx + cs * dx + sn * dy - 0.5;
      const double sy = cy - sn * dx + cs * dy - 0.5;
      const auto ix = static_cast<std::size_t>(std::clamp(std::nearbyint(sx), 0.0, static_cast<double>(w - 1)));
      const auto iy = static_cast<std::size_t>(std::clamp(std::nearbyint(sy), 0.0, static_cast<double>(h - 1)));
      for (std::size_t ch = 0; ch < c; ++ch) out[(ch * h + y) * w + x] = chw[(ch * h + iy) * w + ix];
    }
  }
  return out;
}

Tensor<float> flip_horizontal(const Tensor<float>& chw) {
  if (chw.rank() != 3) throw DimensionError("flip expects [C, H, W]");
  const std::size_t rows = chw.dim(0) * chw.dim(1), w = chw.dim(2);
  Tensor<float> out(chw.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t x = 0; x < w; ++x) out[r * w + x] = chw[r * w + (w - 1 - x)];
  }
  return out;
}

Tensor<float> flip_vertical(const Tensor<float>& chw) {
  if (chw.rank() != 3) throw DimensionError("flip expects [C, H, W]");
  const std::size_t c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  Tensor<float> out(chw.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      std::copy_n(chw.data() + (ch * h + (h - 1 - y)) * w, w, out.data() + (ch * h + y) * w);
    }
  }
  return out;
}

Sample augment(const Sample& sample, const AugmentPolicy& policy, Rng& rng) {
  policy.validate();
  Sample out = sample;
  // Draws happen unconditionally so the stream position does not depend on outcomes.
  const double u_rot = uniform01(rng);
  const double angle = uniform(rng, -policy.max_rotation_deg, policy.max_rotation_deg);
  const double u_h = uniform01(rng);
  const double u_v = uniform01(rng);
  if (u_rot < policy.rotation_prob && angle != 0.0) out.image = rotate_nearest(out.image, angle);
  if (u_h < policy.hflip_prob) out.image = flip_horizontal(out.image);
  if (u_v < policy.vflip_prob) out.image = flip_vertical(out.image);
  return out;
}

std::vector<std::string> synth_class_names(std::size_t classes) {
  static const char* motifs[] = {"blobs", "stripes", "rings"};
  std::vector<std::string> names;
  for (std::size_t c = 0; c < classes; ++c) {
    std::string name = motifs[c % 3];
    if (c >= 3) name += std::to_string(c / 3 + 1);
    names.push_back(name);
  }
  return names;
}

namespace {

// Paints motif `kind` (0 blobs, 1 stripes, 2 rings) into one quadrant of the
// opacity map. All three cover about half the quadrant on average, so the
// amount of stain says nothing about the class.
void paint_motif(std::vector<double>& alpha, std::size_t w, std::size_t quadrant, std::size_t kind, double qh,
                 double qw, Rng& rng) {
  const double q = std::min(qh, qw);
  const double oy = quadrant >= 2 ? qh : 0.0, ox = quadrant % 2 == 1 ? qw : 0.0;
  const auto y0 = static_cast<std::size_t>(oy), x0 = static_cast<std::size_t>(ox);
  const auto y1 = y0 + static_cast<std::size_t>(qh), x1 = x0 + static_cast<std::size_t>(qw);
  auto put = [&](std::size_t y, std::size_t x, double a) {
    alpha[y * w + x] = std::max(alpha[y * w + x], a);
  };
  switch (kind) {
    case 0: {  // blobs
      const double sigma = 0.21 * q;
      double centers[4][2];
      for (auto& ctr : centers) {
        ctr[0] = oy + uniform(rng, q / 5.0, qh - q / 5.0);
        ctr[1] = ox + uniform(rng, q / 5.0, qw - q / 5.0);
      }
      for (std::size_t y = y0; y < y1; ++y) {
        for (std::size_t x = x0; x < x1; ++x) {
          double a = 0.0;
          for (const auto& ctr : centers) {
            const double dy = static_cast<double>(y) + 0.5 - ctr[0];
            const double dx = static_cast<double>(x) + 0.5 - ctr[1];
            a = std::max(a, std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma)));
          }
          put(y, x, a);
        }
      }
      break;
    }
    case 1: {  // stripes
      const double period = q / 4.0;
      const double theta = uniform(rng, 0.0, std::numbers::pi);
      const double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
      for (std::size_t y = y0; y < y1; ++y) {
        for (std::size_t x = x0; x < x1; ++x) {
          const double u = static_cast<double>(x) * std::cos(theta) + static_cast<double>(y) * std::sin(theta);
          put(y, x, 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * u / period + phase));
        }
      }
      break;
    }
    default: {  // rings
      const double cy = oy + qh / 2.0 + uniform(rng, -q / 10.0, q / 10.0);
      const double cx = ox + qw / 2.0 + uniform(rng, -q / 10.0, q / 10.0);
      const double outer = q * 0.34, inner = q * 0.15, width = q / 14.0;
      for (std::size_t y = y0; y < y1; ++y) {
        for (std::size_t x = x0; x < x1; ++x) {
          const double r = std::hypot(static_cast<double>(y) + 0.5 - cy, static_cast<double>(x) + 0.5 - cx);
          const double a1 = std::exp(-(r - outer) * (r - outer) / (2.0 * width * width));
          const double a2 = std::exp(-(r - inner) * (r - inner) / (2.0 * width * width));
          put(y, x, std::max(a1, a2));
        }
      }
      break;
    }
  }
}

}  // namespace

std::vector<Sample> synth_generate(const SynthSpec& spec) {
  if (spec.size.height < 16 || spec.size.width < 16) throw ContractError("synthetic images must be at least 16x16");
  if (spec.classes < 2) throw ContractError("synthetic data needs at least two classes");
  if (!(spec.noise >= 0.0)) throw ContractError("noise level must be >= 0");
  const std::size_t h = spec.size.height, w = spec.size.width, hw = h * w;
  const double qh = static_cast<double>(h / 2), qw = static_cast<double>(w / 2);
  const double background[3] = {0.88, 0.70, 0.82};
  const double stain[3] = {0.45, 0.20, 0.60};
  const auto names = synth_class_names(spec.classes);

  std::vector<Sample> out;
  out.reserve(spec.classes * spec.count_per_class);
  for (std::size_t c = 0; c < spec.classes; ++c) {
    for (std::size_t i = 0; i < spec.count_per_class; ++i) {
      Rng rng = make_rng({spec.seed, c, i});
      std::vector<double> alpha(hw, 0.0);
      paint_motif(alpha, w, c % 4, c % 3, qh, qw, rng);
      Tensor<float> image(Shape{3, h, w});
      for (std::size_t ch = 0; ch < 3; ++ch) {
        for (std::size_t p = 0; p < hw; ++p) {
          const double a = alpha[p];
          double v = background[ch] * (1.0 - a) + stain[ch] * a;
          if (spec.noise > 0.0) v += spec.noise * standard_normal(rng);
          image[ch * hw + p] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
      }
      out.push_back({std::move(image), static_cast<int>(c), "synth/" + names[c] + "/" + std::to_string(i),
                     static_cast<Quadrant>(c % 4)});
    }
  }
  return out;
}

Batch make_batch(const std::vector<Sample>& samples, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ContractError("a batch needs at least one sample");
  const Shape& s = samples.at(indices[0]).image.shape();
  const std::size_t per = shape_numel(s);
  Batch b{Tensor<float>(Shape{indices.size(), s.at(0), s.at(1), s.at(2)}), {}, {indices.begin(), indices.end()}};
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const Sample& smp = samples.at(indices[k]);
    if (smp.image.shape() != s) throw DimensionError("batch images have differing shapes");
    std::copy_n(smp.image.data(), per, b.images.data() + k * per);
    b.labels.push_back(smp.label);
  }
  return b;
}

BatchStream::BatchStream(const std::vector<Sample>& samples, std::size_t batch_size, std::uint64_t seed,
                         std::uint64_t epoch, bool shuffle, std::optional<AugmentPolicy> augment)
    : samples_(&samples),
      batch_size_(batch_size),
      order_(samples.size()),
      augment_(std::move(augment)),
      augment_rng_(make_rng({seed + epoch, 0x617567ull})) {
  if (batch_size == 0) throw ContractError("batch size must be >= 1");
  if (augment_) augment_->validate();
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  if (shuffle) {
    Rng rng = make_rng({seed + epoch});
    shuffle_range(order_.begin(), order_.end(), rng);
  }
}

std::size_t BatchStream::batch_count() const noexcept { return (order_.size() + batch_size_ - 1) / batch_size_; }

std::optional<Batch> BatchStream::next() {
  if (cursor_ >= order_.size()) return std::nullopt;
  const std::size_t end = std::min(cursor_ + batch_size_, order_.size());
  std::span<const std::size_t> idx(order_.data() + cursor_, end - cursor_);
  cursor_ = end;
  Batch b = make_batch(*samples_, idx);
  if (augment_) {
    const std::size_t per = b.images.size() / idx.size();
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const Sample aug = augment((*samples_)[idx[k]], *augment_, augment_rng_);
      std::copy_n(aug.image.data(), per, b.images.data() + k * per);
    }
  }
  return b;
}

}  // namespace dkd
