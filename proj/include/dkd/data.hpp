#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dkd/image.hpp"
#include "dkd/rng.hpp"

namespace dkd {

enum class Quadrant { top_left = 0, top_right = 1, bottom_left = 2, bottom_right = 3 };

struct Sample {
  Tensor<float> image;  // [C, H, W] in [0, 1]
  int label = 0;
  std::string source_id;
  // Where the class evidence sits; known only for generated data.
  std::optional<Quadrant> signal_region;
};

struct DatasetSplit {
  std::vector<Sample> train;
  std::vector<Sample> validation;
  std::vector<Sample> test;
  std::vector<std::string> class_names;

  std::size_t num_classes() const noexcept { return class_names.size(); }
};

struct SplitRatios {
  double train = 0.8;
  double validation = 0.1;
  double test = 0.1;
};

// Rotation by a uniform angle in [-max_rotation_deg, max_rotation_deg] with
// probability rotation_prob, then independent horizontal and vertical flips.
struct AugmentPolicy {
  double max_rotation_deg = 25.0;
  double rotation_prob = 1.0;
  double hflip_prob = 0.5;
  double vflip_prob = 0.5;

  static AugmentPolicy none() { return {0.0, 0.0, 0.0, 0.0}; }
  void validate() const;
};

struct LoadedImages {
  std::vector<Sample> samples;
  std::vector<std::string> class_names;
  // One entry per skipped file.
  std::vector<std::string> warnings;
};

// Reads root/<class>/<image> with classes labelled in sorted-name order.
// Images are resized bilinearly and scaled to [0, 1]. Unreadable files are
// skipped with a warning; a class directory without usable images is a DataError.
LoadedImages load_image_dir(const std::filesystem::path& root, ImageSize resize);

// Stratified shuffle-split per class; samples sharing a source id stay together.
DatasetSplit split(const std::vector<Sample>& samples, std::vector<std::string> class_names, SplitRatios ratios,
                   std::uint64_t seed);

Sample augment(const Sample& sample, const AugmentPolicy& policy, Rng& rng);

// Exposed for tests and the augmentation pipeline.
Tensor<float> rotate_nearest(const Tensor<float>& chw, double degrees);
Tensor<float> flip_horizontal(const Tensor<float>& chw);
Tensor<float> flip_vertical(const Tensor<float>& chw);

// Histology-flavoured stand-in data: a pinkish noisy background with one
// texture motif per class (blobs, stripes, rings, repeating) drawn inside a
// class-specific quadrant (class c uses quadrant c mod 4).
struct SynthSpec {
  std::size_t classes = 3;
  ImageSize size{32, 32};
  std::size_t count_per_class = 300;
  double noise = 0.1;
  std::uint64_t seed = 0;
};

std::vector<Sample> synth_generate(const SynthSpec& spec);
std::vector<std::string> synth_class_names(std::size_t classes);

struct Batch {
  Tensor<float> images;  // [N, C, H, W]
  std::vector<int> labels;
  std::vector<std::size_t> indices;  // positions in the source sample list
};

// Walks a sample list in batches. Order is a pure function of (seed, epoch)
// when shuffling; the last partial batch is kept. When a policy is given every
// image is augmented with a generator derived from (seed, epoch).
class BatchStream {
 public:
  BatchStream(const std::vector<Sample>& samples, std::size_t batch_size, std::uint64_t seed, std::uint64_t epoch,
              bool shuffle = true, std::optional<AugmentPolicy> augment = std::nullopt);

  std::optional<Batch> next();
  std::size_t batch_count() const noexcept;

 private:
  const std::vector<Sample>* samples_;
  std::size_t batch_size_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::optional<AugmentPolicy> augment_;
  Rng augment_rng_;
};

Batch make_batch(const std::vector<Sample>& samples, std::span<const std::size_t> indices);

}  // namespace dkd
