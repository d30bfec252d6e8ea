#pragma once

#include <torch/torch.h>

#include <opencv2/core.hpp>

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ptl/common.hpp"

// Manifests, image decoding and normalisation, augmentation and synthetic
// degradations. Image tensors are float32, channels x height x width, with
// values in [-1, 1]; batches add a leading dimension.
namespace ptl::data {

enum class Split { Train, Val, Test };

std::string_view to_string(Split split);
Split parse_split(std::string_view text);

struct ImageSize {
  int height = 64;
  int width = 64;
  friend bool operator==(const ImageSize&, const ImageSize&) = default;
};

struct ManifestRecord {
  fs::path path;
  int quality_label = 0;  // 0 = low, 1 = high
  std::optional<int> dr_label;  // 0 = normal, 1 = abnormal
  Split split = Split::Train;
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;
  std::string source_id;
  std::uint64_t seed = 0;
  std::string config_digest;

  std::map<int, std::size_t> count_by_quality() const;
  std::map<Split, std::size_t> count_by_split() const;
  // Records with the given split and, optionally, quality label, in manifest order.
  std::vector<ManifestRecord> select(Split split, std::optional<int> quality = std::nullopt) const;
};

// Reads a label file (CSV: filename,quality[,dr], optional header row) and
// binds each labelled filename to an image under `root`. Records are sorted
// by path and then shuffled with `seed`.
DatasetManifest load_manifest(const fs::path& root, const fs::path& labels, std::uint64_t seed = 0);

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct SplitOptions {
  // Test split draws only from high-quality records.
  bool test_high_only = false;
};

// Per-split record counts for `total` records using largest-remainder
// rounding, so each count is within one record of fraction * total.
std::array<std::size_t, 3> split_sizes(std::size_t total, const SplitFractions& fractions);

DatasetManifest build_splits(const DatasetManifest& manifest, const SplitFractions& fractions,
                             std::uint64_t seed, const SplitOptions& options = {});

// JSON-lines manifest. The first line is a header object
// {"manifest": {"source_id", "seed", "config_digest"}}; every further line is
// {"path", "quality", "dr", "split"} with paths relative to the file's directory.
std::string serialize_manifest(const DatasetManifest& manifest, const fs::path& base_dir);
void write_manifest(const DatasetManifest& manifest, const fs::path& file);
DatasetManifest read_manifest(const fs::path& file);

// D(i) = {X_L^(i), X_H}: the low-quality training and validation images of
// pass i and the fixed high-quality set.
struct PassDataset {
  int pass_index = 0;
  std::vector<ManifestRecord> low_set;
  std::vector<ManifestRecord> val_low_set;
  std::vector<ManifestRecord> high_set;
};

PassDataset pass_dataset_from_manifest(const DatasetManifest& manifest);

// ---- images ---------------------------------------------------------------

// Decodes an 8-bit image as RGB. Throws ShapeError unless it has 3 channels.
cv::Mat load_image(const fs::path& path);
// Lossless PNG with fixed encoder settings.
void save_png(const cv::Mat& rgb, const fs::path& path);

// 8-bit RGB -> 3 x H x W tensor, bilinear resize, p -> 2p/255 - 1.
torch::Tensor preprocess(const cv::Mat& rgb, ImageSize size);
// Inverse of the normalisation: rounds to the nearest grey level.
cv::Mat denormalize(const torch::Tensor& image);

torch::Tensor load_tensor(const fs::path& path, ImageSize size);
// Stacks the preprocessed images of `records` into an N x 3 x H x W batch.
torch::Tensor load_batch(std::span<const ManifestRecord> records, ImageSize size);

struct AugmentPlan {
  bool hflip = false;
  bool vflip = false;
  int quarter_turns = 0;       // 0..3, counter-clockwise
  double brightness = 0.0;     // additive, |shift| <= 0.1
  double contrast = 1.0;       // scale about the image mean, in [0.9, 1.1]

  bool empty() const;
};

AugmentPlan augment_plan(std::uint64_t seed);
torch::Tensor apply_augment(const torch::Tensor& image, const AugmentPlan& plan);
torch::Tensor augment(const torch::Tensor& image, std::uint64_t seed);

struct DarkPatch {
  double center_y = 0.0;  // pixels
  double center_x = 0.0;
  double radius = 0.0;
  double attenuation = 0.0;  // in [0, 1]
};

struct DegradationSpec {
  double blur_sigma = 0.0;
  std::vector<DarkPatch> dark_patches;
  double contrast_scale = 1.0;
  double brightness_shift = 0.0;
  double saturation_clip = 1.0;
  std::uint64_t seed = 0;

  bool neutral() const;
};

void validate(const DegradationSpec& spec);

// Blur, contrast about the mean, brightness, dark patches, saturation clip,
// in that order. Output clamped to [-1, 1].
torch::Tensor synthesize_degradation(const torch::Tensor& clean, const DegradationSpec& spec);

struct RestoredImage {
  ManifestRecord source;
  torch::Tensor image;
};

// Writes each image as PNG under `out_dir` with its source filename and
// returns a manifest of the written files: quality 0, source dr label and
// split carried over.
DatasetManifest emit_restored_dataset(std::span<const RestoredImage> images, const fs::path& out_dir);

}  // namespace ptl::data
