#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <cmath>
#include <random>
#include <set>

#include "ptl/data_pipeline.hpp"

namespace ptl::data {

cv::Mat load_image(const fs::path& path) {
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (raw.empty()) throw IoError("cannot decode image: " + path.string());
  if (raw.depth() != CV_8U) throw ShapeError("expected an 8-bit image: " + path.string());
  if (raw.channels() != 3) {
    throw ShapeError("expected 3 channels, got " + std::to_string(raw.channels()) + ": " + path.string());
  }
  cv::Mat rgb;
  cv::cvtColor(raw, rgb, cv::COLOR_BGR2RGB);
  return rgb;
}

void save_png(const cv::Mat& rgb, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  const std::vector<int> params{cv::IMWRITE_PNG_COMPRESSION, 3, cv::IMWRITE_PNG_STRATEGY,
                                cv::IMWRITE_PNG_STRATEGY_DEFAULT};
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), bgr, params);
  } catch (const cv::Exception& e) {
    throw IoError("cannot write " + path.string() + ": " + e.what());
  }
  if (!ok) throw IoError("cannot write " + path.string());
}

torch::Tensor preprocess(const cv::Mat& rgb, ImageSize size) {
  if (rgb.channels() != 3) {
    throw ShapeError("preprocess expects 3 channels, got " + std::to_string(rgb.channels()));
  }
  if (rgb.depth() != CV_8U) throw ShapeError("preprocess expects an 8-bit image");
  if (size.height <= 0 || size.width <= 0) throw ConfigError("image size must be positive");
  cv::Mat resized;
  if (rgb.rows == size.height && rgb.cols == size.width) {
    resized = rgb.isContinuous() ? rgb : rgb.clone();
  } else {
    cv::resize(rgb, resized, cv::Size(size.width, size.height), 0.0, 0.0, cv::INTER_LINEAR);
  }
  auto bytes = torch::from_blob(resized.data, {size.height, size.width, 3}, torch::kUInt8);
  return bytes.permute({2, 0, 1}).to(torch::kFloat32).mul(2.0 / 255.0).sub(1.0).contiguous();
}

cv::Mat denormalize(const torch::Tensor& image) {
  if (image.dim() != 3 || image.size(0) != 3) throw ShapeError("denormalize expects a 3 x H x W tensor");
  auto bytes = image.detach()
                   .to(torch::kFloat32)
                   .add(1.0)
                   .mul(127.5)
                   .round()
                   .clamp(0, 255)
                   .to(torch::kUInt8)
                   .permute({1, 2, 0})
                   .contiguous();
  const int h = static_cast<int>(image.size(1));
  const int w = static_cast<int>(image.size(2));
  return cv::Mat(h, w, CV_8UC3, bytes.data_ptr<std::uint8_t>()).clone();
}

torch::Tensor load_tensor(const fs::path& path, ImageSize size) { return preprocess(load_image(path), size); }

torch::Tensor load_batch(std::span<const ManifestRecord> records, ImageSize size) {
  std::vector<torch::Tensor> items;
  items.reserve(records.size());
  for (const auto& r : records) items.push_back(load_tensor(r.path, size));
  if (items.empty()) return torch::empty({0, 3, size.height, size.width});
  return torch::stack(items);
}

// ---- augmentation ---------------------------------------------------------

bool AugmentPlan::empty() const {
  return !hflip && !vflip && quarter_turns == 0 && brightness == 0.0 && contrast == 1.0;
}

AugmentPlan augment_plan(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.5);
  std::uniform_real_distribution<double> shift(-0.1, 0.1);
  std::uniform_real_distribution<double> scale(0.9, 1.1);
  std::uniform_int_distribution<int> turns(1, 3);
  AugmentPlan plan;
  plan.hflip = coin(rng);
  plan.vflip = coin(rng);
  if (coin(rng)) plan.quarter_turns = turns(rng);
  if (coin(rng)) plan.brightness = shift(rng);
  if (coin(rng)) plan.contrast = scale(rng);
  return plan;
}

torch::Tensor apply_augment(const torch::Tensor& image, const AugmentPlan& plan) {
  if (plan.empty()) return image.clone();
  torch::Tensor out = image;
  if (plan.hflip) out = out.flip({-1});
  if (plan.vflip) out = out.flip({-2});
  int turns = plan.quarter_turns % 4;
  // Odd quarter turns would transpose a non-square image.
  if (turns % 2 == 1 && image.size(-1) != image.size(-2)) turns = 2;
  if (turns != 0) out = torch::rot90(out, turns, {-2, -1});
  if (plan.contrast != 1.0) {
    auto mean = out.mean();
    out = (out - mean) * plan.contrast + mean;
  }
  if (plan.brightness != 0.0) out = out + plan.brightness;
  return out.clamp(-1.0, 1.0).contiguous();
}

torch::Tensor augment(const torch::Tensor& image, std::uint64_t seed) {
  return apply_augment(image, augment_plan(seed));
}

// ---- degradation ----------------------------------------------------------

bool DegradationSpec::neutral() const {
  return blur_sigma == 0.0 && dark_patches.empty() && contrast_scale == 1.0 && brightness_shift == 0.0 &&
         saturation_clip == 1.0;
}

void validate(const DegradationSpec& spec) {
  if (!(spec.blur_sigma >= 0.0)) throw ConfigError("blur_sigma must be >= 0");
  if (!(spec.contrast_scale > 0.0 && spec.contrast_scale <= 1.0)) {
    throw ConfigError("contrast_scale must lie in (0, 1]");
  }
  if (!(spec.brightness_shift >= -1.0 && spec.brightness_shift <= 1.0)) {
    throw ConfigError("brightness_shift must lie in [-1, 1]");
  }
  if (!(spec.saturation_clip >= 0.0 && spec.saturation_clip <= 1.0)) {
    throw ConfigError("saturation_clip must lie in [0, 1]");
  }
  for (const auto& p : spec.dark_patches) {
    if (!(p.attenuation >= 0.0 && p.attenuation <= 1.0)) throw ConfigError("patch attenuation must lie in [0, 1]");
    if (!(p.radius >= 0.0)) throw ConfigError("patch radius must be >= 0");
  }
}

namespace {

torch::Tensor gaussian_blur(const torch::Tensor& image, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<float> taps(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
    taps[i + radius] = static_cast<float>(v);
    sum += v;
  }
  for (auto& t : taps) t = static_cast<float>(t / sum);
  const auto channels = image.size(0);
  auto kernel = torch::tensor(taps).to(image.dtype());
  auto kx = kernel.view({1, 1, 1, -1}).expand({channels, 1, 1, kernel.size(0)}).contiguous();
  auto ky = kernel.view({1, 1, -1, 1}).expand({channels, 1, kernel.size(0), 1}).contiguous();
  namespace F = torch::nn::functional;
  auto x = image.unsqueeze(0);
  x = F::pad(x, F::PadFuncOptions({radius, radius, 0, 0}).mode(torch::kReplicate));
  x = F::conv2d(x, kx, F::Conv2dFuncOptions().groups(channels));
  x = F::pad(x, F::PadFuncOptions({0, 0, radius, radius}).mode(torch::kReplicate));
  x = F::conv2d(x, ky, F::Conv2dFuncOptions().groups(channels));
  return x.squeeze(0);
}

// Soft-edged disc: full weight out to 75% of the radius, linear fall-off to
// zero at the radius, zero outside.
torch::Tensor patch_weight(const DarkPatch& p, std::int64_t h, std::int64_t w, torch::Dtype dtype) {
  auto ys = torch::arange(h, torch::kFloat64).view({h, 1});
  auto xs = torch::arange(w, torch::kFloat64).view({1, w});
  auto d = torch::sqrt((ys - p.center_y).pow(2) + (xs - p.center_x).pow(2));
  if (p.radius <= 0.0) return torch::zeros({h, w}, dtype);
  const double inner = 0.75 * p.radius;
  auto weight = ((p.radius - d) / (p.radius - inner)).clamp(0.0, 1.0);
  return weight.to(dtype);
}

}  // namespace

torch::Tensor synthesize_degradation(const torch::Tensor& clean, const DegradationSpec& spec) {
  validate(spec);
  if (clean.dim() != 3) throw ShapeError("synthesize_degradation expects a C x H x W tensor");
  if (spec.neutral()) return clean.clone();
  torch::Tensor x = clean.to(torch::kFloat32);
  if (spec.blur_sigma > 0.0) x = gaussian_blur(x, spec.blur_sigma);
  if (spec.contrast_scale != 1.0) {
    auto mean = x.mean();
    x = (x - mean) * spec.contrast_scale + mean;
  }
  if (spec.brightness_shift != 0.0) x = x + spec.brightness_shift;
  if (!spec.dark_patches.empty()) {
    // Attenuation acts on intensity in [0, 1], so darker always means lower.
    auto intensity = (x + 1.0) * 0.5;
    auto gain = torch::ones({x.size(1), x.size(2)}, x.options());
    for (const auto& p : spec.dark_patches) {
      gain = gain * (1.0 - p.attenuation * patch_weight(p, x.size(1), x.size(2), x.scalar_type()));
    }
    x = intensity * gain.unsqueeze(0) * 2.0 - 1.0;
  }
  if (spec.saturation_clip != 1.0) x = torch::minimum(x, torch::full_like(x, 2.0 * spec.saturation_clip - 1.0));
  return x.clamp(-1.0, 1.0).contiguous();
}

// ---- restored datasets ----------------------------------------------------

DatasetManifest emit_restored_dataset(std::span<const RestoredImage> images, const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  DatasetManifest manifest;
  manifest.source_id = out_dir.filename().string();
  std::set<std::string> names;
  for (const auto& item : images) {
    const std::string name = item.source.path.filename().replace_extension(".png").string();
    const fs::path target = fs::absolute(out_dir / name).lexically_normal();
    if (!names.insert(name).second || fs::exists(target)) {
      throw InputError("restored filename collision: " + target.string() +
                       " (each pass needs its own output directory)");
    }
    save_png(denormalize(item.image), target);
    ManifestRecord rec;
    rec.path = target;
    rec.quality_label = 0;
    rec.dr_label = item.source.dr_label;
    rec.split = item.source.split;
    manifest.records.push_back(std::move(rec));
  }
  return manifest;
}

}  // namespace ptl::data
