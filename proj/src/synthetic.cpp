#include "ptl/synthetic.hpp"

#include <opencv2/imgproc.hpp>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "json.hpp"

namespace ptl::data {

namespace {

constexpr int kSupersample = 4;

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

cv::Scalar rgb(double r, double g, double b) { return cv::Scalar(r * 255.0, g * 255.0, b * 255.0); }

}  // namespace

torch::Tensor synth_fundus(ImageSize size, std::uint64_t seed, bool abnormal) {
  std::mt19937_64 rng(seed);
  const int h = size.height * kSupersample;
  const int w = size.width * kSupersample;
  const double scale = std::min(h, w);
  cv::Mat canvas(h, w, CV_8UC3, cv::Scalar(0, 0, 0));

  const cv::Point2d center(w * 0.5 + uniform(rng, -0.03, 0.03) * scale,
                           h * 0.5 + uniform(rng, -0.03, 0.03) * scale);
  const double radius = scale * uniform(rng, 0.44, 0.48);
  const double red = uniform(rng, 0.70, 0.85);
  const double green = uniform(rng, 0.28, 0.40);
  const double blue = uniform(rng, 0.10, 0.18);

  // Retina with radial vignetting, drawn as concentric discs.
  constexpr int kRings = 24;
  for (int k = 0; k < kRings; ++k) {
    const double t = 1.0 - static_cast<double>(k) / kRings;
    const double shade = 0.55 + 0.45 * (1.0 - t * t);
    cv::circle(canvas, center, static_cast<int>(radius * t), rgb(red * shade, green * shade, blue * shade),
               cv::FILLED, cv::LINE_AA);
  }

  const double side = (rng() & 1U) ? 1.0 : -1.0;
  const cv::Point2d disc(center.x + side * radius * uniform(rng, 0.35, 0.45),
                         center.y + radius * uniform(rng, -0.08, 0.08));
  const cv::Point2d fovea(center.x - side * radius * uniform(rng, 0.05, 0.15),
                          center.y + radius * uniform(rng, -0.05, 0.05));
  cv::circle(canvas, fovea, static_cast<int>(radius * 0.12), rgb(red * 0.6, green * 0.55, blue * 0.6), cv::FILLED,
             cv::LINE_AA);

  // Vessels: jittered polylines fanning out of the optic disc.
  const int vessels = 6 + static_cast<int>(rng() % 3);
  cv::Mat mask(h, w, CV_8UC1, cv::Scalar(0));
  cv::circle(mask, center, static_cast<int>(radius), cv::Scalar(255), cv::FILLED);
  cv::Mat vessel_layer = canvas.clone();
  for (int v = 0; v < vessels; ++v) {
    double angle = (2.0 * M_PI * v) / vessels + uniform(rng, -0.3, 0.3);
    cv::Point2d p = disc;
    const int segments = 14;
    const double step = radius * 1.4 / segments;
    double thickness = scale * uniform(rng, 0.018, 0.026);
    for (int s = 0; s < segments; ++s) {
      angle += uniform(rng, -0.25, 0.25);
      const cv::Point2d q(p.x + std::cos(angle) * step, p.y + std::sin(angle) * step);
      cv::line(vessel_layer, p, q, rgb(red * 0.45, green * 0.25, blue * 0.4),
               std::max(1, static_cast<int>(thickness)), cv::LINE_AA);
      p = q;
      thickness *= 0.93;
    }
  }
  vessel_layer.copyTo(canvas, mask);
  cv::circle(canvas, disc, static_cast<int>(radius * 0.14), rgb(0.95, 0.85, 0.55), cv::FILLED, cv::LINE_AA);

  if (abnormal) {
    const int spots = 4 + static_cast<int>(rng() % 5);
    for (int s = 0; s < spots; ++s) {
      const double r = radius * std::sqrt(uniform(rng, 0.0, 0.6));
      const double a = uniform(rng, 0.0, 2.0 * M_PI);
      const cv::Point2d p(center.x + r * std::cos(a), center.y + r * std::sin(a));
      const bool exudate = (rng() & 1U) != 0;
      const auto colour = exudate ? rgb(0.95, 0.9, 0.45) : rgb(red * 0.35, 0.05, 0.05);
      cv::circle(canvas, p, std::max(2, static_cast<int>(scale * uniform(rng, 0.015, 0.03))), colour, cv::FILLED,
                 cv::LINE_AA);
    }
  }

  cv::Mat small;
  cv::resize(canvas, small, cv::Size(size.width, size.height), 0.0, 0.0, cv::INTER_AREA);
  return preprocess(small, size);
}

DegradationSpec sample_degradation(std::string_view profile, ImageSize size, std::uint64_t seed) {
  DegradationSpec spec;
  spec.seed = seed;
  if (profile == "neutral") return spec;

  struct Ranges {
    double blur_lo, blur_hi;
    int patches_lo, patches_hi;
    double atten_lo, atten_hi;
    double contrast_lo, contrast_hi;
    double shift_lo, shift_hi;
    double clip_lo, clip_hi;
  };
  Ranges r{};
  if (profile == "mild") {
    r = {0.4, 0.8, 0, 1, 0.3, 0.5, 0.80, 0.92, -0.12, -0.04, 0.92, 1.0};
  } else if (profile == "standard") {
    r = {0.6, 1.2, 1, 2, 0.4, 0.7, 0.60, 0.80, -0.25, -0.10, 0.85, 0.95};
  } else if (profile == "severe") {
    r = {1.0, 2.0, 2, 3, 0.6, 0.9, 0.45, 0.65, -0.35, -0.15, 0.75, 0.90};
  } else {
    throw ConfigError("unknown degradation profile '" + std::string(profile) +
                      "' (expected neutral, mild, standard or severe)");
  }

  std::mt19937_64 rng(seed);
  spec.blur_sigma = uniform(rng, r.blur_lo, r.blur_hi);
  spec.contrast_scale = uniform(rng, r.contrast_lo, r.contrast_hi);
  spec.brightness_shift = uniform(rng, r.shift_lo, r.shift_hi);
  spec.saturation_clip = uniform(rng, r.clip_lo, r.clip_hi);
  const int patches = std::uniform_int_distribution<int>(r.patches_lo, r.patches_hi)(rng);
  const double extent = std::min(size.height, size.width);
  for (int i = 0; i < patches; ++i) {
    DarkPatch p;
    const double rad = extent * 0.3 * std::sqrt(uniform(rng, 0.0, 1.0));
    const double ang = uniform(rng, 0.0, 2.0 * M_PI);
    p.center_y = size.height * 0.5 + rad * std::sin(ang);
    p.center_x = size.width * 0.5 + rad * std::cos(ang);
    p.radius = extent * uniform(rng, 0.10, 0.20);
    p.attenuation = uniform(rng, r.atten_lo, r.atten_hi);
    spec.dark_patches.push_back(p);
  }
  return spec;
}

SynthCorpus generate_synthetic_corpus(const SynthOptions& options) {
  if (options.count == 0) throw ConfigError("synthetic corpus needs count >= 1");
  const fs::path out = fs::absolute(options.out_dir).lexically_normal();
  std::error_code ec;
  fs::create_directories(out / "clean", ec);
  if (!ec) fs::create_directories(out / "degraded", ec);
  if (ec) throw IoError("cannot create output directory " + out.string() + ": " + ec.message());

  // One split assignment per source index, shared by its clean and degraded image.
  DatasetManifest sources;
  for (std::size_t k = 0; k < options.count; ++k) {
    ManifestRecord r;
    r.path = std::to_string(k);
    sources.records.push_back(r);
  }
  const auto assigned = build_splits(sources, options.fractions, options.seed);

  SynthCorpus corpus;
  corpus.clean.source_id = "synthetic-clean";
  corpus.degraded.source_id = "synthetic-degraded";
  corpus.training.source_id = "synthetic";
  for (auto* m : {&corpus.clean, &corpus.degraded, &corpus.training}) m->seed = options.seed;

  std::ostringstream pairing;
  std::mt19937_64 label_rng(derive_seed(options.seed, "dr-labels"));
  for (std::size_t k = 0; k < options.count; ++k) {
    std::ostringstream name;
    name << std::setw(4) << std::setfill('0') << k << ".png";
    const bool abnormal = std::bernoulli_distribution(0.5)(label_rng);
    const auto clean = synth_fundus(options.size, derive_seed(options.seed, k), abnormal);
    const auto spec = sample_degradation(options.profile, options.size, derive_seed(options.seed, 1'000'000 + k));
    const auto degraded = synthesize_degradation(clean, spec);

    ManifestRecord c;
    c.path = out / "clean" / ("clean_" + name.str());
    c.quality_label = 1;
    c.dr_label = abnormal ? 1 : 0;
    c.split = assigned.records[k].split;
    ManifestRecord d = c;
    d.path = out / "degraded" / ("degraded_" + name.str());
    d.quality_label = 0;
    save_png(denormalize(clean), c.path);
    save_png(denormalize(degraded), d.path);

    corpus.clean.records.push_back(c);
    corpus.degraded.records.push_back(d);
    if (c.split == Split::Train) {
      corpus.training.records.push_back(k % 2 == 0 ? d : c);
    } else {
      corpus.training.records.push_back(d);
    }
    nlohmann::json j{{"degraded", d.path.lexically_relative(out).generic_string()},
                     {"clean", c.path.lexically_relative(out).generic_string()}};
    pairing << j.dump() << '\n';
  }
  write_manifest(corpus.clean, out / "clean.jsonl");
  write_manifest(corpus.degraded, out / "degraded.jsonl");
  write_manifest(corpus.training, out / "manifest.jsonl");
  corpus.pairing_file = out / "pairing.jsonl";
  write_text_file(corpus.pairing_file, pairing.str());
  return corpus;
}

std::map<fs::path, fs::path> read_pairing(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw InputError("cannot read pairing file: " + file.string());
  const fs::path base = fs::absolute(file).lexically_normal().parent_path();
  std::map<fs::path, fs::path> pairs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      pairs[(base / j.at("degraded").get<std::string>()).lexically_normal()] =
          (base / j.at("clean").get<std::string>()).lexically_normal();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(file.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return pairs;
}

}  // namespace ptl::data
