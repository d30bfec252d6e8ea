#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <fstream>
#include <set>

#include "doctest.h"
#include "ptl/data_pipeline.hpp"
#include "support.hpp"

using namespace ptl;
using namespace ptl::data;

namespace {

void write_image(const fs::path& p, int value, int size = 8) {
  save_png(cv::Mat(size, size, CV_8UC3, cv::Scalar(value, value / 2, 255 - value)), p);
}

// 20 images, labels alternating so that 10 are low and 10 high quality.
fs::path labelled_root(const std::string& name, std::string* label_text = nullptr) {
  const auto dir = testing::scratch_dir(name);
  std::ofstream labels(dir / "labels.csv");
  labels << "image,quality,dr\n";
  std::string text;
  for (int i = 0; i < 20; ++i) {
    const auto file = "img_" + std::to_string(i) + ".png";
    write_image(dir / "images" / file, i * 10);
    const std::string row = file + "," + std::to_string(i % 2) + "," + std::to_string((i / 2) % 2) + "\n";
    labels << row;
    text += row;
  }
  if (label_text) *label_text = text;
  return dir;
}

DatasetManifest records(std::size_t n, std::size_t high = 0) {
  DatasetManifest m;
  m.source_id = "synthetic";
  for (std::size_t i = 0; i < n; ++i) {
    m.records.push_back({fs::path("r" + std::to_string(1000 + i) + ".png"), i < high ? 1 : 0, 0, Split::Train});
  }
  return m;
}

}  // namespace

TEST_SUITE("data_pipeline") {
  TEST_CASE("empty root and empty label file give an empty manifest") {
    const auto dir = testing::scratch_dir("dp_empty");
    std::ofstream(dir / "labels.csv").close();
    const auto m = load_manifest(dir, dir / "labels.csv");
    CHECK(m.records.empty());
  }

  TEST_CASE("label counts match an independent recount") {
    std::string text;
    const auto dir = labelled_root("dp_counts", &text);
    const auto m = load_manifest(dir / "images", dir / "labels.csv", 5);
    std::map<int, std::size_t> recount;
    std::stringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) recount[line[line.find(',') + 1] - '0']++;
    CHECK(m.count_by_quality() == recount);
    CHECK(m.count_by_quality().at(0) == 10);
    CHECK(m.count_by_quality().at(1) == 10);
    std::set<fs::path> unique;
    for (const auto& r : m.records) unique.insert(r.path);
    CHECK(unique.size() == 20);
    // Ordering depends on the seed only.
    const auto again = load_manifest(dir / "images", dir / "labels.csv", 5);
    CHECK(serialize_manifest(again, dir) == serialize_manifest(m, dir));
    const auto other = load_manifest(dir / "images", dir / "labels.csv", 6);
    CHECK(serialize_manifest(other, dir) != serialize_manifest(m, dir));
  }

  TEST_CASE("missing image names the path") {
    const auto dir = testing::scratch_dir("dp_missing");
    write_image(dir / "a.png", 3);
    std::ofstream(dir / "labels.csv") << "a.png,0\nghost.png,1\n";
    try {
      load_manifest(dir, dir / "labels.csv");
      FAIL("expected an error");
    } catch (const InputError& e) {
      CHECK(std::string(e.what()).find("ghost.png") != std::string::npos);
    }
  }

  TEST_CASE("bad label line reports its line number") {
    const auto dir = testing::scratch_dir("dp_badlabel");
    write_image(dir / "a.png", 3);
    write_image(dir / "b.png", 4);
    std::ofstream(dir / "labels.csv") << "a.png,0\nb.png,7\n";
    try {
      load_manifest(dir, dir / "labels.csv");
      FAIL("expected an error");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find(":2:") != std::string::npos);
    }
    CHECK_THROWS_AS(load_manifest(dir, dir / "nope.csv"), FormatError);
  }

  TEST_CASE("split fractions") {
    SUBCASE("degenerate (1, 0, 0)") {
      const auto m = build_splits(records(17), {1, 0, 0}, 3);
      for (const auto& r : m.records) CHECK(r.split == Split::Train);
    }
    SUBCASE("100 records at 0.8/0.1/0.1 with seed 7") {
      const auto a = build_splits(records(100), {0.8, 0.1, 0.1}, 7);
      const auto counts = a.count_by_split();
      CHECK(counts.at(Split::Train) == 80);
      CHECK(counts.at(Split::Val) == 10);
      CHECK(counts.at(Split::Test) == 10);
      const auto b = build_splits(records(100), {0.8, 0.1, 0.1}, 7);
      CHECK(serialize_manifest(a, ".") == serialize_manifest(b, "."));
    }
    SUBCASE("sizes within one record of the fraction") {
      for (std::size_t n : {1u, 7u, 13u, 101u, 999u}) {
        const SplitFractions f{0.7, 0.2, 0.1};
        const auto s = split_sizes(n, f);
        CHECK(s[0] + s[1] + s[2] == n);
        CHECK(std::abs(static_cast<double>(s[0]) - 0.7 * n) <= 1.0);
        CHECK(std::abs(static_cast<double>(s[1]) - 0.2 * n) <= 1.0);
        CHECK(std::abs(static_cast<double>(s[2]) - 0.1 * n) <= 1.0);
      }
    }
    SUBCASE("test_high_only") {
      const auto m = build_splits(records(60, 30), {0.6, 0.2, 0.2}, 1, {true});
      std::size_t tests = 0;
      for (const auto& r : m.records) {
        if (r.split == Split::Test) {
          ++tests;
          CHECK(r.quality_label == 1);
        }
      }
      CHECK(tests == 12);
    }
    SUBCASE("invalid input") {
      CHECK_THROWS_AS(build_splits(records(10), {0.5, 0.2, 0.2}, 1), ConfigError);
      CHECK_THROWS_AS(build_splits(records(10), {1.2, -0.2, 0}, 1), ConfigError);
      CHECK_THROWS_AS(build_splits(records(0), {1, 0, 0}, 1), InputError);
    }
  }

  TEST_CASE("manifest file round trip is byte-stable") {
    const auto dir = labelled_root("dp_manifest_file");
    const auto m = build_splits(load_manifest(dir / "images", dir / "labels.csv", 2), {0.5, 0.25, 0.25}, 2);
    write_manifest(m, dir / "out" / "m.jsonl");
    const auto back = read_manifest(dir / "out" / "m.jsonl");
    CHECK(back.records.size() == m.records.size());
    CHECK(back.seed == 2);
    write_manifest(back, dir / "out" / "m2.jsonl");
    CHECK(read_text_file(dir / "out" / "m.jsonl") == read_text_file(dir / "out" / "m2.jsonl"));
    CHECK(read_text_file(dir / "out" / "m.jsonl").find("../images/") != std::string::npos);
  }

  TEST_CASE("preprocess bounds and round trip") {
    const auto zeros = preprocess(cv::Mat(6, 6, CV_8UC3, cv::Scalar(0, 0, 0)), {6, 6});
    CHECK(zeros.sizes() == torch::IntArrayRef({3, 6, 6}));
    CHECK(zeros.eq(-1).all().item<bool>());
    const auto ones = preprocess(cv::Mat(6, 6, CV_8UC3, cv::Scalar(255, 255, 255)), {4, 5});
    CHECK(ones.sizes() == torch::IntArrayRef({3, 4, 5}));
    CHECK(ones.eq(1).all().item<bool>());

    cv::Mat noise(9, 7, CV_8UC3);
    cv::randu(noise, 0, 256);
    const auto back = denormalize(preprocess(noise, {9, 7}));
    cv::Mat diff;
    cv::absdiff(back, noise, diff);
    double max_diff = 0;
    cv::minMaxLoc(diff.reshape(1), nullptr, &max_diff);
    CHECK(max_diff <= 1.0);

    // Channel order: red stays in channel 0.
    const auto red = preprocess(cv::Mat(2, 2, CV_8UC3, cv::Scalar(255, 0, 0)), {2, 2});
    CHECK(red[0].eq(1).all().item<bool>());
    CHECK(red[2].eq(-1).all().item<bool>());
  }

  TEST_CASE("non-3-channel images are rejected") {
    const auto dir = testing::scratch_dir("dp_gray");
    cv::imwrite((dir / "g.png").string(), cv::Mat(4, 4, CV_8UC1, cv::Scalar(9)));
    try {
      load_image(dir / "g.png");
      FAIL("expected an error");
    } catch (const ShapeError& e) {
      CHECK(std::string(e.what()).find('1') != std::string::npos);
    }
  }

  TEST_CASE("augmentation") {
    const auto x = torch::rand({3, 8, 8}) * 2 - 1;
    SUBCASE("empty plan is the identity") {
      std::uint64_t seed = 0;
      while (!augment_plan(seed).empty()) ++seed;
      CHECK(torch::equal(augment(x, seed), x));
    }
    SUBCASE("double horizontal flip") {
      AugmentPlan p;
      p.hflip = true;
      CHECK(torch::equal(apply_augment(apply_augment(x, p), p), x));
    }
    SUBCASE("closure over extreme inputs") {
      for (float v : {-1.0f, -0.95f, 0.0f, 0.95f, 1.0f}) {
        const auto img = torch::full({3, 6, 10}, v);
        for (std::uint64_t seed = 0; seed < 64; ++seed) {
          const auto y = augment(img, seed);
          CHECK(y.sizes() == img.sizes());
          CHECK(y.abs().max().item<float>() <= 1.0f);
        }
      }
    }
    SUBCASE("seeded determinism") { CHECK(torch::equal(augment(x, 42), augment(x, 42))); }
  }

  TEST_CASE("synthetic degradation") {
    const auto clean = torch::rand({3, 32, 32}) * 1.6 - 0.8;
    SUBCASE("neutral spec is the identity") {
      DegradationSpec neutral;
      CHECK(neutral.neutral());
      CHECK(torch::equal(synthesize_degradation(clean, neutral), clean));
    }
    SUBCASE("dark patch lowers the region and leaves the rest") {
      DegradationSpec s;
      s.dark_patches.push_back({10, 12, 6, 0.5});
      const auto out = synthesize_degradation(clean, s);
      auto yy = torch::arange(32).view({32, 1}).expand({32, 32}).to(torch::kFloat64);
      auto xx = torch::arange(32).view({1, 32}).expand({32, 32}).to(torch::kFloat64);
      const auto dist = ((yy - 10).pow(2) + (xx - 12).pow(2)).sqrt();
      const auto inside = dist.lt(6).expand({3, 32, 32});
      const auto outside = dist.ge(6).expand({3, 32, 32});
      CHECK(out.masked_select(inside).mean().item<double>() < clean.masked_select(inside).mean().item<double>());
      CHECK(testing::max_abs_diff(out.masked_select(outside), clean.masked_select(outside)) <= 1e-6);
    }
    SUBCASE("patch outside the image is clipped, not an error") {
      DegradationSpec s;
      s.dark_patches.push_back({-5, 40, 10, 1.0});
      CHECK_NOTHROW(synthesize_degradation(clean, s));
    }
    SUBCASE("attenuation monotonicity") {
      double prev = 1e9;
      for (double a : {0.0, 0.2, 0.4, 0.6, 0.8, 1.0}) {
        DegradationSpec s;
        s.dark_patches.push_back({16, 16, 8, a});
        const double m = synthesize_degradation(clean, s).slice(1, 10, 22).slice(2, 10, 22).mean().item<double>();
        CHECK(m <= prev + 1e-12);
        prev = m;
      }
    }
    SUBCASE("determinism and range") {
      DegradationSpec s;
      s.blur_sigma = 1.3;
      s.contrast_scale = 0.6;
      s.brightness_shift = -0.3;
      s.saturation_clip = 0.7;
      s.dark_patches.push_back({5, 5, 4, 0.9});
      const auto a = synthesize_degradation(clean, s);
      const auto b = synthesize_degradation(clean, s);
      CHECK(torch::equal(a, b));
      CHECK(a.abs().max().item<float>() <= 1.0f);
    }
    CHECK_THROWS_AS(validate(DegradationSpec{-1.0, {}, 1.0, 0.0, 1.0, 0}), ConfigError);
  }

  TEST_CASE("emit restored dataset") {
    const auto dir = testing::scratch_dir("dp_emit");
    std::vector<RestoredImage> images;
    for (int i = 0; i < 3; ++i) {
      ManifestRecord src{dir / "src" / ("img" + std::to_string(i) + ".png"), 0, i % 2, Split::Train};
      images.push_back({src, torch::rand({3, 8, 8}) * 2 - 1});
    }
    const auto m = emit_restored_dataset(images, dir / "out");
    REQUIRE(m.records.size() == 3);
    for (int i = 0; i < 3; ++i) {
      CHECK(m.records[i].path.filename() == images[i].source.path.filename());
      CHECK(fs::exists(m.records[i].path));
      CHECK(m.records[i].quality_label == 0);
      CHECK(m.records[i].dr_label == images[i].source.dr_label);
      const auto back = load_tensor(m.records[i].path, {8, 8});
      CHECK(testing::max_abs_diff(back, images[i].image) <= 1.0 / 127.5 + 1e-6);
    }
    // The second emission into the same directory collides.
    CHECK_THROWS_AS(emit_restored_dataset(images, dir / "out"), InputError);
    std::vector<RestoredImage> twins{images[0], images[0]};
    CHECK_THROWS_AS(emit_restored_dataset(twins, dir / "twins"), InputError);
  }
}
