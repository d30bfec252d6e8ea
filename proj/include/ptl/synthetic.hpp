#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>

#include "ptl/data_pipeline.hpp"

// Procedural fundus-like images and sampled degradation profiles for
// desk-scale runs where no real corpus is available.
namespace ptl::data {

// Retina disc with vessels, optic disc and fovea on a black surround. When
// `abnormal` is set, small haemorrhage and exudate spots are added.
torch::Tensor synth_fundus(ImageSize size, std::uint64_t seed, bool abnormal = false);

// Profiles: "neutral", "mild", "standard", "severe".
DegradationSpec sample_degradation(std::string_view profile, ImageSize size, std::uint64_t seed);

struct SynthOptions {
  std::size_t count = 50;
  ImageSize size{};
  std::string profile = "standard";
  std::uint64_t seed = 0;
  fs::path out_dir;
  SplitFractions fractions{0.8, 0.1, 0.1};
};

struct SynthCorpus {
  DatasetManifest clean;     // clean.jsonl, quality 1
  DatasetManifest degraded;  // degraded.jsonl, quality 0
  // manifest.jsonl: the training view. Train sources alternate between the
  // domains (even index -> degraded, odd -> clean) so the two domains never
  // share content; val and test hold degraded images only.
  DatasetManifest training;
  fs::path pairing_file;  // pairing.jsonl: degraded -> clean
};

SynthCorpus generate_synthetic_corpus(const SynthOptions& options);

// degraded path -> clean path, both absolute.
std::map<fs::path, fs::path> read_pairing(const fs::path& file);

}  // namespace ptl::data
