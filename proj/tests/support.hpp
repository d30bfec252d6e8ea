#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ptl/config.hpp"
#include "ptl/cycle_trainer.hpp"
#include "ptl/networks.hpp"
#include "ptl/synthetic.hpp"

namespace ptl::testing {

// Fresh directory under the build tree, emptied on construction.
fs::path scratch_dir(const std::string& name);

// 1-channel, 4x4 images: generator depth 2 (4 -> 2 -> 1), discriminator
// strides {1, 1} (4 -> 3 -> 2).
nets::NetworkConfig toy_network(int base = 2, int disc_base = 2);

// 32x32 RGB, generator depth 5, widths 4, discriminator widths 4.
nets::NetworkConfig tiny_network();

// Layer-by-layer parameter count written from the architecture description
// alone: conv/transposed-conv weights cin*cout*k*k plus cout biases, batch
// norm 2*c.
std::int64_t oracle_generator_parameters(const nets::GeneratorConfig& c);
std::int64_t oracle_discriminator_parameters(const nets::DiscriminatorConfig& c);
std::int64_t oracle_classifier_parameters(const nets::ClassifierConfig& c);

// Spatial size after each discriminator layer: floor((s + 2 - 4) / stride) + 1.
std::vector<int> oracle_stride_trace(int input, const std::vector<int>& strides);

// Brute-force best-epoch scan: (epoch, fallback), epoch 0 when nothing is
// checkpointed.
std::pair<int, bool> brute_force_best(const train::TrainingTrace& trace, int warmup);

// Central finite differences of `f` with respect to every element of
// `params` (double precision). Returns the largest relative error
// |analytic - numeric| / max(|analytic|, |numeric|, floor).
struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};
GradCheck gradient_check(const std::function<torch::Tensor()>& f, const std::vector<torch::Tensor>& params,
                         double h = 1e-6, double floor = 1e-4);

// Small synthetic corpus written to `dir` (count pairs, square `size`).
data::SynthCorpus small_corpus(const fs::path& dir, std::size_t count, int size, std::uint64_t seed = 3,
                               const std::string& profile = "standard");

// Run config for a 32x32 corpus: tiny_network(), `epochs` epochs, warm-up 0.
RunConfig tiny_run_config(const fs::path& manifest, const fs::path& output_root, const std::string& run_id,
                          int passes, int epochs = 2);

// Byte-for-byte comparison of two directory trees.
bool trees_identical(const fs::path& a, const fs::path& b, std::string* first_difference = nullptr);

double max_abs_diff(const torch::Tensor& a, const torch::Tensor& b);

}  // namespace ptl::testing
