#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "ptl/data_pipeline.hpp"
#include "ptl/losses.hpp"
#include "ptl/networks.hpp"

namespace ptl::train {

struct TrainingConfig {
  int epochs = 200;
  int batch_size = 1;
  double lr_initial = 2e-4;
  double lr_final = 1e-5;
  int lr_constant_epochs = 100;
  int lr_decay_epochs = 100;
  // Epochs 1..warmup_exclusion are never selected as the best epoch.
  int warmup_exclusion = 100;
  losses::LossWeights weights{};
  // Init range; <= 0 selects per-layer 1/sqrt(fan_in) bounds.
  double epsilon = 0.0;
  std::uint64_t seed = 0;
  nets::NetworkConfig network{};
  int checkpoint_every = 1;
  // Oversample the low-quality training set with augmented copies up to
  // this many images; 0 disables.
  std::size_t train_lq_target = 0;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  std::size_t eval_batch_size = 16;

  void validate() const;
};

nlohmann::json to_json(const TrainingConfig& c);
// Missing keys keep their defaults.
TrainingConfig training_config_from_json(const nlohmann::json& j, TrainingConfig base = {});
// Applies the keys of `overrides` (same names as to_json) on top of `base`.
TrainingConfig apply_overrides(TrainingConfig base, const nlohmann::json& overrides);

// Constant lr_initial through lr_constant_epochs, then linear decay to
// lr_final across lr_decay_epochs, then lr_final.
double lr_at_epoch(const TrainingConfig& config, int epoch);

struct EpochRecord {
  int epoch = 0;
  losses::LossReport train{};  // per-batch means over the epoch
  double disc_h = 0.0;
  double disc_l = 0.0;
  double val_adv1 = 0.0;
  double lr = 0.0;
  std::optional<std::string> checkpoint;  // relative to the pass directory
};

struct TrainingTrace {
  std::vector<EpochRecord> epochs;
};

nlohmann::json to_json(const EpochRecord& r);
EpochRecord epoch_record_from_json(const nlohmann::json& j);
TrainingTrace read_trace(const fs::path& file);

// Index batches of one epoch: independent seeded shuffles of each domain,
// truncated to min(n_low, n_high) and cut into batches of `batch_size`.
struct EpochBatch {
  std::vector<std::int64_t> low;
  std::vector<std::int64_t> high;
};
std::vector<EpochBatch> epoch_batches(std::size_t n_low, std::size_t n_high, std::size_t batch_size,
                                      std::uint64_t seed);

using ImageMap = std::function<torch::Tensor(const torch::Tensor&)>;

// Mean over `images` of (1 - discriminator(generator(x)))^2, evaluated in
// chunks without gradients.
double validate_adv1(const ImageMap& generator, const ImageMap& discriminator, const torch::Tensor& images,
                     std::size_t chunk = 16);
// Same, with gen_l2h and disc_h of `nets` in evaluation mode.
double validate_epoch(nets::CycleGan& nets, const torch::Tensor& val_low, std::size_t chunk = 16);

struct Selection {
  int epoch = 0;
  std::string checkpoint;
  double val_adv1 = 0.0;
  // No checkpointed epoch exceeded the warm-up; chosen over all checkpoints.
  bool fallback = false;
};

// Checkpointed epoch > warmup with maximal validation adv1, earliest on ties.
Selection select_best_epoch(const TrainingTrace& trace, int warmup);

struct PassContext {
  fs::path pass_dir;  // checkpoints/ and trace.jsonl are written here; empty = no files
  int pass_index = 1;
  std::string run_digest;
};

struct PassTensors {
  torch::Tensor low;      // N_L x C x H x W
  torch::Tensor val_low;  // N_V x C x H x W
  torch::Tensor high;     // N_H x C x H x W
};

PassTensors load_pass_tensors(const data::PassDataset& dataset, data::ImageSize size);

// Called before every optimisation step with 1-based epoch and 0-based step.
using StepObserver = std::function<void(int epoch, int step, const nets::CycleGan& nets)>;

struct PassResult {
  TrainingTrace trace;
  std::string init_hash;  // hash of the parameters before the first update
  nets::CycleGan final_nets;
};

// Trains one pass. With `init` set, training starts from an exact copy of
// its parameters (fresh optimiser state); otherwise from a seeded uniform
// initialisation.
PassResult train_pass(const PassTensors& data, const std::optional<nets::CycleGan>& init,
                      const TrainingConfig& config, const PassContext& context, const StepObserver& observer = {});

PassResult train_pass(const data::PassDataset& dataset, const std::optional<nets::CycleGan>& init,
                      const TrainingConfig& config, const PassContext& context, const StepObserver& observer = {});

// Seed for the random initialisation of a given pass.
std::uint64_t init_seed(const TrainingConfig& config, int pass_index);

}  // namespace ptl::train
