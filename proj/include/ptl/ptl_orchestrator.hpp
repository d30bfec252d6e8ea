#pragma once

#include <torch/torch.h>

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "ptl/config.hpp"
#include "ptl/data_pipeline.hpp"
#include "ptl/networks.hpp"

namespace ptl::orch {

// Paths are relative to the run directory.
struct PassRecord {
  int pass_index = 0;
  std::string dataset;  // low-quality manifest the pass trained on
  std::size_t low_count = 0;
  std::size_t val_count = 0;
  std::size_t high_count = 0;
  int best_epoch = 0;
  std::string checkpoint;
  double val_adv1 = 0.0;
  bool fallback = false;
  std::string restored_manifest;
  std::string init_source;  // "random" or "pass_<i-1>"
  std::string init_hash;
  std::string checkpoint_hash;
  std::string high_set_hash;
};

enum class RunStatus { Running, Interrupted, Complete, Failed };
std::string_view to_string(RunStatus s);

struct RunRecord {
  std::string run_id;
  std::uint64_t seed = 0;
  int n_passes = 0;
  InitMode init_mode = InitMode::Ptl;
  std::string run_digest;
  std::string network_digest;
  std::vector<PassRecord> passes;
  RunStatus status = RunStatus::Running;
  int failed_pass = 0;
  std::string failure;
};

nlohmann::json to_json(const PassRecord& p);
nlohmann::json to_json(const RunRecord& r);
PassRecord pass_record_from_json(const nlohmann::json& j);
RunRecord run_record_from_json(const nlohmann::json& j);
RunRecord read_run_record(const fs::path& run_dir);

struct RunOptions {
  // Continue after the last completed pass of an existing run directory.
  bool resume = false;
  // Stop (status "interrupted") once this many passes are complete; 0 = all.
  int stop_after_pass = 0;
};

// Exclusive advisory lock on <run_dir>/.lock; throws LockError when another
// process holds it.
class RunLock {
 public:
  explicit RunLock(const fs::path& run_dir);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  int fd_ = -1;
};

// Runs the passes of `config`, writing run.json after every pass.
RunRecord run_passes(const RunConfig& config, const RunOptions& options = {});

// gen_l2h in evaluation mode over preprocessed images, order preserved.
std::vector<data::RestoredImage> restore_dataset(const nets::CycleGan& nets,
                                                 std::span<const data::ManifestRecord> records,
                                                 data::ImageSize size, std::size_t chunk = 16);
// Throws DigestMismatchError when the checkpoint belongs to another run.
std::vector<data::RestoredImage> restore_dataset(const nets::LoadedCheckpoint& checkpoint,
                                                 std::span<const data::ManifestRecord> records,
                                                 data::ImageSize size, const std::string& run_digest);

struct CascadeResult {
  torch::Tensor output;
  std::vector<torch::Tensor> stages;  // stage k = output after pass k + 1
};

// Applies gen_l2h of each checkpoint in order without quantisation.
// Checkpoints must come from one run, in strictly increasing pass order.
CascadeResult cascade_restore(std::span<const nets::LoadedCheckpoint> checkpoints, const torch::Tensor& image);

struct Initialization {
  nets::CycleGan nets;
  int pass_index = 0;  // pass the initialisation is meant for
};

// Deep copy of all four networks of `prev`, for pass prev.pass_index + 1.
Initialization transfer_weights(const nets::LoadedCheckpoint& prev);

// Best checkpoints of passes 1..n (all passes when n = 0) of a finished run.
std::vector<nets::LoadedCheckpoint> load_best_checkpoints(const fs::path& run_dir, int n = 0);

// SHA-256 over the file bytes of the records, in order.
std::string file_set_hash(std::span<const data::ManifestRecord> records);

}  // namespace ptl::orch
