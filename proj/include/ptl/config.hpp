#pragma once

#include <cstdint>
#include <string>

#include "json.hpp"
#include "ptl/common.hpp"
#include "ptl/cycle_trainer.hpp"
#include "ptl/evaluation.hpp"

namespace ptl {

enum class InitMode { Ptl, Random };

std::string_view to_string(InitMode mode);
InitMode parse_init_mode(std::string_view text);

// Everything a run needs. The file form is one flat JSON object holding the
// training keys next to the run keys below; unknown keys are rejected.
struct RunConfig {
  train::TrainingConfig training{};
  int n_passes = 3;
  InitMode init_mode = InitMode::Ptl;
  fs::path manifest;
  fs::path output_root = "runs";
  std::string run_id;  // empty: derived from the digest
  // {"2": {"lambda_cyc": 5, ...}}: training keys replaced for one pass.
  nlohmann::json pass_overrides = nlohmann::json::object();
  // Restore the validation low set alongside the training low set so that
  // pass i scores validation images produced by pass i - 1.
  bool restore_validation = true;
  eval::ClassifierTrainingConfig classifier{};
  int threads = 1;

  void validate() const;
  train::TrainingConfig training_for_pass(int pass_index) const;
  std::string resolved_run_id() const;
  // PTL_OUTPUT_ROOT, when set, replaces output_root.
  fs::path run_dir() const;
};

nlohmann::json to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = {});
RunConfig read_run_config(const fs::path& file);

// Canonical serialisation without output location and thread count.
std::string canonical_json(const RunConfig& c);
std::string run_digest(const RunConfig& c);

// 64x64 images, generator depth 6 with 8 base channels, 8 discriminator
// base channels and epoch budgets that fit a few CPU minutes per pass.
RunConfig desk_scale_preset();

}  // namespace ptl
