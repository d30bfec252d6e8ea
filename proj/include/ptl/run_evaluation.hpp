#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ptl/evaluation.hpp"
#include "ptl/ptl_orchestrator.hpp"

// Evaluation of a finished run: every row compares the original images with
// the cascade output after 1..n passes.
namespace ptl::eval {

// Row 0 scores the inputs themselves; row k the unquantised cascade output
// after pass k. Every record needs an entry in `pairing`.
std::vector<PsnrRow> psnr_by_pass(std::span<const nets::LoadedCheckpoint> checkpoints,
                                  std::span<const data::ManifestRecord> records,
                                  const std::map<fs::path, fs::path>& pairing, data::ImageSize size);

// One classifier per row, all with the configuration (and seed) of `config`.
// Row k trains and tests on the cascade output after pass k, for every image.
std::vector<ClassifierRow> classifier_by_pass(std::span<const nets::LoadedCheckpoint> checkpoints,
                                              std::span<const data::ManifestRecord> train_records,
                                              std::span<const data::ManifestRecord> test_records,
                                              const ClassifierTrainingConfig& config, data::ImageSize size);

enum class EvalMode { Classifier, Psnr, Both };
EvalMode parse_eval_mode(std::string_view text);

struct RunEvaluationOptions {
  fs::path run_dir;
  fs::path manifest;  // empty: the run's own manifest
  EvalMode mode = EvalMode::Both;
  std::optional<std::uint64_t> seed;  // classifier seed override
  fs::path pairing;                   // empty: pairing.jsonl next to the manifest
};

EvaluationReport evaluate_run(const RunEvaluationOptions& options);

}  // namespace ptl::eval
