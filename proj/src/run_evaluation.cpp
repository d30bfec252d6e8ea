#include "ptl/run_evaluation.hpp"

#include "ptl/synthetic.hpp"

namespace ptl::eval {

namespace {

// Cascade stages for every image of `batch`; element 0 is the input.
std::vector<torch::Tensor> stages_of(std::span<const nets::LoadedCheckpoint> checkpoints,
                                     const torch::Tensor& batch) {
  std::vector<torch::Tensor> out{batch};
  if (checkpoints.empty()) return out;
  auto cascade = orch::cascade_restore(checkpoints, batch);
  for (auto& s : cascade.stages) out.push_back(std::move(s));
  return out;
}

std::vector<torch::Tensor> stages_of_records(std::span<const nets::LoadedCheckpoint> checkpoints,
                                             std::span<const data::ManifestRecord> records, data::ImageSize size) {
  constexpr std::size_t kChunk = 16;
  std::vector<std::vector<torch::Tensor>> parts(checkpoints.size() + 1);
  for (std::size_t start = 0; start < records.size(); start += kChunk) {
    const auto chunk = records.subspan(start, std::min(kChunk, records.size() - start));
    auto stages = stages_of(checkpoints, data::load_batch(chunk, size));
    for (std::size_t k = 0; k < stages.size(); ++k) parts[k].push_back(std::move(stages[k]));
  }
  std::vector<torch::Tensor> out;
  for (auto& p : parts) out.push_back(torch::cat(p));
  return out;
}

}  // namespace

std::vector<PsnrRow> psnr_by_pass(std::span<const nets::LoadedCheckpoint> checkpoints,
                                  std::span<const data::ManifestRecord> records,
                                  const std::map<fs::path, fs::path>& pairing, data::ImageSize size) {
  if (records.empty()) throw InputError("no images to score");
  std::vector<data::ManifestRecord> references;
  for (const auto& r : records) {
    const auto it = pairing.find(r.path.lexically_normal());
    if (it == pairing.end()) throw InputError("no clean reference for " + r.path.string());
    references.push_back({it->second, 1, r.dr_label, r.split});
  }
  const auto clean = data::load_batch(references, size);
  const auto stages = stages_of_records(checkpoints, records, size);
  std::vector<PsnrRow> rows;
  for (std::size_t k = 0; k < stages.size(); ++k) {
    std::vector<double> values;
    for (std::int64_t i = 0; i < clean.size(0); ++i) values.push_back(psnr(clean[i], stages[k][i]));
    rows.push_back({row_name(static_cast<int>(k)), summarize(std::move(values))});
  }
  return rows;
}

std::vector<ClassifierRow> classifier_by_pass(std::span<const nets::LoadedCheckpoint> checkpoints,
                                              std::span<const data::ManifestRecord> train_records,
                                              std::span<const data::ManifestRecord> test_records,
                                              const ClassifierTrainingConfig& config, data::ImageSize size) {
  const auto train_labels = dr_labels(train_records);
  const auto test_labels = dr_labels(test_records);
  const auto train_stages = stages_of_records(checkpoints, train_records, size);
  const auto test_stages = stages_of_records(checkpoints, test_records, size);
  const bool resize = size != config.network.input;
  auto to_input = [&](const torch::Tensor& t) {
    if (!resize) return t;
    return torch::nn::functional::interpolate(
        t, torch::nn::functional::InterpolateFuncOptions()
               .size(std::vector<std::int64_t>{config.network.input.height, config.network.input.width})
               .mode(torch::kBilinear)
               .align_corners(false));
  };
  std::vector<ClassifierRow> rows;
  for (std::size_t k = 0; k < train_stages.size(); ++k) {
    auto trained = train_classifier(to_input(train_stages[k]), train_labels, config);
    auto model = trained.model;
    const auto counts = evaluate_classifier([&](const torch::Tensor& x) { return model->forward(x); },
                                            to_input(test_stages[k]), test_labels);
    rows.push_back({row_name(static_cast<int>(k)), counts, compute_metrics(counts), trained.init_hash});
  }
  return rows;
}

EvalMode parse_eval_mode(std::string_view text) {
  if (text == "classifier") return EvalMode::Classifier;
  if (text == "psnr") return EvalMode::Psnr;
  if (text == "both") return EvalMode::Both;
  throw ConfigError("mode must be classifier, psnr or both, got '" + std::string(text) + "'");
}

EvaluationReport evaluate_run(const RunEvaluationOptions& options) {
  const auto record = orch::read_run_record(options.run_dir);
  auto config = read_run_config(options.run_dir / "config.json");
  if (run_digest(config) != record.run_digest) {
    throw DigestMismatchError("config.json of " + options.run_dir.string() + " does not match its run record");
  }
  auto checkpoints = orch::load_best_checkpoints(options.run_dir);
  const auto manifest_path = options.manifest.empty() ? config.manifest : options.manifest;
  const auto manifest = data::read_manifest(manifest_path);
  const auto size = config.training.network.image_size;
  auto classifier = config.classifier;
  if (options.seed) classifier.seed = *options.seed;

  EvaluationReport report;
  report.run_id = record.run_id;
  report.run_digest = record.run_digest;
  report.network_digest = record.network_digest;

  const auto test = manifest.select(data::Split::Test);
  if (test.empty()) throw InputError(manifest_path.string() + " has no test records");

  if (options.mode != EvalMode::Psnr) {
    const auto train = manifest.select(data::Split::Train);
    report.classifier_digest = digest(classifier);
    report.classifier_rows = classifier_by_pass(checkpoints, train, test, classifier, size);
    report.notes.push_back(
        "Each classifier row trains and tests on the same transformation of every image: original images for "
        "Original, the cascade output after pass k for the k-th row.");
    report.notes.push_back("Precision, sensitivity and F1 are reported as 0 when their denominator is 0.");
  }
  if (options.mode != EvalMode::Classifier) {
    const auto pairing_file =
        options.pairing.empty() ? manifest_path.parent_path() / "pairing.jsonl" : options.pairing;
    const auto pairing = data::read_pairing(pairing_file);
    std::vector<data::ManifestRecord> degraded;
    for (const auto& r : test) {
      if (r.quality_label == 0) degraded.push_back(r);
    }
    report.psnr_rows = psnr_by_pass(checkpoints, degraded, pairing, size);
    report.notes.push_back("PSNR uses peak 2 on [-1, 1] images, on held-out test images, with unquantised cascade output.");
  }
  return report;
}

}  // namespace ptl::eval
