#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "ptl/data_pipeline.hpp"
#include "ptl/networks.hpp"

namespace ptl::eval {

// "abnormal" (DR present) is the positive class.
struct ConfusionCounts {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  std::int64_t tn = 0;

  std::int64_t total() const { return tp + fp + fn + tn; }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

struct ClassificationMetrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double sensitivity = 0.0;
  double f1 = 0.0;
};

// Harmonic mean; 0 when precision + sensitivity == 0.
double f1_score(double precision, double sensitivity);

// Zero denominators yield 0 for precision, sensitivity and F1. Throws
// InputError when the counts are all zero.
ClassificationMetrics compute_metrics(const ConfusionCounts& counts);

struct ClassifierTrainingConfig {
  nets::ClassifierConfig network{};
  int epochs = 30;
  int batch_size = 16;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 0.0;  // <= 0: fan-in bounds
  std::uint64_t seed = 0;
};

nlohmann::json to_json(const ClassifierTrainingConfig& c);
ClassifierTrainingConfig classifier_training_from_json(const nlohmann::json& j, ClassifierTrainingConfig base = {});
std::string digest(const ClassifierTrainingConfig& c);

struct ClassifierResult {
  nets::Classifier model;
  std::vector<double> loss_trace;  // mean cross-entropy per epoch
  std::string init_hash;
  std::string config_digest;
};

// labels: N int64 values in {0, 1}.
ClassifierResult train_classifier(const torch::Tensor& images, const torch::Tensor& labels,
                                  const ClassifierTrainingConfig& config);
// Loads the images of `records` at the classifier input size; every
// record needs a dr label.
ClassifierResult train_classifier(std::span<const data::ManifestRecord> records,
                                  const ClassifierTrainingConfig& config);

using Predictor = std::function<torch::Tensor(const torch::Tensor&)>;

// Argmax over two logits per row against labels in {0, 1}.
ConfusionCounts tally(const torch::Tensor& logits, const torch::Tensor& labels);

ConfusionCounts evaluate_classifier(const Predictor& predictor, const torch::Tensor& images,
                                    const torch::Tensor& labels, std::size_t chunk = 32);
// Throws InputError naming the first record without a dr label.
ConfusionCounts evaluate_classifier(const Predictor& predictor, std::span<const data::ManifestRecord> records,
                                    data::ImageSize size);

torch::Tensor dr_labels(std::span<const data::ManifestRecord> records);

// Peak-signal-to-noise ratio for images in [-1, 1] (peak 2). Identical
// images return +infinity, written as the string "inf" in reports.
double psnr(const torch::Tensor& reference, const torch::Tensor& candidate);
inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

struct SummaryStats {
  std::size_t count = 0;
  double mean = 0.0;
  double median = 0.0;
  double stddev = 0.0;
  double min = 0.0;
  double max = 0.0;
  double p25 = 0.0;
  double p75 = 0.0;
};

SummaryStats summarize(std::vector<double> values);

// ---- latency --------------------------------------------------------------

struct BenchmarkReport {
  std::size_t images = 0;
  int repetitions = 0;
  SummaryStats cascade;              // seconds per image
  std::vector<SummaryStats> stages;  // one per pass
  std::string hardware;
};

std::string hardware_description();

// Times the full cascade and each stage per image; single worker.
BenchmarkReport benchmark_inference(std::span<nets::LoadedCheckpoint> checkpoints,
                                    std::span<const torch::Tensor> images, int repetitions);

nlohmann::json to_json(const SummaryStats& s);
nlohmann::json to_json(const BenchmarkReport& r);
std::string to_markdown(const BenchmarkReport& r);

// ---- comparison grids -----------------------------------------------------

struct GridRow {
  torch::Tensor original;
  std::vector<torch::Tensor> passes;
  std::optional<torch::Tensor> reference;
};

// Columns: input | pass 1 | ... | pass n | reference (when present), with a
// caption strip on top. Throws ShapeError on size mismatch.
cv::Mat compose_grid(std::span<const GridRow> rows);
void render_comparison_grid(std::span<const GridRow> rows, const fs::path& out_path);

// ---- reports --------------------------------------------------------------

// "Original", "1st Pass Restoration", "2nd Pass Restoration", ...
std::string row_name(int pass);

struct ClassifierRow {
  std::string name;
  ConfusionCounts counts;
  ClassificationMetrics metrics;
  std::string init_hash;
};

struct PsnrRow {
  std::string name;
  SummaryStats stats;
};

struct EvaluationReport {
  std::string run_id;
  std::string run_digest;
  std::string network_digest;
  std::string classifier_digest;
  std::vector<ClassifierRow> classifier_rows;
  std::vector<PsnrRow> psnr_rows;
  std::optional<BenchmarkReport> latency;
  std::vector<std::string> notes;
};

nlohmann::json to_json(const EvaluationReport& r);
std::string to_markdown(const EvaluationReport& r);
// Writes report.json and report.md into `dir`.
void write_report(const EvaluationReport& r, const fs::path& dir);

}  // namespace ptl::eval
