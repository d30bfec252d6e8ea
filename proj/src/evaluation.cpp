#include "ptl/evaluation.hpp"

#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

namespace ptl::eval {

using nlohmann::json;

double f1_score(double precision, double sensitivity) {
  const double denom = precision + sensitivity;
  return denom == 0.0 ? 0.0 : 2.0 * precision * sensitivity / denom;
}

ClassificationMetrics compute_metrics(const ConfusionCounts& c) {
  if (c.tp < 0 || c.fp < 0 || c.fn < 0 || c.tn < 0) throw InputError("confusion counts must be non-negative");
  const auto total = c.total();
  if (total == 0) throw InputError("cannot compute metrics over zero samples");
  auto ratio = [](std::int64_t num, std::int64_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
  };
  ClassificationMetrics m;
  m.accuracy = ratio(c.tp + c.tn, total);
  m.precision = ratio(c.tp, c.tp + c.fp);
  m.sensitivity = ratio(c.tp, c.tp + c.fn);
  m.f1 = f1_score(m.precision, m.sensitivity);
  return m;
}

json to_json(const ClassifierTrainingConfig& c) {
  return {{"network", nets::to_json(c.network)}, {"epochs", c.epochs}, {"batch_size", c.batch_size},
          {"lr", c.lr},           {"beta1", c.beta1},   {"beta2", c.beta2},
          {"epsilon", c.epsilon}, {"seed", c.seed}};
}

ClassifierTrainingConfig classifier_training_from_json(const json& j, ClassifierTrainingConfig c) {
  if (j.contains("network")) {
    json merged = nets::to_json(c.network);
    merged.merge_patch(j.at("network"));
    c.network = nets::classifier_config_from_json(merged);
  }
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.seed = j.value("seed", c.seed);
  return c;
}

std::string digest(const ClassifierTrainingConfig& c) { return short_digest(to_json(c).dump()); }

torch::Tensor dr_labels(std::span<const data::ManifestRecord> records) {
  std::vector<std::int64_t> labels;
  labels.reserve(records.size());
  for (const auto& r : records) {
    if (!r.dr_label) throw InputError("record has no dr label: " + r.path.string());
    labels.push_back(*r.dr_label);
  }
  return torch::tensor(labels, torch::kInt64);
}

ClassifierResult train_classifier(const torch::Tensor& images, const torch::Tensor& labels,
                                  const ClassifierTrainingConfig& config) {
  if (images.size(0) != labels.size(0)) throw ShapeError("images and labels differ in count");
  if (images.size(0) == 0) throw InputError("classifier training set is empty");
  const auto positives = labels.sum().item<std::int64_t>();
  if (positives == 0 || positives == labels.size(0)) {
    throw InputError("classifier training set must contain both classes");
  }
  if (config.epochs < 1 || config.batch_size < 1) throw ConfigError("classifier epochs and batch size must be >= 1");

  ClassifierResult result{nets::Classifier(config.network), {}, {}, digest(config)};
  nets::initialize_uniform(*result.model, config.epsilon, derive_seed(config.seed, "classifier"));
  result.init_hash = nets::state_hash(*result.model);
  result.model->train();

  torch::optim::Adam opt(result.model->parameters(),
                         torch::optim::AdamOptions(config.lr).betas({config.beta1, config.beta2}));
  const auto n = static_cast<std::size_t>(images.size(0));
  std::vector<std::int64_t> order(n);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(derive_seed(config.seed, "classifier-epoch-" + std::to_string(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(n, start + static_cast<std::size_t>(config.batch_size));
      auto idx = torch::tensor(std::vector<std::int64_t>(order.begin() + static_cast<std::ptrdiff_t>(start),
                                                         order.begin() + static_cast<std::ptrdiff_t>(end)),
                               torch::kInt64);
      auto logits = result.model->forward(images.index_select(0, idx));
      auto loss = torch::nn::functional::cross_entropy(logits, labels.index_select(0, idx));
      opt.zero_grad();
      loss.backward();
      opt.step();
      sum += loss.item<double>();
      ++batches;
    }
    const double mean = sum / batches;
    if (!std::isfinite(mean)) throw DivergenceError("classifier loss became non-finite at epoch " + std::to_string(epoch));
    result.loss_trace.push_back(mean);
  }
  result.model->eval();
  return result;
}

ClassifierResult train_classifier(std::span<const data::ManifestRecord> records,
                                  const ClassifierTrainingConfig& config) {
  auto labels = dr_labels(records);
  return train_classifier(data::load_batch(records, config.network.input), labels, config);
}

ConfusionCounts tally(const torch::Tensor& logits, const torch::Tensor& labels) {
  if (logits.dim() != 2 || logits.size(1) != 2 || logits.size(0) != labels.size(0)) {
    throw ShapeError("tally expects N x 2 logits and N labels");
  }
  auto pred = logits.argmax(1).to(torch::kInt64).contiguous();
  auto truth = labels.to(torch::kInt64).contiguous();
  ConfusionCounts c;
  const auto* p = pred.data_ptr<std::int64_t>();
  const auto* t = truth.data_ptr<std::int64_t>();
  for (std::int64_t i = 0; i < pred.size(0); ++i) {
    if (p[i] == 1 && t[i] == 1) ++c.tp;
    else if (p[i] == 1) ++c.fp;
    else if (t[i] == 1) ++c.fn;
    else ++c.tn;
  }
  return c;
}

ConfusionCounts evaluate_classifier(const Predictor& predictor, const torch::Tensor& images,
                                    const torch::Tensor& labels, std::size_t chunk) {
  if (images.size(0) == 0) throw InputError("test set is empty");
  torch::NoGradGuard no_grad;
  ConfusionCounts total;
  const std::int64_t n = images.size(0);
  for (std::int64_t start = 0; start < n; start += static_cast<std::int64_t>(chunk)) {
    const std::int64_t len = std::min<std::int64_t>(static_cast<std::int64_t>(chunk), n - start);
    const auto c = tally(predictor(images.narrow(0, start, len)), labels.narrow(0, start, len));
    total.tp += c.tp;
    total.fp += c.fp;
    total.fn += c.fn;
    total.tn += c.tn;
  }
  return total;
}

ConfusionCounts evaluate_classifier(const Predictor& predictor, std::span<const data::ManifestRecord> records,
                                    data::ImageSize size) {
  if (records.empty()) throw InputError("test manifest is empty");
  auto labels = dr_labels(records);
  return evaluate_classifier(predictor, data::load_batch(records, size), labels);
}

double psnr(const torch::Tensor& reference, const torch::Tensor& candidate) {
  if (reference.sizes() != candidate.sizes()) {
    throw ShapeError("psnr: shape mismatch " + torch::str(reference.sizes()) + " vs " + torch::str(candidate.sizes()));
  }
  const double mse = (reference.to(torch::kFloat64) - candidate.to(torch::kFloat64)).pow(2).mean().item<double>();
  if (mse == 0.0) return kPsnrIdentical;
  return 10.0 * std::log10(4.0 / mse);
}

SummaryStats summarize(std::vector<double> values) {
  SummaryStats s;
  s.count = values.size();
  if (values.empty()) return s;
  std::sort(values.begin(), values.end());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = static_cast<std::size_t>(std::ceil(pos));
    if (lo == hi) return values[lo];
    return values[lo] + (values[hi] - values[lo]) * (pos - static_cast<double>(lo));
  };
  s.min = values.front();
  s.max = values.back();
  s.median = quantile(0.5);
  s.p25 = quantile(0.25);
  s.p75 = quantile(0.75);
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - s.mean) * (v - s.mean);
  s.stddev = std::isfinite(s.mean) ? std::sqrt(var / static_cast<double>(values.size())) : 0.0;
  return s;
}

// ---- latency --------------------------------------------------------------

std::string hardware_description() {
  std::string model = "unknown cpu";
  std::ifstream cpuinfo("/proc/cpuinfo");
  std::string line;
  while (std::getline(cpuinfo, line)) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) model = line.substr(colon + 2);
      break;
    }
  }
  std::ostringstream os;
  os << model << "; " << std::thread::hardware_concurrency() << " hardware threads; 1 worker";
  return os.str();
}

BenchmarkReport benchmark_inference(std::span<nets::LoadedCheckpoint> checkpoints,
                                    std::span<const torch::Tensor> images, int repetitions) {
  if (checkpoints.empty()) throw InputError("benchmark needs at least one checkpoint");
  if (images.empty()) throw InputError("benchmark needs at least one image");
  if (repetitions < 3) throw InputError("benchmark needs at least 3 repetitions");
  using clock = std::chrono::steady_clock;
  const int previous_threads = torch::get_num_threads();
  torch::set_num_threads(1);
  torch::NoGradGuard no_grad;
  for (auto& c : checkpoints) c.nets.gen_l2h->eval();

  auto run = [&](const torch::Tensor& image, std::vector<double>* stage_seconds) {
    torch::Tensor x = image.dim() == 3 ? image.unsqueeze(0) : image;
    for (std::size_t s = 0; s < checkpoints.size(); ++s) {
      const auto t0 = clock::now();
      x = checkpoints[s].nets.gen_l2h->forward(x);
      if (stage_seconds) (*stage_seconds)[s] = std::chrono::duration<double>(clock::now() - t0).count();
    }
    return x;
  };
  run(images.front(), nullptr);  // warm-up

  std::vector<double> cascade;
  std::vector<std::vector<double>> stages(checkpoints.size());
  std::vector<double> stage_seconds(checkpoints.size());
  for (const auto& image : images) {
    for (int r = 0; r < repetitions; ++r) {
      const auto t0 = clock::now();
      run(image, &stage_seconds);
      cascade.push_back(std::chrono::duration<double>(clock::now() - t0).count());
      for (std::size_t s = 0; s < stages.size(); ++s) stages[s].push_back(stage_seconds[s]);
    }
  }
  torch::set_num_threads(previous_threads);

  BenchmarkReport report;
  report.images = images.size();
  report.repetitions = repetitions;
  report.cascade = summarize(cascade);
  for (auto& s : stages) report.stages.push_back(summarize(s));
  report.hardware = hardware_description();
  return report;
}

namespace {

json finite_or_string(double v) {
  if (std::isfinite(v)) return v;
  return v > 0 ? "inf" : (v < 0 ? "-inf" : "nan");
}

std::string fixed(double v, int digits) {
  if (!std::isfinite(v)) return v > 0 ? "inf" : "nan";
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

}  // namespace

json to_json(const SummaryStats& s) {
  return {{"count", s.count},
          {"mean", finite_or_string(s.mean)},
          {"median", finite_or_string(s.median)},
          {"stddev", finite_or_string(s.stddev)},
          {"min", finite_or_string(s.min)},
          {"max", finite_or_string(s.max)},
          {"p25", finite_or_string(s.p25)},
          {"p75", finite_or_string(s.p75)}};
}

json to_json(const BenchmarkReport& r) {
  json stages = json::array();
  for (const auto& s : r.stages) stages.push_back(to_json(s));
  return {{"images", r.images},
          {"repetitions", r.repetitions},
          {"seconds_per_image", to_json(r.cascade)},
          {"stages", stages},
          {"hardware", r.hardware}};
}

std::string to_markdown(const BenchmarkReport& r) {
  std::ostringstream os;
  os << "| Stage | Median (s) | p25 (s) | p75 (s) | Samples |\n|---|---|---|---|---|\n";
  for (std::size_t i = 0; i < r.stages.size(); ++i) {
    os << "| pass " << i + 1 << " | " << fixed(r.stages[i].median, 6) << " | " << fixed(r.stages[i].p25, 6) << " | "
       << fixed(r.stages[i].p75, 6) << " | " << r.stages[i].count << " |\n";
  }
  os << "| cascade | " << fixed(r.cascade.median, 6) << " | " << fixed(r.cascade.p25, 6) << " | "
     << fixed(r.cascade.p75, 6) << " | " << r.cascade.count << " |\n\n"
     << "Hardware: " << r.hardware << "\n";
  return os.str();
}

// ---- comparison grids -----------------------------------------------------

cv::Mat compose_grid(std::span<const GridRow> rows) {
  if (rows.empty()) throw InputError("comparison grid needs at least one row");
  const auto h = rows.front().original.size(-2);
  const auto w = rows.front().original.size(-1);
  const std::size_t passes = rows.front().passes.size();
  const bool with_reference = rows.front().reference.has_value();
  auto check = [&](const torch::Tensor& t) {
    if (t.dim() != 3 || t.size(1) != h || t.size(2) != w) throw ShapeError("comparison grid images differ in size");
  };
  for (const auto& row : rows) {
    check(row.original);
    if (row.passes.size() != passes || row.reference.has_value() != with_reference) {
      throw ShapeError("comparison grid rows differ in column count");
    }
    for (const auto& p : row.passes) check(p);
    if (row.reference) check(*row.reference);
  }

  std::vector<std::string> captions{"input"};
  for (std::size_t i = 1; i <= passes; ++i) captions.push_back("pass " + std::to_string(i));
  if (with_reference) captions.push_back("reference");

  constexpr int kCaption = 16;
  constexpr int kGap = 2;
  const int tile_w = static_cast<int>(w);
  const int tile_h = static_cast<int>(h);
  const int cols = static_cast<int>(captions.size());
  const int width = cols * tile_w + (cols + 1) * kGap;
  const int height = kCaption + static_cast<int>(rows.size()) * (tile_h + kGap) + kGap;
  cv::Mat canvas(height, width, CV_8UC3, cv::Scalar(255, 255, 255));

  for (int c = 0; c < cols; ++c) {
    const int x = kGap + c * (tile_w + kGap);
    cv::putText(canvas, captions[static_cast<std::size_t>(c)], cv::Point(x + 1, kCaption - 4),
                cv::FONT_HERSHEY_PLAIN, 0.8, cv::Scalar(0, 0, 0), 1, cv::LINE_8);
  }
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::vector<torch::Tensor> tiles{rows[r].original};
    for (const auto& p : rows[r].passes) tiles.push_back(p);
    if (rows[r].reference) tiles.push_back(*rows[r].reference);
    const int y = kCaption + kGap + static_cast<int>(r) * (tile_h + kGap);
    for (int c = 0; c < cols; ++c) {
      const int x = kGap + c * (tile_w + kGap);
      data::denormalize(tiles[static_cast<std::size_t>(c)]).copyTo(canvas(cv::Rect(x, y, tile_w, tile_h)));
    }
  }
  return canvas;
}

void render_comparison_grid(std::span<const GridRow> rows, const fs::path& out_path) {
  data::save_png(compose_grid(rows), out_path);
}

// ---- reports --------------------------------------------------------------

std::string row_name(int pass) {
  if (pass <= 0) return "Original";
  const int mod100 = pass % 100;
  const int mod10 = pass % 10;
  std::string suffix = "th";
  if (mod100 < 11 || mod100 > 13) {
    if (mod10 == 1) suffix = "st";
    else if (mod10 == 2) suffix = "nd";
    else if (mod10 == 3) suffix = "rd";
  }
  return std::to_string(pass) + suffix + " Pass Restoration";
}

json to_json(const EvaluationReport& r) {
  json rows = json::array();
  for (const auto& row : r.classifier_rows) {
    rows.push_back({{"dataset", row.name},
                    {"counts", {{"tp", row.counts.tp}, {"fp", row.counts.fp}, {"fn", row.counts.fn}, {"tn", row.counts.tn}}},
                    {"accuracy", row.metrics.accuracy},
                    {"precision", row.metrics.precision},
                    {"sensitivity", row.metrics.sensitivity},
                    {"f1", row.metrics.f1},
                    {"classifier_init_hash", row.init_hash}});
  }
  json psnr_rows = json::array();
  for (const auto& row : r.psnr_rows) psnr_rows.push_back({{"dataset", row.name}, {"psnr_db", to_json(row.stats)}});
  json j{{"run_id", r.run_id},
         {"run_digest", r.run_digest},
         {"network_digest", r.network_digest},
         {"classifier_digest", r.classifier_digest},
         {"classification", rows},
         {"psnr", psnr_rows},
         {"notes", r.notes}};
  j["latency"] = r.latency ? to_json(*r.latency) : json(nullptr);
  return j;
}

std::string to_markdown(const EvaluationReport& r) {
  std::ostringstream os;
  os << "# Evaluation report: " << r.run_id << "\n\n"
     << "Run digest `" << r.run_digest << "`, network digest `" << r.network_digest << "`";
  if (!r.classifier_digest.empty()) os << ", classifier digest `" << r.classifier_digest << "`";
  os << ".\n\n";
  if (!r.classifier_rows.empty()) {
    os << "## DR classification\n\n"
       << "| Dataset | Accuracy | Precision | Sensitivity | F1 Score | TP | FP | FN | TN |\n"
       << "|---|---|---|---|---|---|---|---|---|\n";
    for (const auto& row : r.classifier_rows) {
      os << "| " << row.name << " | " << fixed(100 * row.metrics.accuracy, 2) << " | "
         << fixed(100 * row.metrics.precision, 2) << " | " << fixed(100 * row.metrics.sensitivity, 2) << " | "
         << fixed(100 * row.metrics.f1, 2) << " | " << row.counts.tp << " | " << row.counts.fp << " | "
         << row.counts.fn << " | " << row.counts.tn << " |\n";
    }
    os << "\n";
  }
  if (!r.psnr_rows.empty()) {
    os << "## PSNR against clean references (dB)\n\n"
       << "| Dataset | Mean | Median | Std | Min | Max | Images |\n|---|---|---|---|---|---|---|\n";
    for (const auto& row : r.psnr_rows) {
      os << "| " << row.name << " | " << fixed(row.stats.mean, 3) << " | " << fixed(row.stats.median, 3) << " | "
         << fixed(row.stats.stddev, 3) << " | " << fixed(row.stats.min, 3) << " | " << fixed(row.stats.max, 3)
         << " | " << row.stats.count << " |\n";
    }
    os << "\n";
  }
  if (r.latency) os << "## Inference latency\n\n" << to_markdown(*r.latency) << "\n";
  if (!r.notes.empty()) {
    os << "## Notes\n\n";
    for (const auto& n : r.notes) os << "- " << n << "\n";
  }
  return os.str();
}

void write_report(const EvaluationReport& r, const fs::path& dir) {
  fs::create_directories(dir);
  write_text_file(dir / "report.json", to_json(r).dump(2) + "\n");
  write_text_file(dir / "report.md", to_markdown(r));
}

}  // namespace ptl::eval
