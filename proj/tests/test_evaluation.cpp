#include <cmath>
#include <random>

#include "doctest.h"
#include "ptl/evaluation.hpp"
#include "support.hpp"

using namespace ptl;
using namespace ptl::eval;

namespace {

torch::Tensor logits_for(const std::vector<int>& predicted) {
  auto t = torch::zeros({static_cast<std::int64_t>(predicted.size()), 2});
  for (std::size_t i = 0; i < predicted.size(); ++i) t[static_cast<std::int64_t>(i)][predicted[i]] = 1.0;
  return t;
}

torch::Tensor labels_of(const std::vector<int>& v) {
  return torch::tensor(std::vector<std::int64_t>(v.begin(), v.end()), torch::kLong);
}

}  // namespace

TEST_SUITE("evaluation") {
  TEST_CASE("metrics from confusion counts") {
    const auto m = compute_metrics({47, 9, 3, 41});
    CHECK(m.accuracy == doctest::Approx(0.88).epsilon(1e-12));
    CHECK(m.precision == doctest::Approx(47.0 / 56.0).epsilon(1e-12));
    CHECK(m.precision == doctest::Approx(0.8393).epsilon(1e-4));
    CHECK(m.sensitivity == doctest::Approx(0.94).epsilon(1e-12));
    CHECK(m.f1 == doctest::Approx(0.8868).epsilon(1e-4));
    const auto none = compute_metrics({0, 0, 0, 10});
    CHECK(none.precision == 0.0);
    CHECK(none.sensitivity == 0.0);
    CHECK(none.f1 == 0.0);
    CHECK(none.accuracy == 1.0);
    CHECK_THROWS_AS(compute_metrics({0, 0, 0, 0}), InputError);
    CHECK(f1_score(0.0, 0.0) == 0.0);
  }

  TEST_CASE("reference precision and sensitivity pairs give the expected F1") {
    const double rows[4][3] = {{81.03, 78.33, 79.66}, {78.57, 91.67, 84.62}, {79.58, 94.17, 86.26}, {83.57, 97.50, 90.00}};
    for (const auto& r : rows) CHECK(std::abs(f1_score(r[0], r[1]) - r[2]) <= 0.05);
  }

  TEST_CASE("metric identities on random counts") {
    std::mt19937_64 rng(5);
    for (int i = 0; i < 500; ++i) {
      ConfusionCounts c{static_cast<std::int64_t>(rng() % 50), static_cast<std::int64_t>(rng() % 50),
                        static_cast<std::int64_t>(rng() % 50), static_cast<std::int64_t>(rng() % 50) + 1};
      const auto m = compute_metrics(c);
      CHECK(m.f1 <= std::max(m.precision, m.sensitivity) + 1e-12);
      CHECK(m.f1 >= std::min(m.precision, m.sensitivity) - 1e-12);
      CHECK(m.accuracy * static_cast<double>(c.total()) == doctest::Approx(static_cast<double>(c.tp + c.tn)));
    }
  }

  TEST_CASE("tally with stub predictions") {
    const auto labels = labels_of({1, 1, 0, 0, 1});
    CHECK(tally(logits_for({1, 1, 0, 0, 1}), labels) == ConfusionCounts{3, 0, 0, 2});
    CHECK(tally(logits_for({1, 1, 1, 1, 1}), labels) == ConfusionCounts{3, 2, 0, 0});
    CHECK(tally(logits_for({0, 1, 1, 0, 0}), labels) == ConfusionCounts{1, 1, 2, 1});
    std::mt19937_64 rng(8);
    std::vector<int> p(97), l(97);
    ConfusionCounts expected;
    for (int i = 0; i < 97; ++i) {
      p[i] = static_cast<int>(rng() % 2);
      l[i] = static_cast<int>(rng() % 2);
      if (p[i] && l[i]) ++expected.tp;
      if (p[i] && !l[i]) ++expected.fp;
      if (!p[i] && l[i]) ++expected.fn;
      if (!p[i] && !l[i]) ++expected.tn;
    }
    CHECK(tally(logits_for(p), labels_of(l)) == expected);
    const auto images = logits_for(p).view({97, 2, 1, 1});
    const Predictor pass_through = [](const torch::Tensor& x) { return x.view({x.size(0), 2}); };
    CHECK(evaluate_classifier(pass_through, images, labels_of(l), 10) == expected);
  }

  TEST_CASE("dr labels are required") {
    std::vector<data::ManifestRecord> records(2);
    records[0].dr_label = 1;
    records[1].path = "missing_label.png";
    CHECK_THROWS_WITH_AS(dr_labels(records), doctest::Contains("missing_label.png"), InputError);
    records[1].dr_label = 0;
    CHECK(dr_labels(records).equal(labels_of({1, 0})));
  }

  TEST_CASE("psnr") {
    const auto a = torch::rand({3, 8, 8}) * 1.6 - 0.8;
    CHECK(psnr(a, a + 0.2) == doctest::Approx(20.0).epsilon(1e-6));
    CHECK(psnr(a, a) == kPsnrIdentical);
    const auto b = a + 0.05 * torch::randn({3, 8, 8});
    CHECK(psnr(a, b) == doctest::Approx(psnr(b, a)).epsilon(1e-12));
    const auto c = a + 0.2 * torch::randn({3, 8, 8});
    CHECK(psnr(a, b) > psnr(a, c));
    CHECK_THROWS_AS(psnr(a, torch::zeros({3, 8, 4})), ShapeError);
  }

  TEST_CASE("summary statistics") {
    const auto s = summarize({4.0, 1.0, 3.0, 2.0});
    CHECK(s.count == 4);
    CHECK(s.mean == 2.5);
    CHECK(s.median == 2.5);
    CHECK(s.min == 1.0);
    CHECK(s.max == 4.0);
    CHECK(s.p25 == doctest::Approx(1.75));
    CHECK(s.p75 == doctest::Approx(3.25));
    CHECK(s.stddev == doctest::Approx(std::sqrt(1.25)));
  }

  TEST_CASE("classifier training") {
    ClassifierTrainingConfig cfg;
    cfg.network.input = {16, 16};
    cfg.network.conv_channels = {4, 4, 4};
    cfg.network.hidden = 8;
    cfg.epochs = 25;
    cfg.batch_size = 8;
    cfg.seed = 4;
    torch::manual_seed(0);
    auto images = torch::rand({32, 3, 16, 16}) * 0.2 - 0.1;
    auto labels = torch::zeros({32}, torch::kLong);
    for (int i = 0; i < 16; ++i) {
      images[i] += 0.7;
      labels[i] = 1;
    }
    auto a = train_classifier(images, labels, cfg);
    auto b = train_classifier(images, labels, cfg);
    CHECK(a.init_hash == b.init_hash);
    CHECK(a.loss_trace == b.loss_trace);
    CHECK(a.loss_trace.back() < a.loss_trace.front());
    a.model->eval();
    const Predictor p = [&](const torch::Tensor& x) { return a.model->forward(x); };
    const auto counts = evaluate_classifier(p, images, labels);
    CHECK(compute_metrics(counts).accuracy == 1.0);
    auto other = cfg;
    other.seed = 5;
    CHECK(train_classifier(images, labels, other).init_hash != a.init_hash);
    CHECK_THROWS_AS(train_classifier(images, torch::ones({32}, torch::kLong), cfg), InputError);
    CHECK(classifier_training_from_json(to_json(cfg)).network == cfg.network);
    CHECK(digest(cfg) == digest(classifier_training_from_json(to_json(cfg))));
  }

  TEST_CASE("benchmark timings") {
    auto net = testing::tiny_network();
    std::vector<nets::LoadedCheckpoint> cps;
    for (int k = 0; k < 2; ++k) {
      nets::LoadedCheckpoint c{nets::CycleGan(net), {}};
      c.nets.initialize(0.0, 10 + k);
      c.meta.pass_index = k + 1;
      cps.push_back(std::move(c));
    }
    std::vector<torch::Tensor> images{torch::rand({3, 32, 32}), torch::rand({3, 32, 32})};
    const auto r = benchmark_inference(cps, images, 3);
    CHECK(r.images == 2);
    CHECK(r.repetitions == 3);
    REQUIRE(r.stages.size() == 2);
    CHECK(r.cascade.min > 0.0);
    for (const auto& s : r.stages) CHECK(s.min > 0.0);
    CHECK(r.cascade.mean == doctest::Approx(r.stages[0].mean + r.stages[1].mean).epsilon(0.5));
    CHECK_FALSE(r.hardware.empty());
    CHECK_THROWS_AS(benchmark_inference(cps, images, 2), InputError);
    const auto j = to_json(r);
    CHECK(j["stages"].size() == 2);
    CHECK(to_markdown(r).find("pass 2") != std::string::npos);
  }

  TEST_CASE("comparison grid") {
    const data::ImageSize s{12, 10};
    std::vector<GridRow> rows(2);
    for (auto& row : rows) {
      row.original = torch::rand({3, 12, 10}) * 2 - 1;
      row.passes = {torch::rand({3, 12, 10}) * 2 - 1, torch::rand({3, 12, 10}) * 2 - 1,
                    torch::rand({3, 12, 10}) * 2 - 1};
      row.reference = torch::rand({3, 12, 10}) * 2 - 1;
    }
    const auto grid = compose_grid(rows);
    CHECK(grid.cols == 5 * s.width + 6 * 2);
    CHECK(grid.rows == 16 + 2 * (s.height + 2) + 2);
    CHECK(grid.type() == CV_8UC3);
    std::vector<GridRow> bare(1);
    bare[0].original = rows[0].original;
    CHECK(compose_grid(bare).cols == s.width + 4);
    const auto dir = testing::scratch_dir("grid");
    render_comparison_grid(rows, dir / "a.png");
    render_comparison_grid(rows, dir / "b.png");
    CHECK(sha256_file(dir / "a.png") == sha256_file(dir / "b.png"));
    rows[1].passes[0] = torch::zeros({3, 8, 10});
    CHECK_THROWS_AS(compose_grid(rows), ShapeError);
  }

  TEST_CASE("report rows and json") {
    CHECK(row_name(0) == "Original");
    CHECK(row_name(1) == "1st Pass Restoration");
    CHECK(row_name(2) == "2nd Pass Restoration");
    CHECK(row_name(3) == "3rd Pass Restoration");
    CHECK(row_name(4) == "4th Pass Restoration");
    EvaluationReport r;
    r.run_id = "x";
    for (int k = 0; k < 3; ++k) {
      r.classifier_rows.push_back({row_name(k), {47, 9, 3, 41}, compute_metrics({47, 9, 3, 41}), "h"});
      r.psnr_rows.push_back({row_name(k), summarize({20.0 + k, kPsnrIdentical})});
    }
    const auto j = to_json(r);
    CHECK(j["classification"][2]["dataset"] == "2nd Pass Restoration");
    CHECK(j["psnr"][0]["psnr_db"]["max"] == "inf");
    const auto md = to_markdown(r);
    CHECK(md.find("88.00") != std::string::npos);
    CHECK(md.find("Original") < md.find("1st Pass Restoration"));
    const auto dir = testing::scratch_dir("report");
    write_report(r, dir);
    CHECK(fs::exists(dir / "report.json"));
    CHECK(fs::exists(dir / "report.md"));
  }
}
