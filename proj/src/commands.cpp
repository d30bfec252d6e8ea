#include <algorithm>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "ptl/cli.hpp"
#include "ptl/config.hpp"
#include "ptl/ptl_orchestrator.hpp"
#include "ptl/run_evaluation.hpp"
#include "ptl/synthetic.hpp"

namespace ptl {

namespace {

using nlohmann::json;

data::SplitFractions parse_fractions(const std::string& text) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      v.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ConfigError("bad split fraction '" + item + "'");
    }
  }
  if (v.size() != 3) throw ConfigError("--fractions needs three comma-separated values");
  return {v[0], v[1], v[2]};
}

bool is_image_file(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp" || ext == ".tif" || ext == ".tiff";
}

std::vector<fs::path> list_images(const fs::path& input) {
  if (!fs::exists(input)) throw InputError("no such input: " + input.string());
  if (!fs::is_directory(input)) return {input};
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(input)) {
    if (e.is_regular_file() && is_image_file(e.path())) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw InputError("no images in " + input.string());
  return out;
}

data::ImageSize run_image_size(const fs::path& run_dir) {
  return read_run_config(run_dir / "config.json").training.network.image_size;
}

struct PrepareArgs {
  std::string root, labels, out, fractions = "0.8,0.1,0.1";
  std::uint64_t seed = 0;
  bool test_high_only = false;
};

int cmd_prepare(const PrepareArgs& a, std::ostream& out) {
  const auto loaded = data::load_manifest(a.root, a.labels, a.seed);
  const auto split = data::build_splits(loaded, parse_fractions(a.fractions), a.seed, {a.test_high_only});
  data::write_manifest(split, a.out);
  const auto q = split.count_by_quality();
  const auto s = split.count_by_split();
  auto get = [](const auto& m, auto k) {
    const auto it = m.find(k);
    return it == m.end() ? std::size_t{0} : it->second;
  };
  out << "wrote " << a.out << ": " << split.records.size() << " records; train " << get(s, data::Split::Train)
      << ", val " << get(s, data::Split::Val) << ", test " << get(s, data::Split::Test) << "; low " << get(q, 0)
      << ", high " << get(q, 1) << "\n";
  return 0;
}

struct SynthArgs {
  std::size_t count = 200;
  int size = 64;
  std::string profile = "standard";
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  data::SynthOptions o;
  o.count = a.count;
  o.size = {a.size, a.size};
  o.profile = a.profile;
  o.seed = a.seed;
  o.out_dir = a.out;
  const auto corpus = data::generate_synthetic_corpus(o);
  out << "wrote " << corpus.clean.records.size() << " clean and " << corpus.degraded.records.size()
      << " degraded images to " << a.out << "\n";
  return 0;
}

struct OrchestrateArgs {
  std::string config;
  bool resume = false;
  bool desk_scale = false;
  int stop_after = 0;
  std::string manifest, run_id, output_root, init_mode;
  std::optional<std::uint64_t> seed;
  std::optional<int> passes, epochs, threads;
};

RunConfig effective_config(const OrchestrateArgs& a) {
  RunConfig c = a.desk_scale ? desk_scale_preset() : RunConfig{};
  if (!a.config.empty()) {
    json j;
    try {
      j = json::parse(read_text_file(a.config));
    } catch (const json::parse_error& e) {
      throw ConfigError(a.config + ": " + e.what());
    }
    c = run_config_from_json(j, c);
  }
  if (!a.manifest.empty()) c.manifest = a.manifest;
  if (!a.run_id.empty()) c.run_id = a.run_id;
  if (!a.output_root.empty()) c.output_root = a.output_root;
  if (!a.init_mode.empty()) c.init_mode = parse_init_mode(a.init_mode);
  if (a.seed) {
    c.training.seed = *a.seed;
    c.classifier.seed = *a.seed;
  }
  if (a.passes) c.n_passes = *a.passes;
  if (a.epochs) c.training.epochs = *a.epochs;
  if (a.threads) c.threads = *a.threads;
  return c;
}

int cmd_orchestrate(const OrchestrateArgs& a, std::ostream& out) {
  const auto config = effective_config(a);
  const auto record = orch::run_passes(config, {a.resume, a.stop_after});
  out << "run " << record.run_id << " (" << config.run_dir().generic_string() << "), digest " << record.run_digest
      << ", status " << orch::to_string(record.status) << "\n";
  for (const auto& p : record.passes) {
    out << "pass " << p.pass_index << ": best epoch " << p.best_epoch << ", val adv1 " << std::setprecision(6)
        << p.val_adv1 << (p.fallback ? " (fallback: no checkpoint after warm-up)" : "") << ", init "
        << p.init_source << "\n";
  }
  return 0;
}

struct RestoreArgs {
  std::string run, input, out, pairing;
  int passes = 0;
  bool grid = false;
};

int cmd_restore(const RestoreArgs& a, std::ostream& out) {
  const fs::path run_dir = a.run;
  const auto checkpoints = orch::load_best_checkpoints(run_dir, a.passes);
  const auto size = run_image_size(run_dir);
  std::map<fs::path, fs::path> pairing;
  if (!a.pairing.empty()) pairing = data::read_pairing(a.pairing);
  fs::create_directories(a.out);
  const auto inputs = list_images(a.input);
  for (const auto& path : inputs) {
    const auto x = data::load_tensor(path, size);
    const auto cascade = orch::cascade_restore(checkpoints, x);
    const auto stem = path.stem().string();
    data::save_png(data::denormalize(cascade.output), fs::path(a.out) / (stem + ".png"));
    if (a.grid) {
      eval::GridRow row{x, cascade.stages, std::nullopt};
      const auto it = pairing.find(fs::absolute(path).lexically_normal());
      if (it != pairing.end()) row.reference = data::load_tensor(it->second, size);
      eval::render_comparison_grid(std::span<const eval::GridRow>(&row, 1), fs::path(a.out) / (stem + "_grid.png"));
    }
  }
  out << "restored " << inputs.size() << " image(s) through " << checkpoints.size() << " pass(es) into " << a.out
      << "\n";
  return 0;
}

struct EvaluateArgs {
  std::string run, manifest, mode = "both", pairing, out;
  std::optional<std::uint64_t> seed;
};

int cmd_evaluate(const EvaluateArgs& a, std::ostream& out) {
  eval::RunEvaluationOptions o;
  o.run_dir = a.run;
  o.manifest = a.manifest;
  o.mode = eval::parse_eval_mode(a.mode);
  o.seed = a.seed;
  o.pairing = a.pairing;
  const auto report = eval::evaluate_run(o);
  const fs::path dir = a.out.empty() ? fs::path(a.run) / "evaluation" : fs::path(a.out);
  eval::write_report(report, dir);
  out << eval::to_markdown(report) << "\nwrote " << (dir / "report.json").generic_string() << "\n";
  return 0;
}

struct BenchArgs {
  std::string run, images, out;
  int reps = 3;
  std::size_t count = 4;
};

int cmd_bench(const BenchArgs& a, std::ostream& out) {
  const fs::path run_dir = a.run;
  auto checkpoints = orch::load_best_checkpoints(run_dir);
  const auto size = run_image_size(run_dir);
  auto paths = list_images(a.images);
  if (paths.size() > a.count) paths.resize(a.count);
  std::vector<torch::Tensor> images;
  for (const auto& p : paths) images.push_back(data::load_tensor(p, size));
  const auto report = eval::benchmark_inference(checkpoints, images, a.reps);
  const fs::path dir = a.out.empty() ? run_dir / "bench" : fs::path(a.out);
  fs::create_directories(dir);
  write_text_file(dir / "bench.json", eval::to_json(report).dump(2) + "\n");
  const auto md = eval::to_markdown(report);
  write_text_file(dir / "bench.md", md);
  out << md;
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Progressive transfer learning restoration of fundus images"};
  app.require_subcommand(1);

  PrepareArgs prep;
  auto* prepare = app.add_subcommand("prepare", "Build a split manifest from an image root and a label file");
  prepare->add_option("--root", prep.root, "Image root directory")->required();
  prepare->add_option("--labels", prep.labels, "Label CSV: filename,quality[,dr]")->required();
  prepare->add_option("--out", prep.out, "Manifest file to write")->required();
  prepare->add_option("--fractions", prep.fractions, "train,val,test fractions");
  prepare->add_option("--seed", prep.seed, "Shuffle seed");
  prepare->add_flag("--test-high-only", prep.test_high_only, "Draw the test split from high-quality images only");

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth-data", "Generate a paired clean/degraded synthetic corpus");
  synth_cmd->add_option("--count", synth.count, "Number of clean/degraded pairs");
  synth_cmd->add_option("--size", synth.size, "Image side in pixels");
  synth_cmd->add_option("--degradation-profile", synth.profile, "neutral, mild, standard or severe");
  synth_cmd->add_option("--seed", synth.seed, "Generator seed");
  synth_cmd->add_option("--out", synth.out, "Output directory")->required();

  OrchestrateArgs orc;
  auto* orchestrate = app.add_subcommand("orchestrate", "Train all passes of a run");
  orchestrate->add_option("--config", orc.config, "Run config JSON");
  orchestrate->add_flag("--resume", orc.resume, "Continue an interrupted run");
  orchestrate->add_flag("--desk-scale", orc.desk_scale, "Start from the small CPU preset");
  orchestrate->add_option("--stop-after", orc.stop_after, "Stop once this many passes are complete");
  orchestrate->add_option("--manifest", orc.manifest, "Dataset manifest");
  orchestrate->add_option("--run-id", orc.run_id, "Run directory name");
  orchestrate->add_option("--output-root", orc.output_root, "Directory holding runs");
  orchestrate->add_option("--init-mode", orc.init_mode, "ptl or random");
  orchestrate->add_option("--seed", orc.seed, "Run seed");
  orchestrate->add_option("--passes", orc.passes, "Number of passes");
  orchestrate->add_option("--epochs", orc.epochs, "Epochs per pass");
  orchestrate->add_option("--threads", orc.threads, "Worker threads");

  RestoreArgs rest;
  auto* restore = app.add_subcommand("restore", "Restore images with the cascade of best pass models");
  restore->add_option("--run", rest.run, "Run directory")->required();
  restore->add_option("--passes", rest.passes, "Use passes 1..n (default: all)");
  restore->add_option("--input", rest.input, "Image file or directory")->required();
  restore->add_option("--out", rest.out, "Output directory")->required();
  restore->add_flag("--grid", rest.grid, "Also write a comparison grid per image");
  restore->add_option("--pairing", rest.pairing, "Pairing file adding a reference column to grids");

  EvaluateArgs ev;
  auto* evaluate = app.add_subcommand("evaluate", "Compare original images with each pass");
  evaluate->add_option("--run", ev.run, "Run directory")->required();
  evaluate->add_option("--manifest", ev.manifest, "Manifest (default: the run's)");
  evaluate->add_option("--mode", ev.mode, "classifier, psnr or both");
  evaluate->add_option("--seed", ev.seed, "Classifier seed");
  evaluate->add_option("--pairing", ev.pairing, "Pairing file for psnr (default: next to the manifest)");
  evaluate->add_option("--out", ev.out, "Report directory (default: <run>/evaluation)");

  BenchArgs bench;
  auto* bench_cmd = app.add_subcommand("bench", "Time cascade inference");
  bench_cmd->add_option("--run", bench.run, "Run directory")->required();
  bench_cmd->add_option("--images", bench.images, "Image file or directory")->required();
  bench_cmd->add_option("--count", bench.count, "Maximum number of images");
  bench_cmd->add_option("--reps", bench.reps, "Repetitions per image");
  bench_cmd->add_option("--out", bench.out, "Output directory (default: <run>/bench)");

  std::vector<std::string> reversed(args.begin() + (args.empty() ? 0 : 1), args.end());
  std::reverse(reversed.begin(), reversed.end());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    err << e.what() << "\n";
    return 2;
  }

  try {
    if (prepare->parsed()) return cmd_prepare(prep, out);
    if (synth_cmd->parsed()) return cmd_synth(synth, out);
    if (orchestrate->parsed()) return cmd_orchestrate(orc, out);
    if (restore->parsed()) return cmd_restore(rest, out);
    if (evaluate->parsed()) return cmd_evaluate(ev, out);
    if (bench_cmd->parsed()) return cmd_bench(bench, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.exit_status();
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const c10::Error& e) {
    err << "error: " << e.what_without_backtrace() << "\n";
    return 2;
  }
  return 2;
}

int run_cli(int argc, char** argv) { return run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr); }

}  // namespace ptl
