#include "ptl/ptl_orchestrator.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <iostream>

#include "ptl/cycle_trainer.hpp"

namespace ptl::orch {

using nlohmann::json;

std::string_view to_string(RunStatus s) {
  switch (s) {
    case RunStatus::Running: return "running";
    case RunStatus::Interrupted: return "interrupted";
    case RunStatus::Complete: return "complete";
    case RunStatus::Failed: return "failed";
  }
  return "failed";
}

namespace {

RunStatus parse_status(const std::string& s) {
  if (s == "running") return RunStatus::Running;
  if (s == "interrupted") return RunStatus::Interrupted;
  if (s == "complete") return RunStatus::Complete;
  if (s == "failed") return RunStatus::Failed;
  throw FormatError("unknown run status '" + s + "'");
}

std::string pass_dir_name(int pass) { return "pass_" + std::to_string(pass); }

void write_run_record(const RunRecord& r, const fs::path& run_dir) {
  write_text_file(run_dir / "run.json", to_json(r).dump(2) + "\n");
}

}  // namespace

json to_json(const PassRecord& p) {
  return {{"pass_index", p.pass_index},
          {"dataset", p.dataset},
          {"low_count", p.low_count},
          {"val_count", p.val_count},
          {"high_count", p.high_count},
          {"best_epoch", p.best_epoch},
          {"checkpoint", p.checkpoint},
          {"val_adv1", p.val_adv1},
          {"fallback", p.fallback},
          {"restored_manifest", p.restored_manifest},
          {"init_source", p.init_source},
          {"init_hash", p.init_hash},
          {"checkpoint_hash", p.checkpoint_hash},
          {"high_set_hash", p.high_set_hash}};
}

json to_json(const RunRecord& r) {
  json passes = json::array();
  for (const auto& p : r.passes) passes.push_back(to_json(p));
  return {{"run_id", r.run_id},
          {"seed", r.seed},
          {"n_passes", r.n_passes},
          {"init_mode", to_string(r.init_mode)},
          {"run_digest", r.run_digest},
          {"network_digest", r.network_digest},
          {"status", to_string(r.status)},
          {"failed_pass", r.failed_pass},
          {"failure", r.failure},
          {"passes", passes}};
}

PassRecord pass_record_from_json(const json& j) {
  PassRecord p;
  p.pass_index = j.at("pass_index").get<int>();
  p.dataset = j.at("dataset").get<std::string>();
  p.low_count = j.at("low_count").get<std::size_t>();
  p.val_count = j.at("val_count").get<std::size_t>();
  p.high_count = j.at("high_count").get<std::size_t>();
  p.best_epoch = j.at("best_epoch").get<int>();
  p.checkpoint = j.at("checkpoint").get<std::string>();
  p.val_adv1 = j.at("val_adv1").get<double>();
  p.fallback = j.at("fallback").get<bool>();
  p.restored_manifest = j.at("restored_manifest").get<std::string>();
  p.init_source = j.at("init_source").get<std::string>();
  p.init_hash = j.at("init_hash").get<std::string>();
  p.checkpoint_hash = j.at("checkpoint_hash").get<std::string>();
  p.high_set_hash = j.at("high_set_hash").get<std::string>();
  return p;
}

RunRecord run_record_from_json(const json& j) {
  try {
    RunRecord r;
    r.run_id = j.at("run_id").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.n_passes = j.at("n_passes").get<int>();
    r.init_mode = parse_init_mode(j.at("init_mode").get<std::string>());
    r.run_digest = j.at("run_digest").get<std::string>();
    r.network_digest = j.at("network_digest").get<std::string>();
    r.status = parse_status(j.at("status").get<std::string>());
    r.failed_pass = j.value("failed_pass", 0);
    r.failure = j.value("failure", std::string{});
    for (const auto& p : j.at("passes")) r.passes.push_back(pass_record_from_json(p));
    return r;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed run record: ") + e.what());
  }
}

RunRecord read_run_record(const fs::path& run_dir) {
  const auto file = run_dir / "run.json";
  if (!fs::exists(file)) throw InputError("no run record in " + run_dir.string());
  json j;
  try {
    j = json::parse(read_text_file(file));
  } catch (const json::parse_error& e) {
    throw FormatError(file.string() + ": " + e.what());
  }
  return run_record_from_json(j);
}

RunLock::RunLock(const fs::path& run_dir) {
  fs::create_directories(run_dir);
  const auto file = run_dir / ".lock";
  fd_ = ::open(file.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) throw IoError("cannot open lock file " + file.string() + ": " + std::strerror(errno));
  if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
    ::close(fd_);
    fd_ = -1;
    throw LockError("run directory " + run_dir.string() + " is locked by another process");
  }
}

RunLock::~RunLock() {
  if (fd_ >= 0) {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
}

std::string file_set_hash(std::span<const data::ManifestRecord> records) {
  Sha256 h;
  for (const auto& r : records) {
    const auto bytes = read_text_file(r.path);
    h.update(std::to_string(bytes.size()) + "\n");
    h.update(bytes);
  }
  return h.hex_digest();
}

std::vector<data::RestoredImage> restore_dataset(const nets::CycleGan& nets,
                                                 std::span<const data::ManifestRecord> records,
                                                 data::ImageSize size, std::size_t chunk) {
  std::vector<data::RestoredImage> out;
  out.reserve(records.size());
  torch::NoGradGuard no_grad;
  const auto gen = nets.gen_l2h.ptr();
  const bool was_training = gen->is_training();
  gen->eval();
  for (std::size_t start = 0; start < records.size(); start += chunk) {
    const auto part = records.subspan(start, std::min(chunk, records.size() - start));
    const auto restored = gen->forward(data::load_batch(part, size));
    for (std::size_t k = 0; k < part.size(); ++k) {
      out.push_back({part[k], restored[static_cast<std::int64_t>(k)].clone()});
    }
  }
  gen->train(was_training);
  return out;
}

std::vector<data::RestoredImage> restore_dataset(const nets::LoadedCheckpoint& checkpoint,
                                                 std::span<const data::ManifestRecord> records,
                                                 data::ImageSize size, const std::string& run_digest) {
  if (checkpoint.meta.run_digest != run_digest) {
    throw DigestMismatchError("checkpoint run digest " + checkpoint.meta.run_digest + " does not match run " +
                              run_digest);
  }
  return restore_dataset(checkpoint.nets, records, size);
}

CascadeResult cascade_restore(std::span<const nets::LoadedCheckpoint> checkpoints, const torch::Tensor& image) {
  if (checkpoints.empty()) throw InputError("cascade needs at least one checkpoint");
  for (std::size_t k = 1; k < checkpoints.size(); ++k) {
    const auto& prev = checkpoints[k - 1].meta;
    const auto& cur = checkpoints[k].meta;
    if (cur.run_digest != prev.run_digest || cur.config_digest != prev.config_digest) {
      throw DigestMismatchError("cascade mixes checkpoints of different runs");
    }
    if (cur.pass_index <= prev.pass_index) {
      throw InputError("cascade checkpoints out of order: pass " + std::to_string(cur.pass_index) + " after pass " +
                       std::to_string(prev.pass_index));
    }
  }
  torch::NoGradGuard no_grad;
  const bool single = image.dim() == 3;
  torch::Tensor x = single ? image.unsqueeze(0) : image;
  CascadeResult result;
  for (const auto& c : checkpoints) {
    const auto gen = c.nets.gen_l2h.ptr();
    const bool was_training = gen->is_training();
    gen->eval();
    x = gen->forward(x);
    gen->train(was_training);
    result.stages.push_back(single ? x.squeeze(0) : x);
  }
  result.output = result.stages.back();
  return result;
}

Initialization transfer_weights(const nets::LoadedCheckpoint& prev) {
  return {prev.nets.clone(), prev.meta.pass_index + 1};
}

std::vector<nets::LoadedCheckpoint> load_best_checkpoints(const fs::path& run_dir, int n) {
  const auto record = read_run_record(run_dir);
  if (n == 0) n = static_cast<int>(record.passes.size());
  if (n < 1 || n > static_cast<int>(record.passes.size())) {
    throw InputError("run " + record.run_id + " has " + std::to_string(record.passes.size()) +
                     " completed passes, asked for " + std::to_string(n));
  }
  std::vector<nets::LoadedCheckpoint> out;
  for (int i = 0; i < n; ++i) {
    auto c = nets::load_checkpoint(run_dir / record.passes[static_cast<std::size_t>(i)].checkpoint,
                                   record.network_digest);
    if (c.meta.run_digest != record.run_digest) {
      throw DigestMismatchError("checkpoint of pass " + std::to_string(i + 1) + " belongs to another run");
    }
    out.push_back(std::move(c));
  }
  return out;
}

RunRecord run_passes(const RunConfig& config, const RunOptions& options) {
  config.validate();
  if (config.manifest.empty()) throw ConfigError("no manifest given");
  const auto run_dir = config.run_dir();
  RunLock lock(run_dir);
  torch::set_num_threads(config.threads);

  const auto digest = run_digest(config);
  const auto network_digest = nets::config_digest(config.training.network);
  const auto size = config.training.network.image_size;

  RunRecord record;
  const bool has_record = fs::exists(run_dir / "run.json");
  if (has_record && !options.resume) {
    throw ConfigError("run directory " + run_dir.string() + " already holds a run; pass --resume to continue it");
  }
  if (has_record) {
    record = read_run_record(run_dir);
    if (record.run_digest != digest) {
      throw DigestMismatchError("run " + record.run_id + " was created with config digest " + record.run_digest +
                                ", current config digest is " + digest);
    }
    if (record.status == RunStatus::Complete) return record;
  } else {
    record.run_id = config.resolved_run_id();
    record.seed = config.training.seed;
    record.n_passes = config.n_passes;
    record.init_mode = config.init_mode;
    record.run_digest = digest;
    record.network_digest = network_digest;
    write_text_file(run_dir / "config.json", to_json(config).dump(2) + "\n");
  }
  record.status = RunStatus::Running;
  record.failed_pass = 0;
  record.failure.clear();
  write_run_record(record, run_dir);

  const auto initial = data::read_manifest(config.manifest);
  const auto original = data::pass_dataset_from_manifest(initial);

  for (int pass = static_cast<int>(record.passes.size()) + 1; pass <= config.n_passes; ++pass) {
    if (options.stop_after_pass > 0 && static_cast<int>(record.passes.size()) >= options.stop_after_pass) {
      record.status = RunStatus::Interrupted;
      write_run_record(record, run_dir);
      return record;
    }
    const auto pass_dir = run_dir / pass_dir_name(pass);
    try {
      PassRecord p;
      p.pass_index = pass;

      data::PassDataset dataset = original;
      dataset.pass_index = pass - 1;
      std::optional<nets::CycleGan> init;
      if (pass == 1) {
        p.dataset = config.manifest.generic_string();
      } else {
        const auto& prev = record.passes.back();
        p.dataset = prev.restored_manifest;
        const auto restored = data::read_manifest(run_dir / prev.restored_manifest);
        dataset.low_set = restored.select(data::Split::Train);
        if (config.restore_validation) dataset.val_low_set = restored.select(data::Split::Val);
        if (config.init_mode == InitMode::Ptl) {
          auto q = nets::load_checkpoint(run_dir / prev.checkpoint, network_digest);
          if (q.meta.run_digest != digest) throw DigestMismatchError("previous checkpoint belongs to another run");
          init = transfer_weights(q).nets;
        }
      }
      p.init_source = init ? pass_dir_name(pass - 1) : "random";
      p.low_count = dataset.low_set.size();
      p.val_count = dataset.val_low_set.size();
      p.high_count = dataset.high_set.size();
      p.high_set_hash = file_set_hash(dataset.high_set);

      fs::remove_all(pass_dir);
      const auto training = config.training_for_pass(pass);
      auto result = train::train_pass(dataset, init, training, {pass_dir, pass, digest});
      p.init_hash = result.init_hash;

      const auto best = train::select_best_epoch(result.trace, training.warmup_exclusion);
      p.best_epoch = best.epoch;
      p.val_adv1 = best.val_adv1;
      p.fallback = best.fallback;
      p.checkpoint = (fs::path(pass_dir_name(pass)) / best.checkpoint).generic_string();
      write_text_file(pass_dir / "best.json", json{{"epoch", best.epoch},
                                                   {"val_adv1", best.val_adv1},
                                                   {"checkpoint", best.checkpoint},
                                                   {"fallback", best.fallback}}
                                                      .dump(2) +
                                                  "\n");

      const auto q = nets::load_checkpoint(run_dir / p.checkpoint, network_digest);
      p.checkpoint_hash = q.nets.hash();

      std::vector<data::ManifestRecord> to_restore = dataset.low_set;
      if (config.restore_validation) {
        to_restore.insert(to_restore.end(), dataset.val_low_set.begin(), dataset.val_low_set.end());
      }
      const auto restored = restore_dataset(q, to_restore, size, digest);
      auto manifest = data::emit_restored_dataset(restored, pass_dir / "restored");
      manifest.source_id = pass_dir_name(pass);
      manifest.seed = config.training.seed;
      manifest.config_digest = digest;
      p.restored_manifest = (fs::path(pass_dir_name(pass)) / "restored" / "manifest.jsonl").generic_string();
      data::write_manifest(manifest, run_dir / p.restored_manifest);

      record.passes.push_back(std::move(p));
      write_run_record(record, run_dir);
    } catch (const Error& e) {
      record.status = RunStatus::Failed;
      record.failed_pass = pass;
      record.failure = e.what();
      write_run_record(record, run_dir);
      throw;
    }
  }
  record.status = RunStatus::Complete;
  write_run_record(record, run_dir);
  return record;
}

}  // namespace ptl::orch
