#include "ptl/cycle_trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

namespace ptl::train {

using nlohmann::json;

void TrainingConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lr_final > 0.0) || !(lr_initial >= lr_final)) throw ConfigError("require lr_initial >= lr_final > 0");
  if (lr_constant_epochs < 0 || lr_decay_epochs < 0) throw ConfigError("schedule lengths must be >= 0");
  if (warmup_exclusion < 0) throw ConfigError("warmup_exclusion must be >= 0");
  if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be >= 1");
  if (!std::isfinite(epsilon)) throw ConfigError("epsilon must be finite");
  if (eval_batch_size < 1) throw ConfigError("eval_batch_size must be >= 1");
  weights.validate();
}

json to_json(const TrainingConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"lr_initial", c.lr_initial},
          {"lr_final", c.lr_final},
          {"lr_constant_epochs", c.lr_constant_epochs},
          {"lr_decay_epochs", c.lr_decay_epochs},
          {"warmup_exclusion", c.warmup_exclusion},
          {"lambda_cyc", c.weights.lambda_cyc},
          {"beta_ide", c.weights.beta_ide},
          {"epsilon", c.epsilon},
          {"seed", c.seed},
          {"network", nets::to_json(c.network)},
          {"checkpoint_every", c.checkpoint_every},
          {"train_lq_target", c.train_lq_target},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"eval_batch_size", c.eval_batch_size}};
}

TrainingConfig training_config_from_json(const json& j, TrainingConfig c) {
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr_initial = j.value("lr_initial", c.lr_initial);
  c.lr_final = j.value("lr_final", c.lr_final);
  c.lr_constant_epochs = j.value("lr_constant_epochs", c.lr_constant_epochs);
  c.lr_decay_epochs = j.value("lr_decay_epochs", c.lr_decay_epochs);
  c.warmup_exclusion = j.value("warmup_exclusion", c.warmup_exclusion);
  c.weights.lambda_cyc = j.value("lambda_cyc", c.weights.lambda_cyc);
  c.weights.beta_ide = j.value("beta_ide", c.weights.beta_ide);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.seed = j.value("seed", c.seed);
  if (j.contains("network")) {
    // Merge so that a partial network object keeps unspecified defaults.
    json merged = nets::to_json(c.network);
    merged.merge_patch(j.at("network"));
    c.network = nets::network_config_from_json(merged);
  }
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.train_lq_target = j.value("train_lq_target", c.train_lq_target);
  c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
  c.eval_batch_size = j.value("eval_batch_size", c.eval_batch_size);
  return c;
}

TrainingConfig apply_overrides(TrainingConfig base, const json& overrides) {
  return training_config_from_json(overrides, std::move(base));
}

double lr_at_epoch(const TrainingConfig& c, int epoch) {
  if (epoch < 1 || epoch > c.epochs) {
    throw InputError("epoch " + std::to_string(epoch) + " outside 1.." + std::to_string(c.epochs));
  }
  if (epoch <= c.lr_constant_epochs) return c.lr_initial;
  if (c.lr_decay_epochs == 0 || epoch >= c.lr_constant_epochs + c.lr_decay_epochs) return c.lr_final;
  const double t = static_cast<double>(epoch - c.lr_constant_epochs) / c.lr_decay_epochs;
  return c.lr_initial + (c.lr_final - c.lr_initial) * t;
}

json to_json(const EpochRecord& r) {
  return {{"epoch", r.epoch},
          {"lr", r.lr},
          {"adv1", r.train.adv1},
          {"adv2", r.train.adv2},
          {"cyc", r.train.cyc},
          {"ide", r.train.ide},
          {"total", r.train.total},
          {"m", r.train.m},
          {"disc_h", r.disc_h},
          {"disc_l", r.disc_l},
          {"val_adv1", r.val_adv1},
          {"checkpoint", r.checkpoint ? json(*r.checkpoint) : json(nullptr)}};
}

EpochRecord epoch_record_from_json(const json& j) {
  EpochRecord r;
  r.epoch = j.at("epoch").get<int>();
  r.lr = j.at("lr").get<double>();
  r.train.adv1 = j.at("adv1").get<double>();
  r.train.adv2 = j.at("adv2").get<double>();
  r.train.cyc = j.at("cyc").get<double>();
  r.train.ide = j.at("ide").get<double>();
  r.train.total = j.at("total").get<double>();
  r.train.m = j.at("m").get<std::int64_t>();
  r.disc_h = j.at("disc_h").get<double>();
  r.disc_l = j.at("disc_l").get<double>();
  r.val_adv1 = j.at("val_adv1").get<double>();
  if (!j.at("checkpoint").is_null()) r.checkpoint = j.at("checkpoint").get<std::string>();
  return r;
}

TrainingTrace read_trace(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw InputError("cannot read trace: " + file.string());
  TrainingTrace trace;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      trace.epochs.push_back(epoch_record_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw FormatError(file.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return trace;
}

std::vector<EpochBatch> epoch_batches(std::size_t n_low, std::size_t n_high, std::size_t batch_size,
                                      std::uint64_t seed) {
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  std::vector<std::int64_t> low(n_low);
  std::vector<std::int64_t> high(n_high);
  std::iota(low.begin(), low.end(), 0);
  std::iota(high.begin(), high.end(), 0);
  std::mt19937_64 rng_low(derive_seed(seed, "low"));
  std::mt19937_64 rng_high(derive_seed(seed, "high"));
  std::shuffle(low.begin(), low.end(), rng_low);
  std::shuffle(high.begin(), high.end(), rng_high);
  const std::size_t n = std::min(n_low, n_high);
  std::vector<EpochBatch> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    EpochBatch b;
    b.low.assign(low.begin() + static_cast<std::ptrdiff_t>(start), low.begin() + static_cast<std::ptrdiff_t>(end));
    b.high.assign(high.begin() + static_cast<std::ptrdiff_t>(start),
                  high.begin() + static_cast<std::ptrdiff_t>(end));
    batches.push_back(std::move(b));
  }
  return batches;
}

double validate_adv1(const ImageMap& generator, const ImageMap& discriminator, const torch::Tensor& images,
                     std::size_t chunk) {
  if (!images.defined() || images.size(0) == 0) throw InputError("validation set is empty");
  torch::NoGradGuard no_grad;
  const std::int64_t n = images.size(0);
  double weighted = 0.0;
  for (std::int64_t start = 0; start < n; start += static_cast<std::int64_t>(chunk)) {
    const std::int64_t len = std::min<std::int64_t>(static_cast<std::int64_t>(chunk), n - start);
    auto batch = images.narrow(0, start, len);
    auto scores = discriminator(generator(batch));
    // Per-image loss, so the result is the mean over images.
    auto per_image = (1.0 - scores).pow(2).flatten(1).mean(1);
    weighted += per_image.sum().item<double>();
  }
  return weighted / static_cast<double>(n);
}

double validate_epoch(nets::CycleGan& nets, const torch::Tensor& val_low, std::size_t chunk) {
  const bool gen_training = nets.gen_l2h->is_training();
  const bool disc_training = nets.disc_h->is_training();
  nets.gen_l2h->eval();
  nets.disc_h->eval();
  const double value = validate_adv1([&](const torch::Tensor& x) { return nets.gen_l2h->forward(x); },
                                     [&](const torch::Tensor& x) { return nets.disc_h->forward(x); }, val_low, chunk);
  nets.gen_l2h->train(gen_training);
  nets.disc_h->train(disc_training);
  return value;
}

Selection select_best_epoch(const TrainingTrace& trace, int warmup) {
  if (trace.epochs.empty()) throw InputError("cannot select from an empty trace");
  const EpochRecord* best = nullptr;
  const EpochRecord* best_any = nullptr;
  for (const auto& r : trace.epochs) {
    if (!r.checkpoint) continue;
    if (best_any == nullptr || r.val_adv1 > best_any->val_adv1) best_any = &r;
    if (r.epoch > warmup && (best == nullptr || r.val_adv1 > best->val_adv1)) best = &r;
  }
  if (best_any == nullptr) throw InputError("trace has no checkpointed epoch");
  Selection s;
  const EpochRecord* chosen = best ? best : best_any;
  s.epoch = chosen->epoch;
  s.checkpoint = *chosen->checkpoint;
  s.val_adv1 = chosen->val_adv1;
  s.fallback = best == nullptr;
  return s;
}

PassTensors load_pass_tensors(const data::PassDataset& dataset, data::ImageSize size) {
  PassTensors t;
  t.low = data::load_batch(dataset.low_set, size);
  t.val_low = data::load_batch(dataset.val_low_set, size);
  t.high = data::load_batch(dataset.high_set, size);
  return t;
}

std::uint64_t init_seed(const TrainingConfig& config, int pass_index) {
  return derive_seed(config.seed, "init-pass-" + std::to_string(pass_index));
}

namespace {

void set_requires_grad(torch::nn::Module& m, bool on) {
  for (auto& p : m.parameters()) p.set_requires_grad(on);
}

void set_lr(torch::optim::Adam& opt, double lr) {
  for (auto& group : opt.param_groups()) static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
}

torch::Tensor oversample(const torch::Tensor& low, std::size_t target, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(low.size(0));
  if (target <= n || n == 0) return low;
  std::vector<torch::Tensor> items;
  items.reserve(target);
  for (std::size_t i = 0; i < n; ++i) items.push_back(low[static_cast<std::int64_t>(i)]);
  std::mt19937_64 rng(derive_seed(seed, "oversample"));
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  for (std::size_t k = n; k < target; ++k) {
    items.push_back(data::augment(low[static_cast<std::int64_t>(pick(rng))], derive_seed(seed, k)));
  }
  return torch::stack(items);
}

std::string checkpoint_name(int epoch) {
  std::ostringstream os;
  os << "checkpoints/epoch_" << std::setw(4) << std::setfill('0') << epoch;
  return os.str();
}

}  // namespace

PassResult train_pass(const PassTensors& data, const std::optional<nets::CycleGan>& init,
                      const TrainingConfig& config, const PassContext& context, const StepObserver& observer) {
  config.validate();
  if (!data.low.defined() || data.low.size(0) == 0) throw InputError("pass has no low-quality training images");
  if (!data.high.defined() || data.high.size(0) == 0) throw InputError("pass has no high-quality training images");
  if (!data.val_low.defined() || data.val_low.size(0) == 0) throw InputError("pass has no validation images");

  const std::string digest = nets::config_digest(config.network);
  nets::CycleGan model = [&] {
    if (init) {
      if (nets::config_digest(init->config) != digest) {
        throw DigestMismatchError("initial checkpoint digest " + nets::config_digest(init->config) +
                                  " does not match configuration digest " + digest);
      }
      return init->clone();
    }
    nets::CycleGan fresh(config.network);
    fresh.initialize(config.epsilon, init_seed(config, context.pass_index));
    return fresh;
  }();
  model.train(true);

  PassResult result{{}, model.hash(), model.clone()};

  std::vector<torch::Tensor> gen_params = model.gen_l2h->parameters();
  for (auto& p : model.gen_h2l->parameters()) gen_params.push_back(p);
  std::vector<torch::Tensor> disc_params = model.disc_h->parameters();
  for (auto& p : model.disc_l->parameters()) disc_params.push_back(p);
  auto adam = torch::optim::AdamOptions(config.lr_initial).betas({config.adam_beta1, config.adam_beta2});
  torch::optim::Adam opt_g(gen_params, adam);
  torch::optim::Adam opt_d(disc_params, adam);

  const torch::Tensor low = oversample(data.low, config.train_lq_target,
                                       derive_seed(config.seed, "pass-" + std::to_string(context.pass_index)));
  const bool write_files = !context.pass_dir.empty();
  std::ofstream trace_out;
  if (write_files) {
    fs::create_directories(context.pass_dir);
    trace_out.open(context.pass_dir / "trace.jsonl", std::ios::trunc);
    if (!trace_out) throw IoError("cannot write trace in " + context.pass_dir.string());
  }

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const double lr = lr_at_epoch(config, epoch);
    set_lr(opt_g, lr);
    set_lr(opt_d, lr);
    const auto batches = epoch_batches(
        static_cast<std::size_t>(low.size(0)), static_cast<std::size_t>(data.high.size(0)),
        static_cast<std::size_t>(config.batch_size),
        derive_seed(config.seed, "shuffle-" + std::to_string(context.pass_index) + "-" + std::to_string(epoch)));

    double sum_adv1 = 0, sum_adv2 = 0, sum_cyc = 0, sum_ide = 0, sum_dh = 0, sum_dl = 0;
    int step = 0;
    for (const auto& batch : batches) {
      if (observer) observer(epoch, step, model);
      const auto xl = low.index_select(0, torch::tensor(batch.low, torch::kInt64));
      const auto xh = data.high.index_select(0, torch::tensor(batch.high, torch::kInt64));

      // Generator step.
      set_requires_grad(*model.disc_h, false);
      set_requires_grad(*model.disc_l, false);
      auto fake_h = model.gen_l2h->forward(xl);
      auto rec_l = model.gen_h2l->forward(fake_h);
      auto fake_l = model.gen_h2l->forward(xh);
      auto rec_h = model.gen_l2h->forward(fake_l);
      auto idt_h = model.gen_l2h->forward(xh);
      auto idt_l = model.gen_h2l->forward(xl);
      auto adv1 = losses::adversarial_generator_loss(model.disc_h->forward(fake_h));
      auto adv2 = losses::adversarial_generator_loss(model.disc_l->forward(fake_l));
      auto cyc = losses::cycle_loss(xl, xh, rec_l, rec_h);
      auto ide = losses::identity_loss(xl, xh, idt_h, idt_l);
      auto total = losses::total_generator_loss(adv1, adv2, cyc, ide, config.weights);
      const double total_value = total.item<double>();
      if (!std::isfinite(total_value)) {
        throw DivergenceError("non-finite generator loss at pass " + std::to_string(context.pass_index) +
                              ", epoch " + std::to_string(epoch) + ", batch " + std::to_string(step));
      }
      opt_g.zero_grad();
      total.backward();
      opt_g.step();

      // Discriminator step on detached generator outputs.
      set_requires_grad(*model.disc_h, true);
      set_requires_grad(*model.disc_l, true);
      auto loss_dh = losses::discriminator_loss(model.disc_h->forward(xh), model.disc_h->forward(fake_h.detach()));
      auto loss_dl = losses::discriminator_loss(model.disc_l->forward(xl), model.disc_l->forward(fake_l.detach()));
      auto loss_d = loss_dh + loss_dl;
      const double d_value = loss_d.item<double>();
      if (!std::isfinite(d_value)) {
        throw DivergenceError("non-finite discriminator loss at pass " + std::to_string(context.pass_index) +
                              ", epoch " + std::to_string(epoch) + ", batch " + std::to_string(step));
      }
      opt_d.zero_grad();
      loss_d.backward();
      opt_d.step();

      sum_adv1 += adv1.item<double>();
      sum_adv2 += adv2.item<double>();
      sum_cyc += cyc.item<double>();
      sum_ide += ide.item<double>();
      sum_dh += loss_dh.item<double>();
      sum_dl += loss_dl.item<double>();
      ++step;
    }

    const double n = static_cast<double>(std::max(step, 1));
    EpochRecord record;
    record.epoch = epoch;
    record.lr = lr;
    record.train = losses::total_generator_loss(sum_adv1 / n, sum_adv2 / n, sum_cyc / n, sum_ide / n,
                                                config.weights, config.batch_size);
    record.disc_h = sum_dh / n;
    record.disc_l = sum_dl / n;
    record.val_adv1 = validate_epoch(model, data.val_low, config.eval_batch_size);
    model.train(true);

    const bool checkpoint_due = epoch % config.checkpoint_every == 0 || epoch == config.epochs;
    if (checkpoint_due) {
      const std::string name = checkpoint_name(epoch);
      if (write_files) {
        nets::CheckpointMeta meta;
        meta.pass_index = context.pass_index;
        meta.epoch = epoch;
        meta.val_adv1 = record.val_adv1;
        meta.seed = config.seed;
        meta.run_digest = context.run_digest;
        nets::save_checkpoint(model, meta, context.pass_dir / name);
      }
      record.checkpoint = name;
    }
    if (write_files) {
      trace_out << to_json(record).dump() << '\n';
      trace_out.flush();
      if (!trace_out) throw IoError("trace write failed in " + context.pass_dir.string());
    }
    result.trace.epochs.push_back(std::move(record));
  }

  model.train(false);
  result.final_nets = std::move(model);
  return result;
}

PassResult train_pass(const data::PassDataset& dataset, const std::optional<nets::CycleGan>& init,
                      const TrainingConfig& config, const PassContext& context, const StepObserver& observer) {
  return train_pass(load_pass_tensors(dataset, config.network.image_size), init, config, context, observer);
}

}  // namespace ptl::train
