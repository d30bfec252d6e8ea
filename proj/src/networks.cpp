#include "ptl/networks.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

namespace ptl::nets {

namespace nn = torch::nn;
using nlohmann::json;

// ---- configs --------------------------------------------------------------

std::vector<int> GeneratorConfig::down_channels() const {
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(depth));
  for (int k = 0; k < depth; ++k) out.push_back(base_channels * std::min(1 << std::min(k, 30), max_multiplier));
  return out;
}

std::vector<int> DiscriminatorConfig::channels() const {
  std::vector<int> out;
  const int layers = static_cast<int>(strides.size());
  for (int i = 0; i < layers; ++i) {
    out.push_back(i + 1 == layers ? 1 : base_channels * std::min(1 << std::min(i, 30), max_multiplier));
  }
  return out;
}

int DiscriminatorConfig::grid_size(int input) const {
  int s = input;
  for (std::size_t i = 0; i < strides.size(); ++i) {
    const int numerator = s + 2 - 4;
    if (numerator < 0) {
      throw ShapeError("discriminator input " + std::to_string(input) + " is too small: layer " +
                       std::to_string(i + 1) + " would produce an empty map");
    }
    s = numerator / strides[i] + 1;
  }
  return s;
}

json to_json(const GeneratorConfig& c) {
  return {{"in_channels", c.in_channels},
          {"out_channels", c.out_channels},
          {"base_channels", c.base_channels},
          {"depth", c.depth},
          {"max_multiplier", c.max_multiplier}};
}

json to_json(const DiscriminatorConfig& c) {
  return {{"in_channels", c.in_channels},
          {"base_channels", c.base_channels},
          {"strides", c.strides},
          {"max_multiplier", c.max_multiplier}};
}

json to_json(const ClassifierConfig& c) {
  return {{"in_channels", c.in_channels},
          {"conv_channels", c.conv_channels},
          {"hidden", c.hidden},
          {"input", {c.input.height, c.input.width}}};
}

json to_json(const NetworkConfig& c) {
  return {{"image_size", {c.image_size.height, c.image_size.width}},
          {"generator", to_json(c.generator)},
          {"discriminator", to_json(c.discriminator)}};
}

GeneratorConfig generator_config_from_json(const json& j) {
  GeneratorConfig c;
  c.in_channels = j.value("in_channels", c.in_channels);
  c.out_channels = j.value("out_channels", c.out_channels);
  c.base_channels = j.value("base_channels", c.base_channels);
  c.depth = j.value("depth", c.depth);
  c.max_multiplier = j.value("max_multiplier", c.max_multiplier);
  return c;
}

DiscriminatorConfig discriminator_config_from_json(const json& j) {
  DiscriminatorConfig c;
  c.in_channels = j.value("in_channels", c.in_channels);
  c.base_channels = j.value("base_channels", c.base_channels);
  c.strides = j.value("strides", c.strides);
  c.max_multiplier = j.value("max_multiplier", c.max_multiplier);
  return c;
}

ClassifierConfig classifier_config_from_json(const json& j) {
  ClassifierConfig c;
  c.in_channels = j.value("in_channels", c.in_channels);
  c.conv_channels = j.value("conv_channels", c.conv_channels);
  c.hidden = j.value("hidden", c.hidden);
  if (j.contains("input")) {
    c.input.height = j.at("input").at(0).get<int>();
    c.input.width = j.at("input").at(1).get<int>();
  }
  return c;
}

NetworkConfig network_config_from_json(const json& j) {
  NetworkConfig c;
  if (j.contains("image_size")) {
    c.image_size.height = j.at("image_size").at(0).get<int>();
    c.image_size.width = j.at("image_size").at(1).get<int>();
  }
  if (j.contains("generator")) c.generator = generator_config_from_json(j.at("generator"));
  if (j.contains("discriminator")) c.discriminator = discriminator_config_from_json(j.at("discriminator"));
  return c;
}

std::string config_digest(const NetworkConfig& c) { return short_digest(to_json(c).dump()); }

// ---- generator ------------------------------------------------------------

UNetGeneratorImpl::UNetGeneratorImpl(GeneratorConfig config) : config_(std::move(config)) {
  if (config_.depth < 1) throw ConfigError("generator depth must be >= 1");
  if (config_.base_channels < 1) throw ConfigError("generator base width must be >= 1");
  const int depth = config_.depth;
  const auto down_ch = config_.down_channels();

  int in = config_.in_channels;
  for (int k = 1; k <= depth; ++k) {
    const int out = down_ch[static_cast<std::size_t>(k - 1)];
    nn::Sequential block;
    block->push_back(nn::Conv2d(nn::Conv2dOptions(in, out, 4).stride(2).padding(1)));
    if (k != 1 && k != depth) block->push_back(nn::BatchNorm2d(out));
    block->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)));
    down_.push_back(register_module("down" + std::to_string(k), block));
    in = out;
  }

  int upstream = down_ch.back();
  for (int j = 1; j <= depth; ++j) {
    const int skip = j == 1 ? 0 : down_ch[static_cast<std::size_t>(depth - j)];
    const int block_in = upstream + skip;
    nn::Sequential block;
    if (j < depth) {
      const int out = down_ch[static_cast<std::size_t>(depth - 1 - j)];
      block->push_back(nn::ConvTranspose2d(nn::ConvTranspose2dOptions(block_in, out, 4).stride(2).padding(1)));
      block->push_back(nn::BatchNorm2d(out));
      block->push_back(nn::ReLU());
      upstream = out;
    } else {
      block->push_back(
          nn::ConvTranspose2d(nn::ConvTranspose2dOptions(block_in, config_.out_channels, 4).stride(2).padding(1)));
      block->push_back(nn::Tanh());
    }
    up_.push_back(register_module("up" + std::to_string(j), block));
  }
}

torch::Tensor UNetGeneratorImpl::forward(const torch::Tensor& x) { return run(x, nullptr); }

torch::Tensor UNetGeneratorImpl::forward_probed(const torch::Tensor& x, Probe& probe) { return run(x, &probe); }

torch::Tensor UNetGeneratorImpl::run(const torch::Tensor& x, Probe* probe) {
  if (x.dim() != 4) throw ShapeError("generator expects an N x C x H x W batch");
  if (x.size(1) != config_.in_channels) {
    throw ShapeError("generator expects " + std::to_string(config_.in_channels) + " input channels, got " +
                     std::to_string(x.size(1)));
  }
  const std::int64_t multiple = std::int64_t{1} << config_.depth;
  if (x.size(2) % multiple != 0 || x.size(3) % multiple != 0) {
    throw ShapeError("generator input " + std::to_string(x.size(2)) + "x" + std::to_string(x.size(3)) +
                     " must be divisible by 2^" + std::to_string(config_.depth) + " = " + std::to_string(multiple));
  }
  const std::size_t depth = down_.size();
  std::vector<torch::Tensor> downs;
  downs.reserve(depth);
  torch::Tensor h = x;
  for (auto& block : down_) {
    h = block->forward(h);
    downs.push_back(h);
  }
  if (probe) probe->down = downs;

  torch::Tensor u;
  for (std::size_t j = 1; j <= depth; ++j) {
    torch::Tensor upstream = j == 1 ? downs[depth - 1] : u;
    if (probe && probe->zero_upstream_of_up_block == static_cast<int>(j)) upstream = torch::zeros_like(upstream);
    torch::Tensor input = j == 1 ? upstream : torch::cat({upstream, downs[depth - j]}, 1);
    u = up_[j - 1]->forward(input);
    if (probe) probe->up.push_back(u);
  }
  return u;
}

// ---- discriminator --------------------------------------------------------

PatchDiscriminatorImpl::PatchDiscriminatorImpl(DiscriminatorConfig config) : config_(std::move(config)) {
  if (config_.strides.size() < 2) throw ConfigError("discriminator needs at least two layers");
  const auto widths = config_.channels();
  const std::size_t layers = widths.size();
  int in = config_.in_channels;
  for (std::size_t i = 0; i < layers; ++i) {
    layers_->push_back(nn::Conv2d(nn::Conv2dOptions(in, widths[i], 4).stride(config_.strides[i]).padding(1)));
    if (i != 0 && i + 1 != layers) layers_->push_back(nn::BatchNorm2d(widths[i]));
    if (i + 1 != layers) layers_->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)));
    in = widths[i];
  }
  register_module("layers", layers_);
}

torch::Tensor PatchDiscriminatorImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 4) throw ShapeError("discriminator expects an N x C x H x W batch");
  config_.grid_size(static_cast<int>(x.size(2)));
  config_.grid_size(static_cast<int>(x.size(3)));
  return layers_->forward(x);
}

// ---- classifier -----------------------------------------------------------

ClassifierImpl::ClassifierImpl(ClassifierConfig config) : config_(std::move(config)) {
  int in = config_.in_channels;
  int h = config_.input.height;
  int w = config_.input.width;
  for (int out : config_.conv_channels) {
    features_->push_back(nn::Conv2d(nn::Conv2dOptions(in, out, 3).padding(1)));
    features_->push_back(nn::ReLU());
    features_->push_back(nn::MaxPool2d(nn::MaxPool2dOptions(2)));
    in = out;
    h /= 2;
    w /= 2;
  }
  if (h < 1 || w < 1) throw ConfigError("classifier input too small for three pooling stages");
  features_->push_back(nn::Flatten());
  head_->push_back(nn::Linear(in * h * w, config_.hidden));
  head_->push_back(nn::ReLU());
  head_->push_back(nn::Linear(config_.hidden, 2));
  register_module("features", features_);
  register_module("head", head_);
}

torch::Tensor ClassifierImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != config_.in_channels || x.size(2) != config_.input.height ||
      x.size(3) != config_.input.width) {
    throw ShapeError("classifier expects N x " + std::to_string(config_.in_channels) + " x " +
                     std::to_string(config_.input.height) + " x " + std::to_string(config_.input.width) +
                     " input, got " + std::string(torch::str(x.sizes())));
  }
  return head_->forward(features_->forward(x));
}

// ---- initialisation -------------------------------------------------------

namespace {

void fill_uniform(torch::Tensor& t, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> values(static_cast<std::size_t>(t.numel()));
  for (auto& v : values) v = dist(rng);
  auto src = torch::from_blob(values.data(), t.sizes(), torch::kFloat64);
  t.copy_(src);
}

}  // namespace

std::vector<torch::Tensor> init_weights(std::span<const std::vector<std::int64_t>> shapes, double epsilon,
                                        std::uint64_t seed) {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw ConfigError("init epsilon must be a positive finite value");
  std::mt19937_64 rng(seed);
  std::vector<torch::Tensor> out;
  out.reserve(shapes.size());
  for (const auto& shape : shapes) {
    auto t = torch::empty(shape, torch::kFloat32);
    fill_uniform(t, epsilon, rng);
    out.push_back(t);
  }
  return out;
}

void initialize_uniform(nn::Module& module, double epsilon, std::uint64_t seed) {
  if (!std::isfinite(epsilon)) throw ConfigError("init epsilon must be finite");
  torch::NoGradGuard no_grad;
  std::mt19937_64 rng(seed);
  for (const auto& m : module.modules(/*include_self=*/true)) {
    torch::Tensor weight;
    torch::Tensor bias;
    if (auto* conv = dynamic_cast<nn::Conv2dImpl*>(m.get())) {
      weight = conv->weight;
      bias = conv->bias;
    } else if (auto* convt = dynamic_cast<nn::ConvTranspose2dImpl*>(m.get())) {
      weight = convt->weight;
      bias = convt->bias;
    } else if (auto* linear = dynamic_cast<nn::LinearImpl*>(m.get())) {
      weight = linear->weight;
      bias = linear->bias;
    } else if (auto* bn = dynamic_cast<nn::BatchNorm2dImpl*>(m.get())) {
      bn->weight.fill_(1.0);
      bn->bias.fill_(0.0);
      bn->running_mean.zero_();
      bn->running_var.fill_(1.0);
      bn->num_batches_tracked.zero_();
      continue;
    } else {
      continue;
    }
    const double fan_in = static_cast<double>(weight.numel() / weight.size(0));
    const double bound = epsilon > 0.0 ? epsilon : 1.0 / std::sqrt(fan_in);
    fill_uniform(weight, bound, rng);
    if (bias.defined()) fill_uniform(bias, bound, rng);
  }
}

std::int64_t count_parameters(const nn::Module& module) {
  std::int64_t total = 0;
  for (const auto& p : module.parameters()) total += p.numel();
  return total;
}

std::int64_t count_parameters(std::span<const torch::Tensor> arrays) {
  std::int64_t total = 0;
  for (const auto& a : arrays) total += a.numel();
  return total;
}

namespace {

std::int64_t conv_count(std::int64_t in, std::int64_t out, std::int64_t k) { return in * out * k * k + out; }

}  // namespace

std::int64_t analytic_parameter_count(const GeneratorConfig& c) {
  const auto ch = c.down_channels();
  const int depth = c.depth;
  std::int64_t total = 0;
  std::int64_t in = c.in_channels;
  for (int k = 1; k <= depth; ++k) {
    const std::int64_t out = ch[static_cast<std::size_t>(k - 1)];
    total += conv_count(in, out, 4);
    if (k != 1 && k != depth) total += 2 * out;
    in = out;
  }
  std::int64_t upstream = ch.back();
  for (int j = 1; j <= depth; ++j) {
    const std::int64_t skip = j == 1 ? 0 : ch[static_cast<std::size_t>(depth - j)];
    const std::int64_t out = j < depth ? ch[static_cast<std::size_t>(depth - 1 - j)] : c.out_channels;
    total += conv_count(upstream + skip, out, 4);
    if (j < depth) total += 2 * out;
    upstream = out;
  }
  return total;
}

std::int64_t analytic_parameter_count(const DiscriminatorConfig& c) {
  const auto widths = c.channels();
  std::int64_t total = 0;
  std::int64_t in = c.in_channels;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    total += conv_count(in, widths[i], 4);
    if (i != 0 && i + 1 != widths.size()) total += 2 * widths[i];
    in = widths[i];
  }
  return total;
}

std::int64_t analytic_parameter_count(const ClassifierConfig& c) {
  std::int64_t total = 0;
  std::int64_t in = c.in_channels;
  std::int64_t h = c.input.height;
  std::int64_t w = c.input.width;
  for (int out : c.conv_channels) {
    total += conv_count(in, out, 3);
    in = out;
    h /= 2;
    w /= 2;
  }
  total += in * h * w * c.hidden + c.hidden;
  total += std::int64_t{c.hidden} * 2 + 2;
  return total;
}

namespace {

template <typename Config>
int closest_width(Config c, std::int64_t target, int max_width) {
  int best = 1;
  std::int64_t best_gap = std::numeric_limits<std::int64_t>::max();
  for (int width = 1; width <= max_width; ++width) {
    c.base_channels = width;
    const std::int64_t gap = std::llabs(analytic_parameter_count(c) - target);
    if (gap < best_gap) {
      best_gap = gap;
      best = width;
    }
  }
  return best;
}

}  // namespace

int closest_base_width(const GeneratorConfig& c, std::int64_t target, int max_width) {
  return closest_width(c, target, max_width);
}

int closest_base_width(const DiscriminatorConfig& c, std::int64_t target, int max_width) {
  return closest_width(c, target, max_width);
}

// ---- state archives -------------------------------------------------------

namespace {

struct NamedTensor {
  std::string name;
  torch::Tensor tensor;
};

std::vector<NamedTensor> named_state(const nn::Module& module) {
  std::vector<NamedTensor> out;
  for (const auto& item : module.named_parameters(/*recurse=*/true)) out.push_back({item.key(), item.value()});
  for (const auto& item : module.named_buffers(/*recurse=*/true)) out.push_back({item.key(), item.value()});
  return out;
}

std::string dtype_tag(torch::Dtype dtype) {
  switch (dtype) {
    case torch::kFloat32:
      return "f32";
    case torch::kFloat64:
      return "f64";
    case torch::kInt64:
      return "i64";
    default:
      throw FormatError("unsupported tensor dtype in state archive");
  }
}

torch::Dtype dtype_from_tag(const std::string& tag) {
  if (tag == "f32") return torch::kFloat32;
  if (tag == "f64") return torch::kFloat64;
  if (tag == "i64") return torch::kInt64;
  throw FormatError("unknown dtype tag '" + tag + "' in state archive");
}

std::string entry_header(const NamedTensor& e) {
  std::ostringstream os;
  os << e.name << ' ' << dtype_tag(e.tensor.scalar_type()) << ' ' << e.tensor.dim();
  for (auto d : e.tensor.sizes()) os << ' ' << d;
  return os.str();
}

std::span<const std::byte> raw_bytes(const torch::Tensor& contiguous) {
  return {reinterpret_cast<const std::byte*>(contiguous.data_ptr()),
          static_cast<std::size_t>(contiguous.numel()) * contiguous.element_size()};
}

}  // namespace

void save_state(const nn::Module& module, const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  fs::path tmp = file;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write state archive: " + file.string());
    const auto entries = named_state(module);
    out << "PTLA1\n" << entries.size() << "\n";
    for (const auto& e : entries) {
      auto data = e.tensor.detach().cpu().contiguous();
      out << entry_header(e) << "\n";
      const auto bytes = raw_bytes(data);
      out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
      out << "\n";
    }
    if (!out) throw IoError("write failed: " + file.string());
  }
  fs::rename(tmp, file);
}

void load_state(nn::Module& module, const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot read state archive: " + file.string());
  std::string magic;
  std::getline(in, magic);
  if (magic != "PTLA1") throw FormatError(file.string() + ": not a state archive");
  std::size_t count = 0;
  in >> count;
  in.ignore(1);

  auto entries = named_state(module);
  if (entries.size() != count) {
    throw FormatError(file.string() + ": archive holds " + std::to_string(count) + " tensors, module expects " +
                      std::to_string(entries.size()));
  }
  torch::NoGradGuard no_grad;
  for (auto& e : entries) {
    std::string line;
    std::getline(in, line);
    std::istringstream header(line);
    std::string name;
    std::string tag;
    std::int64_t ndim = 0;
    header >> name >> tag >> ndim;
    std::vector<std::int64_t> dims(static_cast<std::size_t>(ndim));
    for (auto& d : dims) header >> d;
    if (!header || name != e.name) {
      throw FormatError(file.string() + ": expected entry '" + e.name + "', found '" + name + "'");
    }
    if (torch::IntArrayRef(dims) != e.tensor.sizes()) {
      throw FormatError(file.string() + ": shape mismatch for '" + name + "'");
    }
    auto stored = torch::empty(dims, torch::TensorOptions().dtype(dtype_from_tag(tag)));
    in.read(reinterpret_cast<char*>(stored.data_ptr()),
            static_cast<std::streamsize>(stored.numel() * stored.element_size()));
    in.ignore(1);
    if (!in) throw FormatError(file.string() + ": truncated data for '" + name + "'");
    e.tensor.copy_(stored);
  }
}

void copy_state(const nn::Module& from, nn::Module& to) {
  const auto src = named_state(from);
  auto dst = named_state(to);
  if (src.size() != dst.size()) throw ShapeError("copy_state: modules have different layouts");
  torch::NoGradGuard no_grad;
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i].name != dst[i].name || src[i].tensor.sizes() != dst[i].tensor.sizes()) {
      throw ShapeError("copy_state: mismatch at '" + src[i].name + "'");
    }
    dst[i].tensor.copy_(src[i].tensor);
  }
}

std::string state_hash(const nn::Module& module) {
  Sha256 h;
  for (const auto& e : named_state(module)) {
    h.update(entry_header(e));
    h.update("\n");
    auto data = e.tensor.detach().cpu().contiguous();
    h.update(raw_bytes(data));
  }
  return h.hex_digest();
}

bool states_equal(const nn::Module& a, const nn::Module& b) {
  const auto sa = named_state(a);
  const auto sb = named_state(b);
  if (sa.size() != sb.size()) return false;
  for (std::size_t i = 0; i < sa.size(); ++i) {
    if (sa[i].name != sb[i].name || !torch::equal(sa[i].tensor, sb[i].tensor)) return false;
  }
  return true;
}

// ---- CycleGAN bundle ------------------------------------------------------

CycleGan::CycleGan(const NetworkConfig& cfg)
    : config(cfg),
      gen_l2h(cfg.generator),
      gen_h2l(cfg.generator),
      disc_h(cfg.discriminator),
      disc_l(cfg.discriminator) {}

void CycleGan::train(bool on) {
  gen_l2h->train(on);
  gen_h2l->train(on);
  disc_h->train(on);
  disc_l->train(on);
}

namespace {

// Module::to also casts integer buffers (batch-norm counters); keep those.
void cast_floating(nn::Module& module, torch::Dtype dtype) {
  torch::NoGradGuard no_grad;
  for (auto& p : module.parameters()) p.set_data(p.to(dtype));
  for (auto& b : module.buffers()) {
    if (b.is_floating_point()) b.set_data(b.to(dtype));
  }
}

}  // namespace

void CycleGan::to(torch::Dtype dtype) {
  cast_floating(*gen_l2h, dtype);
  cast_floating(*gen_h2l, dtype);
  cast_floating(*disc_h, dtype);
  cast_floating(*disc_l, dtype);
}

CycleGan CycleGan::clone() const {
  CycleGan copy(config);
  const auto params = gen_l2h->parameters();
  if (!params.empty()) copy.to(params.front().scalar_type());
  copy_state(*gen_l2h, *copy.gen_l2h);
  copy_state(*gen_h2l, *copy.gen_h2l);
  copy_state(*disc_h, *copy.disc_h);
  copy_state(*disc_l, *copy.disc_l);
  copy.train(gen_l2h->is_training());
  return copy;
}

std::string CycleGan::hash() const {
  Sha256 h;
  for (const nn::Module* m : {static_cast<const nn::Module*>(gen_l2h.get()),
                              static_cast<const nn::Module*>(gen_h2l.get()),
                              static_cast<const nn::Module*>(disc_h.get()),
                              static_cast<const nn::Module*>(disc_l.get())}) {
    h.update(state_hash(*m));
  }
  return h.hex_digest();
}

void CycleGan::initialize(double epsilon, std::uint64_t seed) {
  initialize_uniform(*gen_l2h, epsilon, derive_seed(seed, "gen_l2h"));
  initialize_uniform(*gen_h2l, epsilon, derive_seed(seed, "gen_h2l"));
  initialize_uniform(*disc_h, epsilon, derive_seed(seed, "disc_h"));
  initialize_uniform(*disc_l, epsilon, derive_seed(seed, "disc_l"));
}

bool states_equal(const CycleGan& a, const CycleGan& b) {
  return states_equal(*a.gen_l2h, *b.gen_l2h) && states_equal(*a.gen_h2l, *b.gen_h2l) &&
         states_equal(*a.disc_h, *b.disc_h) && states_equal(*a.disc_l, *b.disc_l);
}

// ---- checkpoints ----------------------------------------------------------

namespace {

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

void save_checkpoint(const CycleGan& nets, CheckpointMeta meta, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());
  meta.network = nets.config;
  meta.config_digest = config_digest(nets.config);
  meta.params_hash = nets.hash();
  save_state(*nets.gen_l2h, dir / "gen_l2h.ptla");
  save_state(*nets.gen_h2l, dir / "gen_h2l.ptla");
  save_state(*nets.disc_h, dir / "disc_h.ptla");
  save_state(*nets.disc_l, dir / "disc_l.ptla");
  std::ostringstream os;
  os << "format=ptl-checkpoint-1\n"
     << "pass_index=" << meta.pass_index << "\n"
     << "epoch=" << meta.epoch << "\n"
     << "val_adv1=" << format_double(meta.val_adv1) << "\n"
     << "seed=" << meta.seed << "\n"
     << "config_digest=" << meta.config_digest << "\n"
     << "run_digest=" << meta.run_digest << "\n"
     << "params_hash=" << meta.params_hash << "\n"
     << "network=" << to_json(meta.network).dump() << "\n";
  write_text_file(dir / "meta", os.str());
}

CheckpointMeta read_checkpoint_meta(const fs::path& dir) {
  const fs::path file = dir / "meta";
  if (!fs::exists(file)) throw InputError("missing checkpoint: " + file.string());
  std::istringstream in(read_text_file(file));
  CheckpointMeta meta;
  std::string line;
  bool versioned = false;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError(file.string() + ":" + std::to_string(line_no) + ": expected key=value");
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    try {
      if (key == "format") {
        if (value != "ptl-checkpoint-1") throw FormatError(file.string() + ": unsupported format " + value);
        versioned = true;
      } else if (key == "pass_index") {
        meta.pass_index = std::stoi(value);
      } else if (key == "epoch") {
        meta.epoch = std::stoi(value);
      } else if (key == "val_adv1") {
        meta.val_adv1 = std::strtod(value.c_str(), nullptr);
      } else if (key == "seed") {
        meta.seed = std::stoull(value);
      } else if (key == "config_digest") {
        meta.config_digest = value;
      } else if (key == "run_digest") {
        meta.run_digest = value;
      } else if (key == "params_hash") {
        meta.params_hash = value;
      } else if (key == "network") {
        meta.network = network_config_from_json(json::parse(value));
      }
    } catch (const std::logic_error& e) {
      throw FormatError(file.string() + ":" + std::to_string(line_no) + ": bad value for " + key);
    }
  }
  if (!versioned) throw FormatError(file.string() + ": missing format line");
  return meta;
}

LoadedCheckpoint load_checkpoint(const fs::path& dir, const std::string& expected_digest) {
  auto meta = read_checkpoint_meta(dir);
  if (!expected_digest.empty() && meta.config_digest != expected_digest) {
    throw DigestMismatchError("checkpoint " + dir.string() + " has config digest " + meta.config_digest +
                              ", expected " + expected_digest);
  }
  if (config_digest(meta.network) != meta.config_digest) {
    throw DigestMismatchError("checkpoint " + dir.string() + ": stored network does not match its digest");
  }
  CycleGan nets(meta.network);
  load_state(*nets.gen_l2h, dir / "gen_l2h.ptla");
  load_state(*nets.gen_h2l, dir / "gen_h2l.ptla");
  load_state(*nets.disc_h, dir / "disc_h.ptla");
  load_state(*nets.disc_l, dir / "disc_l.ptla");
  if (!meta.params_hash.empty() && nets.hash() != meta.params_hash) {
    throw FormatError("checkpoint " + dir.string() + ": parameter hash does not match meta");
  }
  return {std::move(nets), std::move(meta)};
}

}  // namespace ptl::nets
