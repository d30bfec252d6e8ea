#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace ptl::testing {

#ifndef PTL_TEST_SCRATCH
#define PTL_TEST_SCRATCH "test_scratch"
#endif

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::path(PTL_TEST_SCRATCH) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

nets::NetworkConfig toy_network(int base, int disc_base) {
  nets::NetworkConfig c;
  c.image_size = {4, 4};
  c.generator.in_channels = 1;
  c.generator.out_channels = 1;
  c.generator.base_channels = base;
  c.generator.depth = 2;
  c.discriminator.in_channels = 1;
  c.discriminator.base_channels = disc_base;
  c.discriminator.strides = {1, 1};
  return c;
}

nets::NetworkConfig tiny_network() {
  nets::NetworkConfig c;
  c.image_size = {32, 32};
  c.generator.base_channels = 4;
  c.generator.depth = 5;
  c.discriminator.base_channels = 4;
  return c;
}

namespace {

std::int64_t conv(std::int64_t cin, std::int64_t cout, std::int64_t k) { return cin * cout * k * k + cout; }

}  // namespace

std::int64_t oracle_generator_parameters(const nets::GeneratorConfig& c) {
  std::vector<std::int64_t> widths;
  for (int k = 0; k < c.depth; ++k) widths.push_back(c.base_channels * std::min<std::int64_t>(1LL << k, c.max_multiplier));
  std::int64_t total = 0;
  std::int64_t in = c.in_channels;
  for (int k = 0; k < c.depth; ++k) {
    total += conv(in, widths[k], 4);
    const bool first = k == 0;
    const bool innermost = k == c.depth - 1;
    if (!first && !innermost) total += 2 * widths[k];
    in = widths[k];
  }
  // Up block j reads the previous up output concatenated with the mirrored
  // down activation; the first up block has no skip input.
  std::int64_t prev = widths.back();
  for (int j = 1; j <= c.depth; ++j) {
    const std::int64_t skip = j == 1 ? 0 : widths[c.depth - j];
    const std::int64_t out = j == c.depth ? c.out_channels : widths[c.depth - 1 - j];
    total += conv(prev + skip, out, 4);
    if (j != c.depth) total += 2 * out;
    prev = out;
  }
  return total;
}

std::int64_t oracle_discriminator_parameters(const nets::DiscriminatorConfig& c) {
  const std::size_t n = c.strides.size();
  std::int64_t total = 0;
  std::int64_t in = c.in_channels;
  for (std::size_t i = 0; i < n; ++i) {
    const std::int64_t out = i + 1 == n ? 1 : c.base_channels * std::min<std::int64_t>(1LL << i, c.max_multiplier);
    total += conv(in, out, 4);
    if (i != 0 && i + 1 != n) total += 2 * out;
    in = out;
  }
  return total;
}

std::int64_t oracle_classifier_parameters(const nets::ClassifierConfig& c) {
  std::int64_t total = 0;
  std::int64_t in = c.in_channels;
  std::int64_t h = c.input.height;
  std::int64_t w = c.input.width;
  for (int out : c.conv_channels) {
    total += conv(in, out, 3);
    in = out;
    h /= 2;
    w /= 2;
  }
  total += in * h * w * c.hidden + c.hidden;
  total += c.hidden * 2 + 2;
  return total;
}

std::vector<int> oracle_stride_trace(int input, const std::vector<int>& strides) {
  std::vector<int> out;
  int s = input;
  for (int stride : strides) {
    s = static_cast<int>(std::floor((s + 2.0 - 4.0) / stride)) + 1;
    out.push_back(s);
  }
  return out;
}

std::pair<int, bool> brute_force_best(const train::TrainingTrace& trace, int warmup) {
  auto scan = [&](bool respect_warmup) {
    int best = 0;
    double value = -std::numeric_limits<double>::infinity();
    for (const auto& r : trace.epochs) {
      if (!r.checkpoint) continue;
      if (respect_warmup && r.epoch <= warmup) continue;
      if (best == 0 || r.val_adv1 > value) {
        best = r.epoch;
        value = r.val_adv1;
      }
    }
    return best;
  };
  const int best = scan(true);
  if (best != 0) return {best, false};
  return {scan(false), true};
}

GradCheck gradient_check(const std::function<torch::Tensor()>& f, const std::vector<torch::Tensor>& params, double h,
                         double floor) {
  for (auto p : params) {
    if (p.grad().defined()) p.mutable_grad().zero_();
  }
  f().backward();
  std::vector<torch::Tensor> analytic;
  for (const auto& p : params) analytic.push_back(p.grad().clone());

  GradCheck result;
  torch::NoGradGuard no_grad;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto flat = params[k].view(-1);
    auto grad = analytic[k].view(-1);
    for (std::int64_t i = 0; i < flat.numel(); ++i) {
      const double orig = flat[i].item<double>();
      flat[i] = orig + h;
      const double plus = f().item<double>();
      flat[i] = orig - h;
      const double minus = f().item<double>();
      flat[i] = orig;
      const double numeric = (plus - minus) / (2 * h);
      const double a = grad[i].item<double>();
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      result.max_rel_error = std::max(result.max_rel_error, rel);
      ++result.checked;
    }
  }
  return result;
}

data::SynthCorpus small_corpus(const fs::path& dir, std::size_t count, int size, std::uint64_t seed,
                               const std::string& profile) {
  data::SynthOptions o;
  o.count = count;
  o.size = {size, size};
  o.seed = seed;
  o.profile = profile;
  o.out_dir = dir;
  return data::generate_synthetic_corpus(o);
}

RunConfig tiny_run_config(const fs::path& manifest, const fs::path& output_root, const std::string& run_id,
                          int passes, int epochs) {
  RunConfig c;
  c.training.network = tiny_network();
  c.training.epochs = epochs;
  c.training.lr_constant_epochs = epochs;
  c.training.lr_decay_epochs = 0;
  c.training.warmup_exclusion = 0;
  c.training.seed = 11;
  c.n_passes = passes;
  c.manifest = manifest;
  c.output_root = output_root;
  c.run_id = run_id;
  c.classifier.network.input = c.training.network.image_size;
  c.classifier.epochs = 3;
  return c;
}

bool trees_identical(const fs::path& a, const fs::path& b, std::string* first_difference) {
  auto files = [](const fs::path& root) {
    std::set<fs::path> out;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
      if (e.is_regular_file()) out.insert(fs::relative(e.path(), root));
    }
    return out;
  };
  const auto fa = files(a);
  const auto fb = files(b);
  if (fa != fb) {
    if (first_difference) *first_difference = "file lists differ";
    return false;
  }
  for (const auto& rel : fa) {
    if (read_text_file(a / rel) != read_text_file(b / rel)) {
      if (first_difference) *first_difference = rel.string();
      return false;
    }
  }
  return true;
}

double max_abs_diff(const torch::Tensor& a, const torch::Tensor& b) {
  return (a.to(torch::kFloat64) - b.to(torch::kFloat64)).abs().max().item<double>();
}

}  // namespace ptl::testing
