#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "ptl/common.hpp"
#include "ptl/data_pipeline.hpp"

namespace ptl::nets {

// U-Net: `depth` stride-2 down blocks, `depth` stride-2 up blocks. Up block
// j (1-based) consumes the output of up block j-1 concatenated with down
// block depth+1-j; up block `depth` is the tanh output head.
struct GeneratorConfig {
  int in_channels = 3;
  int out_channels = 3;
  int base_channels = 64;
  int depth = 7;
  int max_multiplier = 8;

  // Output channels of down blocks 1..depth.
  std::vector<int> down_channels() const;
  friend bool operator==(const GeneratorConfig&, const GeneratorConfig&) = default;
};

// PatchGAN: kernel 4, padding 1, one layer per stride. Widths d, 2d, 4d, ...
// (capped at max_multiplier * d), single-channel last layer. Batch norm on
// every layer except the first and last; LeakyReLU(0.2) between layers.
struct DiscriminatorConfig {
  int in_channels = 3;
  int base_channels = 64;
  std::vector<int> strides{2, 2, 2, 1, 1};
  int max_multiplier = 8;

  std::vector<int> channels() const;
  // Side length of the patch grid for a square input; throws ShapeError if
  // any layer would produce an empty map.
  int grid_size(int input) const;
  friend bool operator==(const DiscriminatorConfig&, const DiscriminatorConfig&) = default;
};

// Three conv(3x3)+ReLU+maxpool(2) blocks, flatten, FC+ReLU, FC -> 2 logits.
struct ClassifierConfig {
  int in_channels = 3;
  std::array<int, 3> conv_channels{16, 32, 64};
  int hidden = 128;
  data::ImageSize input{};
  friend bool operator==(const ClassifierConfig&, const ClassifierConfig&) = default;
};

struct NetworkConfig {
  data::ImageSize image_size{256, 256};
  GeneratorConfig generator{};
  DiscriminatorConfig discriminator{};
  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

nlohmann::json to_json(const GeneratorConfig& c);
nlohmann::json to_json(const DiscriminatorConfig& c);
nlohmann::json to_json(const ClassifierConfig& c);
nlohmann::json to_json(const NetworkConfig& c);
GeneratorConfig generator_config_from_json(const nlohmann::json& j);
DiscriminatorConfig discriminator_config_from_json(const nlohmann::json& j);
ClassifierConfig classifier_config_from_json(const nlohmann::json& j);
NetworkConfig network_config_from_json(const nlohmann::json& j);

// Digest of the architecture; stamps checkpoints so that weights of
// different shapes or depths are never mixed.
std::string config_digest(const NetworkConfig& c);

// ---- modules --------------------------------------------------------------

class UNetGeneratorImpl : public torch::nn::Module {
 public:
  explicit UNetGeneratorImpl(GeneratorConfig config);

  torch::Tensor forward(const torch::Tensor& x);

  // Activations recorded by forward_probed.
  struct Probe {
    // When >= 1, the non-skip input of that up block is replaced by zeros.
    int zero_upstream_of_up_block = 0;
    std::vector<torch::Tensor> down;
    std::vector<torch::Tensor> up;
  };
  torch::Tensor forward_probed(const torch::Tensor& x, Probe& probe);

  const GeneratorConfig& config() const { return config_; }

 private:
  torch::Tensor run(const torch::Tensor& x, Probe* probe);

  GeneratorConfig config_;
  std::vector<torch::nn::Sequential> down_;
  std::vector<torch::nn::Sequential> up_;
};
TORCH_MODULE(UNetGenerator);

class PatchDiscriminatorImpl : public torch::nn::Module {
 public:
  explicit PatchDiscriminatorImpl(DiscriminatorConfig config);
  // N x C x H x W -> N x 1 x g x g raw scores (no sigmoid).
  torch::Tensor forward(const torch::Tensor& x);
  const DiscriminatorConfig& config() const { return config_; }

 private:
  DiscriminatorConfig config_;
  torch::nn::Sequential layers_;
};
TORCH_MODULE(PatchDiscriminator);

class ClassifierImpl : public torch::nn::Module {
 public:
  explicit ClassifierImpl(ClassifierConfig config);
  // N x C x H x W -> N x 2 logits.
  torch::Tensor forward(const torch::Tensor& x);
  const ClassifierConfig& config() const { return config_; }

 private:
  ClassifierConfig config_;
  torch::nn::Sequential features_;
  torch::nn::Sequential head_;
};
TORCH_MODULE(Classifier);

// ---- initialisation and counting -----------------------------------------

// Independent U[-epsilon, epsilon] draws for arrays of the given shapes, in
// order, from one seeded stream.
std::vector<torch::Tensor> init_weights(std::span<const std::vector<std::int64_t>> shapes, double epsilon,
                                        std::uint64_t seed);

// Re-draws every convolution and linear weight and bias of `module` from
// U[-bound, bound]: bound = epsilon when epsilon > 0, otherwise the layer's
// 1/sqrt(fan_in). Batch-norm affine terms reset to (1, 0) and running
// statistics to (0, 1).
void initialize_uniform(torch::nn::Module& module, double epsilon, std::uint64_t seed);

std::int64_t count_parameters(const torch::nn::Module& module);
std::int64_t count_parameters(std::span<const torch::Tensor> arrays);

// Closed-form layer-by-layer counts (weights, biases, batch-norm affine).
std::int64_t analytic_parameter_count(const GeneratorConfig& c);
std::int64_t analytic_parameter_count(const DiscriminatorConfig& c);
std::int64_t analytic_parameter_count(const ClassifierConfig& c);

// Base width whose analytic count is closest to `target` (other fields fixed).
int closest_base_width(const GeneratorConfig& c, std::int64_t target, int max_width = 512);
int closest_base_width(const DiscriminatorConfig& c, std::int64_t target, int max_width = 512);

// ---- state archives -------------------------------------------------------

// Binary archive of every parameter and buffer in registration order:
//   "PTLA1\n" <count>"\n" then per entry
//   <name> <dtype: f32|f64|i64> <ndim> <dims...>"\n" <raw little-endian bytes>"\n"
void save_state(const torch::nn::Module& module, const fs::path& file);
void load_state(torch::nn::Module& module, const fs::path& file);
// Element-wise copy of all parameters and buffers; shapes must agree.
void copy_state(const torch::nn::Module& from, torch::nn::Module& to);
// SHA-256 over names, shapes and bytes of all parameters and buffers.
std::string state_hash(const torch::nn::Module& module);
bool states_equal(const torch::nn::Module& a, const torch::nn::Module& b);

// ---- CycleGAN bundle and checkpoints ------------------------------------

struct CycleGan {
  explicit CycleGan(const NetworkConfig& config);

  NetworkConfig config;
  UNetGenerator gen_l2h;
  UNetGenerator gen_h2l;
  PatchDiscriminator disc_h;
  PatchDiscriminator disc_l;

  void train(bool on = true);
  void to(torch::Dtype dtype);
  CycleGan clone() const;
  // Hash over the four networks in the order gen_l2h, gen_h2l, disc_h, disc_l.
  std::string hash() const;
  void initialize(double epsilon, std::uint64_t seed);
};

bool states_equal(const CycleGan& a, const CycleGan& b);

struct CheckpointMeta {
  int pass_index = 0;
  int epoch = 0;
  double val_adv1 = 0.0;
  std::uint64_t seed = 0;
  std::string config_digest;
  std::string run_digest;
  std::string params_hash;
  NetworkConfig network{};
};

// Directory with gen_l2h.ptla, gen_h2l.ptla, disc_h.ptla, disc_l.ptla and a
// `meta` text file of key=value lines.
void save_checkpoint(const CycleGan& nets, CheckpointMeta meta, const fs::path& dir);
CheckpointMeta read_checkpoint_meta(const fs::path& dir);

struct LoadedCheckpoint {
  CycleGan nets;
  CheckpointMeta meta;
};

// Throws DigestMismatchError when `expected_digest` is non-empty and differs
// from the stored architecture digest.
LoadedCheckpoint load_checkpoint(const fs::path& dir, const std::string& expected_digest = {});

}  // namespace ptl::nets
