#pragma once

#include <torch/torch.h>

#include <cstdint>

#include "ptl/common.hpp"

// CycleGAN objectives. Tensor overloads keep the autograd graph; the
// per-image L1 "norm" is the mean absolute difference over all elements
// of the image.
namespace ptl::losses {

struct LossWeights {
  double lambda_cyc = 10.0;
  double beta_ide = 5.0;

  // Throws ConfigError unless both weights are finite and non-negative.
  void validate() const;
};

struct LossReport {
  double adv1 = 0.0;
  double adv2 = 0.0;
  double cyc = 0.0;
  double ide = 0.0;
  double total = 0.0;
  std::int64_t m = 1;
};

// Batch mean of the per-image mean absolute difference.
torch::Tensor batch_l1(const torch::Tensor& a, const torch::Tensor& b);

// Sum over both directions of the batch-mean reconstruction error.
torch::Tensor cycle_loss(const torch::Tensor& xl, const torch::Tensor& xh, const torch::Tensor& roundtrip_l,
                         const torch::Tensor& roundtrip_h);

// Mean of (1 - score)^2 over batch and patch positions.
torch::Tensor adversarial_generator_loss(const torch::Tensor& scores_on_generated);

torch::Tensor identity_loss(const torch::Tensor& xl, const torch::Tensor& xh, const torch::Tensor& gen_l2h_on_xh,
                            const torch::Tensor& gen_h2l_on_xl);

torch::Tensor total_generator_loss(const torch::Tensor& adv1, const torch::Tensor& adv2, const torch::Tensor& cyc,
                                   const torch::Tensor& ide, const LossWeights& weights);

// Scalar form; throws DivergenceError when any component is non-finite.
LossReport total_generator_loss(double adv1, double adv2, double cyc, double ide, const LossWeights& weights,
                                std::int64_t m = 1);

// 0.5 * [mean (real - 1)^2 + mean generated^2].
torch::Tensor discriminator_loss(const torch::Tensor& scores_on_real, const torch::Tensor& scores_on_generated);

}  // namespace ptl::losses
