#include "ptl/losses.hpp"

#include <cmath>

namespace ptl::losses {

void LossWeights::validate() const {
  if (!std::isfinite(lambda_cyc) || lambda_cyc < 0.0) throw ConfigError("lambda_cyc must be finite and >= 0");
  if (!std::isfinite(beta_ide) || beta_ide < 0.0) throw ConfigError("beta_ide must be finite and >= 0");
}

namespace {

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (a.sizes() != b.sizes()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + torch::str(a.sizes()) + " vs " +
                     torch::str(b.sizes()));
  }
}

void require_nonempty(const torch::Tensor& t, const char* what) {
  if (!t.defined() || t.numel() == 0 || (t.dim() > 0 && t.size(0) == 0)) {
    throw InputError(std::string(what) + ": empty batch");
  }
}

}  // namespace

torch::Tensor batch_l1(const torch::Tensor& a, const torch::Tensor& b) {
  require_same_shape(a, b, "l1");
  require_nonempty(a, "l1");
  auto diff = (a - b).abs();
  if (diff.dim() <= 1) return diff.mean();
  return diff.flatten(1).mean(1).mean();
}

torch::Tensor cycle_loss(const torch::Tensor& xl, const torch::Tensor& xh, const torch::Tensor& roundtrip_l,
                         const torch::Tensor& roundtrip_h) {
  require_same_shape(xl, roundtrip_l, "cycle_loss");
  require_same_shape(xh, roundtrip_h, "cycle_loss");
  return batch_l1(roundtrip_l, xl) + batch_l1(roundtrip_h, xh);
}

torch::Tensor adversarial_generator_loss(const torch::Tensor& scores) {
  require_nonempty(scores, "adversarial_generator_loss");
  return (1.0 - scores).pow(2).mean();
}

torch::Tensor identity_loss(const torch::Tensor& xl, const torch::Tensor& xh, const torch::Tensor& gen_l2h_on_xh,
                            const torch::Tensor& gen_h2l_on_xl) {
  require_same_shape(xh, gen_l2h_on_xh, "identity_loss");
  require_same_shape(xl, gen_h2l_on_xl, "identity_loss");
  return batch_l1(gen_l2h_on_xh, xh) + batch_l1(gen_h2l_on_xl, xl);
}

torch::Tensor total_generator_loss(const torch::Tensor& adv1, const torch::Tensor& adv2, const torch::Tensor& cyc,
                                   const torch::Tensor& ide, const LossWeights& weights) {
  weights.validate();
  return adv1 + adv2 + weights.lambda_cyc * cyc + weights.beta_ide * ide;
}

LossReport total_generator_loss(double adv1, double adv2, double cyc, double ide, const LossWeights& weights,
                                std::int64_t m) {
  weights.validate();
  for (double v : {adv1, adv2, cyc, ide}) {
    if (!std::isfinite(v)) throw DivergenceError("non-finite loss component");
  }
  LossReport r;
  r.adv1 = adv1;
  r.adv2 = adv2;
  r.cyc = cyc;
  r.ide = ide;
  r.total = adv1 + adv2 + weights.lambda_cyc * cyc + weights.beta_ide * ide;
  r.m = m;
  return r;
}

torch::Tensor discriminator_loss(const torch::Tensor& scores_on_real, const torch::Tensor& scores_on_generated) {
  require_nonempty(scores_on_real, "discriminator_loss");
  require_nonempty(scores_on_generated, "discriminator_loss");
  return 0.5 * ((scores_on_real - 1.0).pow(2).mean() + scores_on_generated.pow(2).mean());
}

}  // namespace ptl::losses
