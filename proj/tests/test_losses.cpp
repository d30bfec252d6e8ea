#include <random>

#include "doctest.h"
#include "ptl/losses.hpp"
#include "support.hpp"

using namespace ptl;
using namespace ptl::losses;

namespace {

torch::Tensor t(std::initializer_list<double> v) { return torch::tensor(std::vector<double>(v), torch::kFloat64); }
double val(const torch::Tensor& x) { return x.item<double>(); }

// Per-image mean absolute difference, written out with explicit loops.
double loop_l1(const torch::Tensor& a, const torch::Tensor& b) {
  auto fa = a.contiguous().to(torch::kFloat64);
  auto fb = b.contiguous().to(torch::kFloat64);
  const auto n = fa.size(0);
  const auto per = fa.numel() / n;
  const double* pa = fa.data_ptr<double>();
  const double* pb = fb.data_ptr<double>();
  double sum = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::int64_t k = 0; k < per; ++k) s += std::abs(pa[i * per + k] - pb[i * per + k]);
    sum += s / per;
  }
  return sum / n;
}

double loop_sq(const torch::Tensor& s, double target) {
  auto f = s.contiguous().to(torch::kFloat64).view(-1);
  double sum = 0.0;
  for (std::int64_t i = 0; i < f.numel(); ++i) sum += (f[i].item<double>() - target) * (f[i].item<double>() - target);
  return sum / f.numel();
}

}  // namespace

TEST_SUITE("losses") {
  TEST_CASE("cycle loss examples") {
    const auto x = torch::rand({2, 3, 4, 4}, torch::kFloat64);
    CHECK(val(cycle_loss(x, x, x, x)) == 0.0);
    CHECK(val(cycle_loss(t({0.2}).view({1, 1, 1, 1}), t({0.8}).view({1, 1, 1, 1}), t({0.5}).view({1, 1, 1, 1}),
                         t({0.8}).view({1, 1, 1, 1}))) == doctest::Approx(0.3).epsilon(1e-12));
    const auto xl = torch::zeros({2, 1, 2, 2}, torch::kFloat64);
    auto rl = xl.clone();
    rl[0].fill_(0.1);
    rl[1].fill_(-0.3);
    CHECK(val(cycle_loss(xl, xl, rl, xl)) == doctest::Approx(0.2).epsilon(1e-12));
    CHECK_THROWS_AS(cycle_loss(xl, xl, torch::zeros({2, 1, 2, 3}), xl), ShapeError);
  }

  TEST_CASE("adversarial loss examples") {
    CHECK(val(adversarial_generator_loss(torch::ones({2, 1, 3, 3}))) == 0.0);
    CHECK(val(adversarial_generator_loss(torch::zeros({2, 1, 3, 3}))) == 1.0);
    CHECK(val(adversarial_generator_loss(t({1.0, 0.5, 0.0, 0.5}).view({1, 1, 2, 2}))) ==
          doctest::Approx(0.375).epsilon(1e-12));
    CHECK_THROWS_AS(adversarial_generator_loss(torch::zeros({0, 1, 2, 2})), InputError);
  }

  TEST_CASE("identity loss examples") {
    const auto x = torch::rand({3, 3, 4, 4});
    CHECK(val(identity_loss(x, x, x, x)) == 0.0);
    const auto xl = t({0.1}).view({1, 1, 1, 1});
    const auto xh = t({0.9}).view({1, 1, 1, 1});
    CHECK(val(identity_loss(xl, xh, t({0.7}).view({1, 1, 1, 1}), t({0.1}).view({1, 1, 1, 1}))) ==
          doctest::Approx(0.2).epsilon(1e-12));
    // Swapping the two directions' residuals.
    const auto a = identity_loss(xl, xh, xh + 0.3, xl - 0.1);
    const auto b = identity_loss(xl, xh, xh + 0.1, xl - 0.3);
    CHECK(val(a) == doctest::Approx(val(b)).epsilon(1e-12));
  }

  TEST_CASE("total loss examples") {
    CHECK(total_generator_loss(0, 0, 0, 0, {3, 4}).total == 0.0);
    const auto r = total_generator_loss(0.3, 0.2, 1.0, 0.5, {10, 5});
    CHECK(r.total == doctest::Approx(13.0).epsilon(1e-12));
    CHECK(r.adv1 == 0.3);
    CHECK(r.cyc == 1.0);
    CHECK(total_generator_loss(0.3, 0.2, 1.0, 0.5, {0, 0}).total == doctest::Approx(0.5).epsilon(1e-12));
    CHECK_THROWS_AS(total_generator_loss(std::nan(""), 0, 0, 0, {}), DivergenceError);
    CHECK_THROWS_AS(total_generator_loss(0, 0, INFINITY, 0, {}), DivergenceError);
    CHECK_THROWS_AS(LossWeights({-1, 5}).validate(), ConfigError);
    const auto tensor_total = total_generator_loss(t({0.3}).sum(), t({0.2}).sum(), t({1.0}).sum(), t({0.5}).sum(),
                                                   LossWeights{10, 5});
    CHECK(val(tensor_total) == doctest::Approx(13.0).epsilon(1e-12));
  }

  TEST_CASE("discriminator loss examples") {
    CHECK(val(discriminator_loss(torch::ones({1, 1, 2, 2}), torch::zeros({1, 1, 2, 2}))) == 0.0);
    CHECK(val(discriminator_loss(torch::zeros({1, 1, 2, 2}), torch::ones({1, 1, 2, 2}))) == 1.0);
    CHECK(val(discriminator_loss(t({1, 0.5}).view({2, 1, 1, 1}), t({0.5, 0}).view({2, 1, 1, 1}))) ==
          doctest::Approx(0.125).epsilon(1e-12));
    CHECK_THROWS_AS(discriminator_loss(torch::zeros({0, 1, 2, 2}), torch::zeros({1, 1, 2, 2})), InputError);
  }

  TEST_CASE("brute-force agreement on random arrays") {
    torch::manual_seed(3);
    for (int trial = 0; trial < 20; ++trial) {
      const auto xl = torch::rand({3, 2, 3, 3}, torch::kFloat64) * 2 - 1;
      const auto xh = torch::rand({3, 2, 3, 3}, torch::kFloat64) * 2 - 1;
      const auto rl = torch::rand({3, 2, 3, 3}, torch::kFloat64) * 2 - 1;
      const auto rh = torch::rand({3, 2, 3, 3}, torch::kFloat64) * 2 - 1;
      const auto s1 = torch::randn({3, 1, 2, 2}, torch::kFloat64);
      const auto s2 = torch::randn({3, 1, 2, 2}, torch::kFloat64);
      CHECK(std::abs(val(cycle_loss(xl, xh, rl, rh)) - (loop_l1(rl, xl) + loop_l1(rh, xh))) <= 1e-12);
      CHECK(std::abs(val(identity_loss(xl, xh, rl, rh)) - (loop_l1(rl, xh) + loop_l1(rh, xl))) <= 1e-12);
      CHECK(std::abs(val(adversarial_generator_loss(s1)) - loop_sq(s1, 1.0)) <= 1e-12);
      CHECK(std::abs(val(discriminator_loss(s1, s2)) - 0.5 * (loop_sq(s1, 1.0) + loop_sq(s2, 0.0))) <= 1e-12);
    }
  }

  TEST_CASE("invariants") {
    torch::manual_seed(5);
    const auto xl = torch::rand({4, 3, 4, 4}, torch::kFloat64) * 2 - 1;
    const auto xh = torch::rand({4, 3, 4, 4}, torch::kFloat64) * 2 - 1;
    const auto rl = torch::rand({4, 3, 4, 4}, torch::kFloat64) * 2 - 1;
    const auto rh = torch::rand({4, 3, 4, 4}, torch::kFloat64) * 2 - 1;
    const auto s = torch::randn({4, 1, 3, 3}, torch::kFloat64);
    const auto g = torch::randn({4, 1, 3, 3}, torch::kFloat64);

    SUBCASE("non-negativity") {
      CHECK(val(cycle_loss(xl, xh, rl, rh)) >= 0);
      CHECK(val(identity_loss(xl, xh, rl, rh)) >= 0);
      CHECK(val(adversarial_generator_loss(s)) >= 0);
      CHECK(val(discriminator_loss(s, g)) >= 0);
    }
    SUBCASE("linearity in lambda") {
      const double cyc = 0.37;
      const double d = total_generator_loss(0.1, 0.2, cyc, 0.4, {3.5 + 2.0, 5}).total -
                       total_generator_loss(0.1, 0.2, cyc, 0.4, {3.5, 5}).total;
      CHECK(d == doctest::Approx(2.0 * cyc).epsilon(1e-12));
    }
    SUBCASE("batch mean equals the mean of per-example values") {
      double cyc = 0, ide = 0, adv = 0;
      for (int i = 0; i < 4; ++i) {
        auto one = [&](const torch::Tensor& x) { return x.slice(0, i, i + 1); };
        cyc += val(cycle_loss(one(xl), one(xh), one(rl), one(rh)));
        ide += val(identity_loss(one(xl), one(xh), one(rl), one(rh)));
        adv += val(adversarial_generator_loss(one(s)));
      }
      CHECK(std::abs(val(cycle_loss(xl, xh, rl, rh)) - cyc / 4) <= 1e-6);
      CHECK(std::abs(val(identity_loss(xl, xh, rl, rh)) - ide / 4) <= 1e-6);
      CHECK(std::abs(val(adversarial_generator_loss(s)) - adv / 4) <= 1e-6);
    }
    SUBCASE("minimizers") {
      CHECK(val(adversarial_generator_loss(torch::ones({2, 1, 2, 2}))) == 0.0);
      CHECK(val(adversarial_generator_loss(torch::full({2, 1, 2, 2}, 0.999))) > 0.0);
      CHECK(val(discriminator_loss(torch::ones({2, 1, 2, 2}), torch::zeros({2, 1, 2, 2}))) == 0.0);
      CHECK(val(discriminator_loss(torch::ones({2, 1, 2, 2}), torch::full({2, 1, 2, 2}, 1e-3))) > 0.0);
    }
  }

  TEST_CASE("gradients reach every input") {
    auto x = torch::rand({2, 3, 4, 4}, torch::TensorOptions().dtype(torch::kFloat64).requires_grad(true));
    auto y = torch::rand({2, 3, 4, 4}, torch::kFloat64);
    auto loss = cycle_loss(y, y, x, y) + identity_loss(y, y, x, y);
    loss.backward();
    CHECK(x.grad().abs().sum().item<double>() > 0);
  }
}
