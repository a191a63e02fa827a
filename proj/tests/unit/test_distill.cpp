#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "dkd/distill.hpp"
#include "dkd/grad_check.hpp"

using namespace dkd;

namespace {

Tensor<double> rows(std::size_t n, std::size_t c, std::vector<double> v) { return Tensor<double>(Shape{n, c}, std::move(v)); }

Tensor<double> random_logits(std::size_t n, std::size_t c, std::uint64_t seed, double spread) {
  Rng rng = make_rng({seed, 0x6c6f67});
  Tensor<double> t(Shape{n, c});
  for (auto& v : t.values()) v = uniform(rng, -spread, spread);
  return t;
}

}  // namespace

// Reference values below were computed with 30-digit arithmetic.
TEST(Soften, MatchesHighPrecisionValues) {
  const auto p = soften(rows(1, 3, {1, 2, 3}), 2.0);
  EXPECT_NEAR(p[0], 0.186323723225847577, 1e-15);
  EXPECT_NEAR(p[1], 0.307195885718498397, 1e-15);
  EXPECT_NEAR(p[2], 0.506480391055654026, 1e-15);
  EXPECT_THROW(soften(rows(1, 2, {0, 0}), 0.0), ContractError);
}

TEST(Soften, RowsSumToOneAndArgmaxIsStable) {
  const auto z = random_logits(16, 5, 3, 8.0);
  std::vector<std::size_t> argmax(16);
  for (std::size_t r = 0; r < 16; ++r) {
    argmax[r] = static_cast<std::size_t>(std::max_element(z.data() + r * 5, z.data() + r * 5 + 5) - (z.data() + r * 5));
  }
  for (double t : {0.5, 1.0, 2.0, 10.0, 40.0, 100.0}) {
    const auto p = soften(z, t);
    for (std::size_t r = 0; r < 16; ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < 5; ++c) total += p[r * 5 + c];
      EXPECT_NEAR(total, 1.0, 1e-6);
      const auto best = std::max_element(p.data() + r * 5, p.data() + r * 5 + 5) - (p.data() + r * 5);
      EXPECT_EQ(static_cast<std::size_t>(best), argmax[r]) << "T=" << t;
    }
  }
}

TEST(Soften, EntropyGrowsWithTemperature) {
  const auto z = random_logits(8, 4, 5, 6.0);
  double previous = -1.0;
  for (int i = 0; i < 20; ++i) {
    const double t = 0.5 + 5.0 * i;
    const double h = entropy(soften(z, t));
    EXPECT_GE(h, previous - 1e-12) << "T=" << t;
    previous = h;
  }
  EXPECT_LE(previous, std::log(4.0) + 1e-12);
}

TEST(SoftLoss, MatchesHighPrecisionValues) {
  const auto teacher = rows(1, 2, {2, 0});
  const auto student = rows(1, 2, {0, 0});
  EXPECT_NEAR(soft_loss(teacher, student, 1.0, SoftVariant::kl_divergence), 0.327813325472737701, 1e-14);
  EXPECT_NEAR(soft_loss(teacher, student, 1.0, SoftVariant::cross_entropy), 0.693147180559945309, 1e-14);
  EXPECT_NEAR(soft_loss(rows(1, 3, {3, 1, -2}), rows(1, 3, {0.5, 0, 1}), 4.0, SoftVariant::kl_divergence),
              0.137380032158256398, 1e-14);
}

TEST(SoftLoss, KlIsNonNegativeAndZeroAtIdenticalLogits) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto a = random_logits(4, 3, seed, 5.0);
    const auto b = random_logits(4, 3, seed + 100, 5.0);
    EXPECT_GE(soft_loss(a, b, 3.0, SoftVariant::kl_divergence), 0.0);
    EXPECT_NEAR(soft_loss(a, a, 3.0, SoftVariant::kl_divergence), 0.0, 1e-7);
  }
}

TEST(SoftLoss, KlAndCrossEntropyDifferByTeacherEntropy) {
  const auto t = random_logits(6, 3, 1, 4.0);
  const auto s = random_logits(6, 3, 2, 4.0);
  const double kl = soft_loss(t, s, 5.0, SoftVariant::kl_divergence);
  const double ce = soft_loss(t, s, 5.0, SoftVariant::cross_entropy);
  EXPECT_NEAR(ce - kl, entropy(soften(t, 5.0)), 1e-12);
}

TEST(SoftLoss, StudentGradientsAgreeAcrossVariants) {
  const auto t = random_logits(5, 3, 7, 4.0);
  const auto s = random_logits(5, 3, 8, 4.0);
  auto grad = [&](SoftVariant v) {
    Tape<double> tape;
    const auto z = tape.parameter(s);
    return tape.backward(soft_loss(t, z, 4.0, v))[z];
  };
  const auto g_kl = grad(SoftVariant::kl_divergence);
  const auto g_ce = grad(SoftVariant::cross_entropy);
  // Closed form: (q - p) / (T * N).
  const auto p = soften(t, 4.0), q = soften(s, 4.0);
  for (std::size_t i = 0; i < g_kl.size(); ++i) {
    EXPECT_NEAR(g_kl[i], g_ce[i], 1e-6);
    EXPECT_NEAR(g_kl[i], (q[i] - p[i]) / (4.0 * 5.0), 1e-12);
  }
}

TEST(SoftLoss, TSquaredScaling) {
  const auto t = random_logits(3, 3, 1, 3.0);
  const auto s = random_logits(3, 3, 2, 3.0);
  const double plain = soft_loss(t, s, 6.0, SoftVariant::kl_divergence);
  EXPECT_NEAR(soft_loss(t, s, 6.0, SoftVariant::kl_divergence, true), 36.0 * plain, 1e-12);
  EXPECT_THROW(soft_loss(t, random_logits(3, 4, 1, 1.0), 6.0, SoftVariant::kl_divergence), DimensionError);
}

TEST(HardLoss, MatchesHighPrecisionValues) {
  const auto z = rows(2, 3, {0.5, 0, 1, 3, 1, -2});
  const int labels[] = {2, 1};
  const double expected = (0.680269670641734576 + 2.13284523372757555) / 2.0;
  EXPECT_NEAR(hard_loss(softmax(z), std::span<const int>(labels)), expected, 1e-14);
  Tape<double> tape;
  EXPECT_NEAR(hard_loss_from_logits(tape.constant(z), std::span<const int>(labels)).value().item(), expected, 1e-14);
}

TEST(HardLoss, ClampAndFusedForms) {
  // p[label] underflows: the clamped form saturates at -log(1e-12).
  const auto z = rows(1, 2, {800, 0});
  const int label[] = {1};
  EXPECT_NEAR(hard_loss(softmax(z), std::span<const int>(label)), -std::log(1e-12), 1e-9);
  Tape<double> tape;
  const auto v = tape.parameter(z);
  const auto loss = hard_loss_from_logits(v, std::span<const int>(label));
  EXPECT_NEAR(loss.value().item(), 800.0, 1e-9);
  const auto g = tape.backward(loss)[v];
  EXPECT_NEAR(g[0], 1.0, 1e-12);
  EXPECT_NEAR(g[1], -1.0, 1e-12);
}

TEST(HardLoss, RejectsBadLabels) {
  const auto p = softmax(rows(2, 2, {0, 0, 1, 1}));
  const int short_labels[] = {0};
  const int out_of_range[] = {0, 2};
  EXPECT_THROW(hard_loss(p, std::span<const int>(short_labels)), ContractError);
  EXPECT_THROW(hard_loss(p, std::span<const int>(out_of_range)), ContractError);
  EXPECT_THROW(hard_loss(rows(1, 2, {0.7, 0.7}), std::span<const int>(short_labels)), ContractError);
}

TEST(TotalLoss, EndpointsAreExact) {
  Tape<double> tape;
  const auto hard = tape.constant(Tensor<double>::scalar(0.123456789));
  const auto soft = tape.constant(Tensor<double>::scalar(9.87654321));
  EXPECT_EQ(total_loss(hard, soft, 1.0).value().item(), 0.123456789);
  EXPECT_EQ(total_loss(hard, soft, 0.0).value().item(), 9.87654321);
  EXPECT_EQ(total_loss(0.123456789, 9.87654321, 1.0), 0.123456789);
  EXPECT_EQ(total_loss(0.123456789, 9.87654321, 0.0), 9.87654321);
  EXPECT_NEAR(total_loss(2.0, 4.0, 0.3), 0.3 * 2.0 + 0.7 * 4.0, 1e-15);
}

TEST(DistillConfig, Validation) {
  DistillConfig c;
  EXPECT_NO_THROW(c.validate());
  c.alpha = 1.2;
  EXPECT_THROW(c.validate(), ContractError);
  c.alpha = 0.5;
  c.temperature = -1.0;
  EXPECT_THROW(c.validate(), ContractError);
  EXPECT_EQ(soft_variant_from_string("kl"), SoftVariant::kl_divergence);
  EXPECT_THROW(soft_variant_from_string("js"), ContractError);
}

class LossGradients : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(LossGradients, HardSoftAndFused) {
  const auto seed = GetParam();
  const auto teacher = random_logits(4, 3, seed + 50, 3.0);
  const std::vector<int> labels = {0, 2, 1, 2};
  const ScalarFn<double> soft = [&](Tape<double>&, std::span<const Var<double>> in) {
    return soft_loss(teacher, in[0], 3.0, SoftVariant::kl_divergence);
  };
  const ScalarFn<double> hard = [&](Tape<double>&, std::span<const Var<double>> in) {
    return hard_loss(softmax(in[0]), std::span<const int>(labels));
  };
  const ScalarFn<double> fused = [&](Tape<double>&, std::span<const Var<double>> in) {
    return hard_loss_from_logits(in[0], std::span<const int>(labels));
  };
  const Tensor<double> in[] = {random_logits(4, 3, seed, 3.0)};
  EXPECT_LT(grad_check<double>(soft, in).max_rel_error, 1e-5);
  EXPECT_LT(grad_check<double>(hard, in).max_rel_error, 1e-5);
  EXPECT_LT(grad_check<double>(fused, in).max_rel_error, 1e-5);
}

INSTANTIATE_TEST_SUITE_P(Seeds, LossGradients, ::testing::Values(1u, 2u, 3u));
