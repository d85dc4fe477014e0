#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "stpgsr/autodiff.hpp"
#include "stpgsr/gradcheck.hpp"

using namespace stpgsr;
using namespace stpgsr::ad;

TEST(Autodiff, MatmulForwardAndBackward) {
  Tape t;
  Parameter a("a", {2, 2});
  a.value = {1, 2, 3, 4};
  Tensor b = t.constant({2, 1}, {5, 6});
  Tensor y = matmul(t.param(a), b);
  EXPECT_EQ(y.shape(), (Shape{2, 1}));
  EXPECT_DOUBLE_EQ(y(0, 0), 17.0);
  EXPECT_DOUBLE_EQ(y(1, 0), 39.0);
  t.backward(sum(y));
  EXPECT_EQ(a.grad, (std::vector<double>{5, 6, 5, 6}));
}

TEST(Autodiff, MatmulShapeMismatchThrows) {
  Tape t;
  Tensor a = t.constant({2, 3}, std::vector<double>(6, 1.0));
  Tensor b = t.constant({2, 3}, std::vector<double>(6, 1.0));
  EXPECT_THROW(matmul(a, b), ShapeError);
  EXPECT_THROW(add(a, transpose(b)), ShapeError);
}

TEST(Autodiff, ConstantSizeMismatchThrows) {
  Tape t;
  EXPECT_THROW(t.constant({2, 2}, {1.0, 2.0}), ShapeError);
}

TEST(Autodiff, ReluSubgradientAtZeroIsZero) {
  Tape t;
  Parameter x("x", {3, 1});
  x.value = {-1.0, 0.0, 2.0};
  Tensor y = relu(t.param(x));
  EXPECT_EQ(std::vector<double>(y.values().begin(), y.values().end()), (std::vector<double>{0.0, 0.0, 2.0}));
  t.backward(sum(y));
  EXPECT_EQ(x.grad, (std::vector<double>{0.0, 0.0, 1.0}));
}

TEST(Autodiff, BackwardTwiceAccumulatesParameterGradients) {
  Parameter x("x", {2, 1});
  x.value = {1.5, -2.0};
  Tape t;
  Tensor loss = sum(mul(t.param(x), t.param(x)));
  t.backward(loss);
  const std::vector<double> once = x.grad;
  t.backward(loss);
  for (std::size_t k = 0; k < once.size(); ++k) EXPECT_DOUBLE_EQ(x.grad[k], 2.0 * once[k]);
  EXPECT_DOUBLE_EQ(once[0], 3.0);
}

TEST(Autodiff, BackwardRejectsNonScalar) {
  Tape t;
  Tensor v = t.variable({2, 1}, {1.0, 2.0});
  EXPECT_THROW(t.backward(v), DomainError);
}

TEST(Autodiff, SegmentSoftmaxSumsToOnePerSegment) {
  Tape t;
  Segments seg({0, 1, 0, 2, 1, 0}, 3);
  Tensor y = segment_softmax(t.constant({6, 1}, {0.3, -2.0, 5.0, 1.0, 700.0, -1.0}), seg);
  std::vector<double> s(3, 0.0);
  for (std::size_t e = 0; e < 6; ++e) {
    EXPECT_TRUE(std::isfinite(y(e, 0)));
    s[seg.ids()[e]] += y(e, 0);
  }
  for (double v : s) EXPECT_NEAR(v, 1.0, 1e-15);
  EXPECT_DOUBLE_EQ(y(3, 0), 1.0);
}

TEST(Autodiff, EmptySegmentRejected) {
  EXPECT_THROW(Segments({0, 2}, 3), DomainError);
  EXPECT_THROW(Segments({0, 3}, 3), DomainError);
}

TEST(Autodiff, DropoutIdentityWhenDisabled) {
  Tape t;
  Tensor x = t.constant({3, 1}, {1.0, 2.0, 3.0});
  std::mt19937_64 rng(1);
  EXPECT_EQ(dropout(x, 0.5, false, rng).id(), x.id());
  EXPECT_EQ(dropout(x, 0.0, true, rng).id(), x.id());
  EXPECT_THROW(dropout(x, 1.0, true, rng), DomainError);
}

TEST(Autodiff, DropoutIsInverted) {
  Tape t;
  std::vector<double> ones(20000, 1.0);
  Tensor x = t.constant({ones.size(), 1}, ones);
  std::mt19937_64 rng(3);
  Tensor y = dropout(x, 0.2, true, rng);
  double s = 0.0;
  for (double v : y.values()) {
    EXPECT_TRUE(v == 0.0 || std::abs(v - 1.25) < 1e-15);
    s += v;
  }
  EXPECT_NEAR(s / static_cast<double>(ones.size()), 1.0, 0.02);
}

TEST(Autodiff, L1LossValueAndTieSubgradient) {
  Tape t;
  Parameter p("p", {3, 1});
  p.value = {1.0, 2.0, 3.0};
  Tensor loss = l1_loss(t.param(p), t.constant({3, 1}, {0.0, 2.0, 5.0}));
  EXPECT_DOUBLE_EQ(loss.item(), 1.0);
  t.backward(loss);
  EXPECT_DOUBLE_EQ(p.grad[0], 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(p.grad[1], 0.0);
  EXPECT_DOUBLE_EQ(p.grad[2], -1.0 / 3.0);
}

TEST(Autodiff, MinmaxScaleRangeAndConstantInput) {
  Tape t;
  Tensor y = minmax_scale(t.constant({2, 2}, {2.0, 4.0, 6.0, 3.0}));
  EXPECT_DOUBLE_EQ(y(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(y(1, 0), 1.0);
  EXPECT_DOUBLE_EQ(y(0, 1), 0.5);
  Tensor z = minmax_scale(t.variable({2, 1}, {7.0, 7.0}));
  EXPECT_DOUBLE_EQ(z(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(z(1, 0), 0.0);
}

TEST(Autodiff, FeatureMeanVar) {
  Tape t;
  auto mv = feature_mean_var(t.constant({3, 2}, {1.0, 0.0, 2.0, 0.0, 3.0, 6.0}));
  EXPECT_DOUBLE_EQ(mv.mean(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(mv.mean(0, 1), 2.0);
  EXPECT_NEAR(mv.var(0, 0), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(mv.var(0, 1), 8.0, 1e-15);
}

TEST(Autodiff, ScatterGatherAreAdjoint) {
  Tape t;
  const std::vector<std::uint32_t> idx{1, 1, 0};
  Tensor x = t.constant({3, 2}, {1, 2, 3, 4, 5, 6});
  Tensor s = scatter_add_rows(x, idx, 2);
  EXPECT_DOUBLE_EQ(s(0, 0), 5.0);
  EXPECT_DOUBLE_EQ(s(1, 0), 4.0);
  EXPECT_DOUBLE_EQ(s(1, 1), 6.0);
  Tensor g = gather_rows(s, idx);
  EXPECT_DOUBLE_EQ(g(2, 1), 6.0);
  EXPECT_THROW(gather_rows(s, std::vector<std::uint32_t>{2}), ValidationError);
}

TEST(Autodiff, GradCheckDetectsWrongGradient) {
  // an op whose recorded gradient is deliberately off by a factor of two
  auto broken = [](Tape& t, const Tensor& x) {
    auto v = x.values();
    const std::size_t ix = x.id();
    Tensor y = t.record({1, 1}, {v[0] * v[0]}, true, [ix](Tape& tp, std::size_t self) {
      tp.grad_sink(ix)[0] += 4.0 * tp.value(ix)[0] * tp.grad(self)[0];
    });
    return y;
  };
  auto res = grad_check(broken, Shape{1, 1}, {0.7});
  EXPECT_GT(res.max_rel_error, 0.5);
}

class OpGradient : public ::testing::TestWithParam<std::size_t> {};

TEST_P(OpGradient, MatchesCentralDifferences) {
  const auto cases = gradcheck::op_cases();
  const auto& c = cases.at(GetParam());
  const auto res = c.run();
  EXPECT_LT(res.max_rel_error, c.threshold) << c.name << " worst coordinate " << res.worst_index;
  EXPECT_GT(res.coordinates, 0u);
}

INSTANTIATE_TEST_SUITE_P(AllOps, OpGradient, ::testing::Range<std::size_t>(0, gradcheck::op_cases().size()),
                         [](const ::testing::TestParamInfo<std::size_t>& info) {
                           return gradcheck::op_cases().at(info.param).name;
                         });
