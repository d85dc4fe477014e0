#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <vector>

#include "stpgsr/layers.hpp"

using namespace stpgsr;

namespace {

std::vector<double> uniform(std::size_t n, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

/// Arc weights A(dst, src) for the complete digraph from a dense n x n matrix.
std::vector<double> arc_weights(const MessageGraph& g, const std::vector<double>& a) {
  std::vector<double> w;
  for (auto off : g.weight_offsets()) w.push_back(a[off]);
  return w;
}

} // namespace

TEST(MessageGraph, SortedByDestinationWithCompactSegments) {
  MessageGraph g(4, {{2, 1}, {0, 3}, {1, 0}, {0, 1}});
  EXPECT_EQ(std::vector<std::uint32_t>(g.dst().begin(), g.dst().end()), (std::vector<std::uint32_t>{0, 1, 1, 3}));
  EXPECT_EQ(std::vector<std::uint32_t>(g.src().begin(), g.src().end()), (std::vector<std::uint32_t>{1, 0, 2, 0}));
  EXPECT_EQ(g.segments().count(), 3u);
  EXPECT_THROW(MessageGraph(2, {{0, 2}}), ValidationError);
}

TEST(MessageGraph, CompleteAndDualSizes) {
  EXPECT_EQ(MessageGraph::complete(5).arc_count(), 20u);
  const auto dual = build_dual_complete(6);
  EXPECT_EQ(MessageGraph::from_dual(dual).arc_count(), 2 * dual.edge_count());
}

TEST(GtLayer, TwoNodeHandComputed) {
  GtLayer p("gt", 1, 1, 1, 1, 0.0);
  p.w_skip[0].value = {0.5};
  p.w_value[0].value = {2.0};
  p.w_query[0].value = {1.0};
  p.w_key[0].value = {-1.0};
  p.w_edge[0].value = {3.0};
  p.w_out.value = {1.5};
  MessageGraph g(2, {{0, 1}, {1, 0}});
  ad::Tape t;
  ad::Tensor x = t.constant({2, 1}, {1.0, 4.0});
  ad::Tensor w = t.constant({2, 1}, {0.25, 0.25});
  std::mt19937_64 rng(0);
  ad::Tensor y = gt_layer_forward(p, x, g, w, false, rng);
  // single incoming arc per node, so attention is exactly 1
  EXPECT_DOUBLE_EQ(y(0, 0), 1.5 * (0.5 * 1.0 + 2.0 * 4.0 + 3.0 * 0.25));
  EXPECT_DOUBLE_EQ(y(1, 0), 1.5 * (0.5 * 4.0 + 2.0 * 1.0 + 3.0 * 0.25));
}

TEST(GtLayer, AttentionSumsToOnePerReceivingNode) {
  std::mt19937_64 rng(4);
  GtLayer p("gt", 3, 5, 4, 2, 0.0);
  p.init(rng);
  const std::size_t n = 6;
  auto g = MessageGraph::complete(n);
  ad::Tape t;
  ad::Tensor x = t.constant({n, 5}, uniform(n * 5, -1, 1, rng));
  ad::Tensor w = t.constant({g.arc_count(), 1}, uniform(g.arc_count(), 0, 1, rng));
  AttentionTrace trace;
  (void)gt_layer_forward(p, x, g, w, false, rng, &trace);
  ASSERT_EQ(trace.alpha.size(), 3u);
  for (const auto& a : trace.alpha) {
    std::vector<double> s(n, 0.0);
    for (std::size_t e = 0; e < g.arc_count(); ++e) {
      EXPECT_GT(a(e, 0), 0.0);
      s[g.dst()[e]] += a(e, 0);
    }
    for (double v : s) EXPECT_NEAR(v, 1.0, 1e-12);
  }
}

TEST(GtLayer, IsolatedNodeKeepsRootTerm) {
  std::mt19937_64 rng(5);
  GtLayer p("gt", 2, 2, 3, 2, 0.0);
  p.init(rng);
  MessageGraph g(3, {{0, 1}});
  ad::Tape t;
  const auto xv = uniform(6, -1, 1, rng);
  ad::Tensor x = t.constant({3, 2}, xv);
  ad::Tensor y = gt_layer_forward(p, x, g, t.constant({1, 1}, {0.7}), false, rng);
  // node 2 receives nothing: W0 . concat_h(x_2 W1_h)
  std::vector<double> cat;
  for (std::size_t h = 0; h < 2; ++h)
    for (std::size_t c = 0; c < 3; ++c)
      cat.push_back(xv[4] * p.w_skip[h].value[0 * 3 + c] + xv[5] * p.w_skip[h].value[1 * 3 + c]);
  for (std::size_t o = 0; o < 2; ++o) {
    double expected = 0.0;
    for (std::size_t k = 0; k < 6; ++k) expected += cat[k] * p.w_out.value[k * 2 + o];
    EXPECT_NEAR(y(2, o), expected, 1e-14);
  }
  for (std::size_t k = 0; k < 6; ++k) EXPECT_TRUE(std::isfinite(y.values()[k]));
}

TEST(GtLayer, RejectsShapeMismatch) {
  GtLayer p("gt", 1, 3, 2, 2, 0.0);
  auto g = MessageGraph::complete(3);
  ad::Tape t;
  std::mt19937_64 rng(0);
  EXPECT_THROW(gt_layer_forward(p, t.constant({3, 2}, std::vector<double>(6)), g,
                                t.constant({6, 1}, std::vector<double>(6)), false, rng),
               ShapeError);
  EXPECT_THROW(gt_layer_forward(p, t.constant({3, 3}, std::vector<double>(9)), g,
                                t.constant({5, 1}, std::vector<double>(5)), false, rng),
               ShapeError);
  EXPECT_THROW(GtLayer("bad", 0, 1, 1, 1, 0.0), ShapeError);
}

TEST(GraphNorm, DefaultParametersStandardise) {
  GraphNorm gn("gn", 2);
  ad::Tape t;
  ad::Tensor y = graph_norm(gn, t.constant({4, 2}, {1, 10, 2, 20, 3, 30, 4, 40}));
  for (std::size_t c = 0; c < 2; ++c) {
    double m = 0.0, v = 0.0;
    for (std::size_t r = 0; r < 4; ++r) m += y(r, c) / 4.0;
    for (std::size_t r = 0; r < 4; ++r) v += (y(r, c) - m) * (y(r, c) - m) / 4.0;
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v, 1.0, 1e-4);
  }
}

TEST(GraphNorm, VarianceOfShiftedFeatures) {
  GraphNorm gn("gn", 1);
  gn.alpha.value = {0.0};
  ad::Tape t;
  ad::Tensor y = graph_norm(gn, t.constant({2, 1}, {3.0, 4.0}));
  // alpha = 0: no centring, variance is the mean square 12.5
  EXPECT_NEAR(y(0, 0), 3.0 / std::sqrt(12.5 + GraphNorm::eps), 1e-15);
  EXPECT_NEAR(y(1, 0), 4.0 / std::sqrt(12.5 + GraphNorm::eps), 1e-15);
}

TEST(Gtb, PermutationEquivariant) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 3 + rng() % 6, d = 1 + rng() % 4;
    Gtb block("gtb", 1 + rng() % 3, d, 1 + rng() % 3, 1 + rng() % 4, 0.3);
    block.init(rng);
    const auto xv = uniform(n * d, -1, 1, rng);
    auto a = uniform(n * n, 0, 1, rng);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> xp(n * d), ap(n * n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < d; ++c) xp[perm[i] * d + c] = xv[i * d + c];
      for (std::size_t j = 0; j < n; ++j) ap[perm[i] * n + perm[j]] = a[i * n + j];
    }
    auto g = MessageGraph::complete(n);
    ad::Tape t;
    std::mt19937_64 r0(0);
    ad::Tensor y = block.forward(t.constant({n, d}, xv), g, t.constant({g.arc_count(), 1}, arc_weights(g, a)), false, r0);
    ad::Tensor yp = block.forward(t.constant({n, d}, xp), g, t.constant({g.arc_count(), 1}, arc_weights(g, ap)), false, r0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < y.cols(); ++c) ASSERT_NEAR(yp(perm[i], c), y(i, c), 1e-9);
  }
}

TEST(Gtb, OutputIsNonnegative) {
  std::mt19937_64 rng(9);
  Gtb block("gtb", 2, 3, 2, 4, 0.2);
  block.init(rng);
  auto g = MessageGraph::complete(5);
  ad::Tape t;
  ad::Tensor y = block.forward(t.constant({5, 3}, uniform(15, -2, 2, rng)), g,
                               t.constant({20, 1}, uniform(20, 0, 1, rng)), true, rng);
  for (double v : y.values()) EXPECT_GE(v, 0.0);
}
