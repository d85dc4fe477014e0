#include <gtest/gtest.h>

#include <algorithm>
#include <chrono>
#include <random>
#include <set>
#include <vector>

#include "stpgsr/graph.hpp"

using namespace stpgsr;

namespace {

std::vector<NodePair> sorted(std::vector<NodePair> v) {
  std::sort(v.begin(), v.end());
  return v;
}

std::vector<NodePair> to_vec(std::span<const NodePair> s) { return {s.begin(), s.end()}; }

/// Random simple graph on n nodes, each pair present with probability 1/2.
std::vector<NodePair> random_simple_graph(std::size_t n, std::mt19937_64& rng) {
  std::vector<NodePair> e;
  for (std::uint32_t i = 0; i < n; ++i)
    for (std::uint32_t j = i + 1; j < n; ++j)
      if (rng() & 1u) e.emplace_back(i, j);
  return e;
}

Connectome random_connectome(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(0.0, 1.0);
  Connectome c(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      // a mix of exact zeros, tiny and ordinary weights
      const auto r = rng() % 4;
      c.set(i, j, r == 0 ? 0.0 : (r == 1 ? d(rng) * 1e-300 : d(rng) * 1e3));
    }
  return c;
}

} // namespace

TEST(Connectome, FromDenseValidates) {
  EXPECT_THROW(Connectome::from_dense(2, {0, 1, 1}), ShapeError);
  EXPECT_THROW(Connectome::from_dense(2, {1, 1, 1, 0}), ValidationError);
  EXPECT_THROW(Connectome::from_dense(2, {0, -1, -1, 0}), ValidationError);
  EXPECT_THROW(Connectome::from_dense(2, {0, 1, 2, 0}), ValidationError);
  EXPECT_THROW(Connectome::from_dense(2, {0, std::nan(""), std::nan(""), 0}), ValidationError);
  auto c = Connectome::from_dense(2, {0, 1.0, 1.0 + 1e-13, 0}, 1e-12);
  EXPECT_EQ(c(0, 1), c(1, 0));
}

TEST(Connectome, SetKeepsInvariants) {
  Connectome c(3);
  c.set(0, 2, 0.5);
  EXPECT_EQ(c(2, 0), 0.5);
  EXPECT_THROW(c.set(1, 1, 0.5), ValidationError);
  EXPECT_THROW(c.set(0, 1, -0.1), ValidationError);
}

TEST(DualIndex, ExhaustiveBijection) {
  for (std::size_t n = 2; n <= 50; ++n) {
    std::size_t expected = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) ASSERT_EQ(dual_index(i, j, n), expected++) << n;
    EXPECT_EQ(expected, pair_count(n));
  }
}

TEST(DualIndex, RejectsInvalidPairs) {
  EXPECT_THROW(dual_index(2, 2, 5), DomainError);
  EXPECT_THROW(dual_index(3, 1, 5), DomainError);
  EXPECT_THROW(dual_index(1, 5, 5), DomainError);
}

TEST(Vectorize, RoundTripIsIdentity) {
  std::mt19937_64 rng(11);
  for (std::size_t n = 0; n <= 64; ++n) {
    for (int rep = 0; rep < 3; ++rep) {
      const Connectome c = random_connectome(n, rng);
      const auto v = upper_tri_vectorize(c);
      ASSERT_EQ(v.size(), pair_count(n));
      ASSERT_TRUE(devectorize(v, n) == c) << "n=" << n;
    }
  }
}

TEST(Vectorize, DevectorizeValidates) {
  EXPECT_THROW(devectorize(std::vector<double>{1.0, 2.0}, 3), ShapeError);
  EXPECT_THROW(devectorize(std::vector<double>{1.0, -2.0, 0.0}, 3), ValidationError);
}

TEST(Vectorize, OffsetsPointIntoUpperTriangle) {
  const auto off = upper_tri_offsets(4);
  EXPECT_EQ(off, (std::vector<std::uint32_t>{1, 2, 3, 6, 7, 11}));
}

TEST(DualComplete, MatchesBruteForceOracle) {
  for (std::size_t n = 2; n <= 7; ++n) {
    const auto dual = build_dual_complete(n);
    const auto edges = complete_graph_edges(n);
    EXPECT_EQ(to_vec(dual.primal_edges()), edges);
    EXPECT_EQ(sorted(to_vec(dual.dual_edges())), sorted(line_graph_bruteforce(edges))) << "n=" << n;
  }
}

TEST(DualComplete, ClosedForms) {
  for (std::size_t n = 2; n <= 30; ++n) {
    const auto dual = build_dual_complete(n);
    EXPECT_EQ(dual.node_count(), n * (n - 1) / 2);
    EXPECT_EQ(dual.edge_count(), n * (n - 1) * (n - 2) / 2);
    for (auto d : dual.degrees()) ASSERT_EQ(d, 2 * (n - 2));
    for (std::size_t r = 0; r < dual.node_count(); ++r) {
      const auto [i, j] = dual.edge_of(r);
      ASSERT_EQ(dual_index(i, j, n), r);
      ASSERT_EQ(dual.index_of(j, i), r);
    }
  }
  EXPECT_THROW(build_dual_complete(1), DomainError);
}

TEST(DualComplete, LargeInstanceWithinBudget) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto dual = build_dual_complete(268);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_EQ(dual.node_count(), 35778u);
  const auto deg = dual.degrees();
  EXPECT_TRUE(std::all_of(deg.begin(), deg.end(), [](std::size_t d) { return d == 532; }));
  EXPECT_NEAR(dual.density(), 532.0 / 35777.0, 1e-15);
  EXPECT_LT(dual.density(), 0.03);
  EXPECT_LT(dual.memory_bytes(), 200u * 1024 * 1024);
  EXPECT_LT(secs, 5.0);
}

TEST(DualUndirected, MatchesBruteForceOnRandomGraphs) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng() % 6;
    const auto edges = random_simple_graph(n, rng);
    const auto dual = build_dual_undirected(n, edges);
    // sorted input keeps dual indices aligned with the oracle
    ASSERT_EQ(to_vec(dual.primal_edges()), edges);
    ASSERT_EQ(sorted(to_vec(dual.dual_edges())), sorted(line_graph_bruteforce(edges))) << "trial " << trial;
  }
}

TEST(DualUndirected, RejectsNonSimpleInput) {
  EXPECT_THROW(build_dual_undirected(3, {{0, 0}}), ValidationError);
  EXPECT_THROW(build_dual_undirected(3, {{0, 1}, {1, 0}}), ValidationError);
  EXPECT_THROW(build_dual_undirected(3, {{0, 3}}), ValidationError);
}

TEST(DualDirected, MatchesBruteForceOnRandomDigraphs) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng() % 5;
    std::vector<NodePair> arcs;
    for (std::uint32_t i = 0; i < n; ++i)
      for (std::uint32_t j = 0; j < n; ++j)
        if (i != j && (rng() % 3 == 0)) arcs.emplace_back(i, j);
    std::shuffle(arcs.begin(), arcs.end(), rng);
    const auto dual = build_dual_directed(arcs);
    ASSERT_EQ(dual.arcs, arcs);
    ASSERT_EQ(sorted(dual.dual_edges), sorted(line_graph_bruteforce(arcs))) << "trial " << trial;
  }
}

TEST(DualDirected, CompleteDigraphNodeCount) {
  for (std::size_t n : {3u, 5u, 10u}) {
    const auto arcs = complete_digraph_arcs(n);
    const auto dual = build_dual_directed(arcs);
    EXPECT_EQ(dual.node_count(), n * (n - 1));
    EXPECT_EQ(sorted(dual.dual_edges), sorted(line_graph_bruteforce(arcs)));
  }
}

TEST(DualDirected, RejectsSelfLoopsAndDuplicates) {
  EXPECT_THROW(build_dual_directed({{1, 1}}), ValidationError);
  EXPECT_THROW(build_dual_directed({{0, 1}, {0, 1}}), ValidationError);
}
