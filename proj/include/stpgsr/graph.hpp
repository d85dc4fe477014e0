#pragma once

// Primal connectomes and their dual (line) graphs.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "stpgsr/error.hpp"

namespace stpgsr {

/// Symmetric, zero-diagonal, nonnegative weighted adjacency matrix (row-major).
class Connectome {
public:
  Connectome() = default;

  /// Zero matrix on n nodes.
  explicit Connectome(std::size_t n) : n_(n), w_(n * n, 0.0) {}

  /// Validates and wraps a dense row-major matrix. Pairs whose asymmetry is at
  /// most `symmetry_tol` are averaged so the stored matrix is exactly symmetric.
  static Connectome from_dense(std::size_t n, std::vector<double> values, double symmetry_tol = 0.0) {
    if (values.size() != n * n) {
      throw ShapeError("connectome: expected " + std::to_string(n * n) + " values, got " +
                       std::to_string(values.size()));
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (values[i * n + i] != 0.0) {
        throw ValidationError("connectome: nonzero diagonal at (" + std::to_string(i) + "," + std::to_string(i) + ")");
      }
      for (std::size_t j = 0; j < n; ++j) {
        const double v = values[i * n + j];
        if (!std::isfinite(v) || v < 0.0) {
          throw ValidationError("connectome: invalid weight at (" + std::to_string(i) + "," + std::to_string(j) + ")");
        }
      }
      for (std::size_t j = i + 1; j < n; ++j) {
        double& a = values[i * n + j];
        double& b = values[j * n + i];
        if (a == b) continue;
        if (std::abs(a - b) > symmetry_tol) {
          throw ValidationError("connectome: asymmetric at (" + std::to_string(i) + "," + std::to_string(j) + ")");
        }
        a = b = 0.5 * (a + b);
      }
    }
    Connectome c;
    c.n_ = n;
    c.w_ = std::move(values);
    return c;
  }

  [[nodiscard]] std::size_t size() const noexcept { return n_; }
  [[nodiscard]] double operator()(std::size_t i, std::size_t j) const { return w_[i * n_ + j]; }
  [[nodiscard]] std::span<const double> data() const noexcept { return w_; }

  /// Sets w(i,j) and w(j,i); i != j.
  void set(std::size_t i, std::size_t j, double v) {
    if (i == j) throw ValidationError("connectome: diagonal must stay zero");
    if (!(v >= 0.0) || !std::isfinite(v)) throw ValidationError("connectome: weights must be finite and nonnegative");
    w_[i * n_ + j] = v;
    w_[j * n_ + i] = v;
  }

  friend bool operator==(const Connectome&, const Connectome&) = default;

private:
  std::size_t n_ = 0;
  std::vector<double> w_;
};

/// Number of unordered node pairs, n(n-1)/2.
constexpr std::size_t pair_count(std::size_t n) noexcept { return n < 2 ? 0 : n * (n - 1) / 2; }

/// Row-major position of the pair (i, j), i < j, among all pairs of n nodes.
inline std::size_t dual_index(std::size_t i, std::size_t j, std::size_t n) {
  if (!(i < j && j < n)) {
    throw DomainError("dual_index: need 0 <= i < j < n, got (" + std::to_string(i) + "," + std::to_string(j) +
                      ") with n=" + std::to_string(n));
  }
  return i * n - i * (i + 1) / 2 + (j - i - 1);
}

/// Upper triangle (i < j) in row-major pair order.
inline std::vector<double> upper_tri_vectorize(const Connectome& c) {
  const std::size_t n = c.size();
  std::vector<double> v;
  v.reserve(pair_count(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) v.push_back(c(i, j));
  return v;
}

/// Flat row-major offsets i*n + j of the upper-triangle pairs, in vectorization order.
inline std::vector<std::uint32_t> upper_tri_offsets(std::size_t n) {
  std::vector<std::uint32_t> idx;
  idx.reserve(pair_count(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) idx.push_back(static_cast<std::uint32_t>(i * n + j));
  return idx;
}

/// Inverse of upper_tri_vectorize: reflects v into a symmetric zero-diagonal matrix.
inline Connectome devectorize(std::span<const double> v, std::size_t n) {
  if (v.size() != pair_count(n)) {
    throw ShapeError("devectorize: length " + std::to_string(v.size()) + " does not match n=" + std::to_string(n));
  }
  std::vector<double> w(n * n, 0.0);
  std::size_t r = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j, ++r) w[i * n + j] = w[j * n + i] = v[r];
  return Connectome::from_dense(n, std::move(w));
}

using NodePair = std::pair<std::uint32_t, std::uint32_t>;

/// Line graph of an undirected simple graph. Dual node r is primal edge edge_of(r);
/// dual edges are unordered pairs (r, c) with r < c, each listed once.
class DualTopology {
public:
  DualTopology() = default;
  DualTopology(std::size_t n_primal, std::vector<NodePair> edge_of, std::vector<NodePair> dual_edges)
      : n_primal_(n_primal), edge_of_(std::move(edge_of)), dual_edges_(std::move(dual_edges)) {}

  [[nodiscard]] std::size_t n_primal() const noexcept { return n_primal_; }
  [[nodiscard]] std::size_t node_count() const noexcept { return edge_of_.size(); }
  [[nodiscard]] std::size_t edge_count() const noexcept { return dual_edges_.size(); }
  [[nodiscard]] std::span<const NodePair> dual_edges() const noexcept { return dual_edges_; }
  [[nodiscard]] std::span<const NodePair> primal_edges() const noexcept { return edge_of_; }

  [[nodiscard]] NodePair edge_of(std::size_t r) const { return edge_of_.at(r); }

  /// Dual node of primal edge (i, j) (either orientation). edge_of_ is sorted.
  [[nodiscard]] std::size_t index_of(std::size_t i, std::size_t j) const {
    if (i > j) std::swap(i, j);
    const NodePair key{static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j)};
    auto it = std::lower_bound(edge_of_.begin(), edge_of_.end(), key);
    if (it == edge_of_.end() || *it != key) {
      throw DomainError("index_of: (" + std::to_string(i) + "," + std::to_string(j) + ") is not a primal edge");
    }
    return static_cast<std::size_t>(it - edge_of_.begin());
  }

  /// Degree of every dual node.
  [[nodiscard]] std::vector<std::size_t> degrees() const {
    std::vector<std::size_t> deg(node_count(), 0);
    for (auto [r, c] : dual_edges_) {
      ++deg[r];
      ++deg[c];
    }
    return deg;
  }

  /// Fraction of nonzero off-diagonal entries in the dual adjacency.
  [[nodiscard]] double density() const noexcept {
    const double m = static_cast<double>(node_count());
    return m < 2 ? 0.0 : 2.0 * static_cast<double>(edge_count()) / (m * (m - 1.0));
  }

  /// Heap bytes held by the edge lists.
  [[nodiscard]] std::size_t memory_bytes() const noexcept {
    return (edge_of_.capacity() + dual_edges_.capacity()) * sizeof(NodePair);
  }

private:
  std::size_t n_primal_ = 0;
  std::vector<NodePair> edge_of_;
  std::vector<NodePair> dual_edges_;
};

namespace detail {

inline void check_simple_undirected(std::size_t n, std::vector<NodePair>& edges) {
  for (auto& [a, b] : edges) {
    if (a == b) throw ValidationError("self-loop at node " + std::to_string(a));
    if (a >= n || b >= n) throw ValidationError("edge endpoint out of range");
    if (a > b) std::swap(a, b);
  }
  std::sort(edges.begin(), edges.end());
  if (std::adjacent_find(edges.begin(), edges.end()) != edges.end()) {
    throw ValidationError("duplicate edge in primal graph");
  }
}

} // namespace detail

/// Dual of an arbitrary undirected simple graph: dual nodes adjacent iff the
/// primal edges share an endpoint. Runs in O(sum of squared degrees).
inline DualTopology build_dual_undirected(std::size_t n, std::vector<NodePair> edges) {
  detail::check_simple_undirected(n, edges);
  std::vector<std::vector<std::uint32_t>> incident(n);
  for (std::size_t r = 0; r < edges.size(); ++r) {
    incident[edges[r].first].push_back(static_cast<std::uint32_t>(r));
    incident[edges[r].second].push_back(static_cast<std::uint32_t>(r));
  }
  // Distinct simple edges share at most one endpoint, so each dual edge is found once.
  std::vector<NodePair> dual;
  for (const auto& inc : incident)
    for (std::size_t a = 0; a < inc.size(); ++a)
      for (std::size_t b = a + 1; b < inc.size(); ++b) dual.emplace_back(std::min(inc[a], inc[b]), std::max(inc[a], inc[b]));
  return DualTopology(n, std::move(edges), std::move(dual));
}

/// Dual of the complete graph K_n. Dual node r is the pair with dual_index r;
/// every dual node has degree 2(n-2). O(n^3) time, edge-list storage only.
inline DualTopology build_dual_complete(std::size_t n) {
  if (n < 2) throw DomainError("build_dual_complete: need n >= 2, got " + std::to_string(n));
  std::vector<NodePair> edge_of;
  edge_of.reserve(pair_count(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) edge_of.emplace_back(static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j));

  std::vector<NodePair> dual;
  dual.reserve(n * (n - 1) * (n >= 2 ? n - 2 : 0) / 2);
  std::vector<std::uint32_t> inc(n > 0 ? n - 1 : 0);
  for (std::size_t v = 0; v < n; ++v) {
    // dual nodes incident to v, in increasing index order
    std::size_t k = 0;
    for (std::size_t u = 0; u < n; ++u) {
      if (u == v) continue;
      inc[k++] = static_cast<std::uint32_t>(u < v ? dual_index(u, v, n) : dual_index(v, u, n));
    }
    for (std::size_t a = 0; a < inc.size(); ++a)
      for (std::size_t b = a + 1; b < inc.size(); ++b) dual.emplace_back(inc[a], inc[b]);
  }
  return DualTopology(n, std::move(edge_of), std::move(dual));
}

/// Line graph of a directed simple graph.
struct DirectedDual {
  std::vector<NodePair> arcs;       ///< dual node r is arcs[r]
  std::vector<NodePair> dual_edges; ///< (r, c), r < c, listed once

  [[nodiscard]] std::size_t node_count() const noexcept { return arcs.size(); }
  [[nodiscard]] std::size_t edge_count() const noexcept { return dual_edges.size(); }
};

/// Dual nodes are arcs; two arcs are adjacent iff they share at least one
/// endpoint. Arcs keep their input order as dual indices.
inline DirectedDual build_dual_directed(std::vector<NodePair> arcs) {
  std::uint32_t n = 0;
  for (auto [a, b] : arcs) {
    if (a == b) throw ValidationError("build_dual_directed: self-loop at node " + std::to_string(a));
    n = std::max({n, a + 1, b + 1});
  }
  {
    auto sorted = arcs;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw ValidationError("build_dual_directed: duplicate arc");
    }
  }
  std::vector<std::vector<std::uint32_t>> incident(n);
  for (std::size_t r = 0; r < arcs.size(); ++r) {
    incident[arcs[r].first].push_back(static_cast<std::uint32_t>(r));
    incident[arcs[r].second].push_back(static_cast<std::uint32_t>(r));
  }
  std::vector<NodePair> dual;
  for (std::uint32_t v = 0; v < n; ++v) {
    const auto& inc = incident[v];
    for (std::size_t a = 0; a < inc.size(); ++a)
      for (std::size_t b = a + 1; b < inc.size(); ++b) {
        const auto [p, q] = arcs[inc[a]];
        const auto [s, t] = arcs[inc[b]];
        // An antiparallel pair shares two endpoints; emit it only at the smaller one.
        std::uint32_t shared_min = v;
        for (std::uint32_t x : {p, q})
          if (x == s || x == t) shared_min = std::min(shared_min, x);
        if (shared_min != v) continue;
        dual.emplace_back(std::min(inc[a], inc[b]), std::max(inc[a], inc[b]));
      }
  }
  return DirectedDual{std::move(arcs), std::move(dual)};
}

/// Reference line graph by pairwise endpoint comparison, O(m^2). Returns (r, c)
/// with r < c indexing into `edges` as given.
inline std::vector<NodePair> line_graph_bruteforce(std::span<const NodePair> edges) {
  std::vector<NodePair> out;
  for (std::size_t r = 0; r < edges.size(); ++r)
    for (std::size_t c = r + 1; c < edges.size(); ++c) {
      const auto [i, j] = edges[r];
      const auto [k, l] = edges[c];
      if (i == k || i == l || j == k || j == l) out.emplace_back(static_cast<std::uint32_t>(r), static_cast<std::uint32_t>(c));
    }
  return out;
}

/// All pairs i < j of K_n in row-major order.
inline std::vector<NodePair> complete_graph_edges(std::size_t n) {
  std::vector<NodePair> e;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) e.emplace_back(static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j));
  return e;
}

/// All ordered pairs i != j, the complete digraph on n nodes.
inline std::vector<NodePair> complete_digraph_arcs(std::size_t n) {
  std::vector<NodePair> e;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) e.emplace_back(static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j));
  return e;
}

} // namespace stpgsr
