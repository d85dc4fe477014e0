#pragma once

// Weighted-graph topology measures used to score predicted connectomes.
//
// Path-based measures use length 1/w on edges with w >= absent_weight;
// lighter edges are treated as missing.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <queue>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "stpgsr/error.hpp"
#include "stpgsr/graph.hpp"

namespace stpgsr::topo {

inline constexpr double absent_weight = 1e-12;
inline constexpr double infinity = std::numeric_limits<double>::infinity();

inline bool has_edge(double w) noexcept { return w >= absent_weight; }

/// Node strength normalised by n - 1.
inline std::vector<double> degree_centrality(const Connectome& w) {
  const std::size_t n = w.size();
  if (n < 2) throw DomainError("degree_centrality: need n >= 2");
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += w(i, j);
    out[i] = s / static_cast<double>(n - 1);
  }
  return out;
}

namespace detail {

struct SourceSweep {
  std::vector<double> dist;
  std::vector<double> sigma;                   ///< shortest-path counts
  std::vector<std::vector<std::uint32_t>> pred; ///< shortest-path DAG predecessors
  std::vector<std::uint32_t> order;            ///< settled nodes, nondecreasing distance
};

/// Dijkstra from `s` with lengths 1/w, tracking path counts and predecessors.
inline SourceSweep dijkstra(const Connectome& w, std::size_t s, bool track_paths) {
  const std::size_t n = w.size();
  SourceSweep r;
  r.dist.assign(n, infinity);
  if (track_paths) {
    r.sigma.assign(n, 0.0);
    r.pred.assign(n, {});
  }
  std::vector<char> done(n, 0);
  using Item = std::pair<double, std::uint32_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
  r.dist[s] = 0.0;
  if (track_paths) r.sigma[s] = 1.0;
  heap.emplace(0.0, static_cast<std::uint32_t>(s));
  while (!heap.empty()) {
    const auto [d, u] = heap.top();
    heap.pop();
    if (done[u] || d > r.dist[u]) continue;
    done[u] = 1;
    r.order.push_back(u);
    for (std::size_t v = 0; v < n; ++v) {
      const double wv = w(u, v);
      if (v == u || !has_edge(wv) || done[v]) continue;
      const double nd = d + 1.0 / wv;
      if (nd < r.dist[v]) {
        r.dist[v] = nd;
        heap.emplace(nd, static_cast<std::uint32_t>(v));
        if (track_paths) {
          r.sigma[v] = r.sigma[u];
          r.pred[v].assign(1, u);
        }
      } else if (track_paths && nd == r.dist[v]) {
        r.sigma[v] += r.sigma[u];
        r.pred[v].push_back(u);
      }
    }
  }
  return r;
}

} // namespace detail

/// All-pairs shortest path lengths (row-major n x n); +inf when unreachable.
inline std::vector<double> shortest_path_matrix(const Connectome& w) {
  const std::size_t n = w.size();
  std::vector<double> d(n * n);
  for (std::size_t s = 0; s < n; ++s) {
    auto sweep = detail::dijkstra(w, s, false);
    std::copy(sweep.dist.begin(), sweep.dist.end(), d.begin() + static_cast<std::ptrdiff_t>(s * n));
  }
  return d;
}

/// Brandes dependency accumulation over weighted shortest-path DAGs,
/// normalised by (n-1)(n-2)/2 for undirected pairs.
inline std::vector<double> betweenness_centrality(const Connectome& w) {
  const std::size_t n = w.size();
  if (n < 3) throw DomainError("betweenness_centrality: need n >= 3");
  std::vector<double> bc(n, 0.0);
  std::vector<double> delta(n);
  for (std::size_t s = 0; s < n; ++s) {
    auto sw = detail::dijkstra(w, s, true);
    std::fill(delta.begin(), delta.end(), 0.0);
    for (auto it = sw.order.rbegin(); it != sw.order.rend(); ++it) {
      const std::uint32_t v = *it;
      for (std::uint32_t u : sw.pred[v]) delta[u] += sw.sigma[u] / sw.sigma[v] * (1.0 + delta[v]);
      if (v != s) bc[v] += delta[v];
    }
  }
  // every unordered pair was counted from both ends
  const double norm = static_cast<double>((n - 1) * (n - 2)) / 2.0;
  for (auto& b : bc) b = b / 2.0 / norm;
  return bc;
}

/// (r / sum_d) * (r / (n-1)) where r counts reachable nodes; isolated nodes get 0.
inline std::vector<double> closeness_centrality(const Connectome& w) {
  const std::size_t n = w.size();
  std::vector<double> out(n, 0.0);
  if (n < 2) return out;
  for (std::size_t s = 0; s < n; ++s) {
    auto sw = detail::dijkstra(w, s, false);
    double total = 0.0;
    std::size_t reach = 0;
    for (std::size_t t = 0; t < n; ++t) {
      if (t == s || !std::isfinite(sw.dist[t])) continue;
      total += sw.dist[t];
      ++reach;
    }
    if (reach > 0 && total > 0.0) {
      const double r = static_cast<double>(reach);
      out[s] = (r / total) * (r / static_cast<double>(n - 1));
    }
  }
  return out;
}

class EigenConvergenceError : public std::runtime_error {
public:
  EigenConvergenceError(const std::string& msg, std::vector<double> iterate)
      : std::runtime_error(msg), iterate_(std::move(iterate)) {}
  [[nodiscard]] const std::vector<double>& iterate() const noexcept { return iterate_; }

private:
  std::vector<double> iterate_;
};

struct EigenResult {
  std::vector<double> vector; ///< unit L2 norm, nonnegative
  double eigenvalue = 0.0;    ///< Rayleigh quotient v^T W v
  std::size_t iterations = 0;
};

/// Dominant eigenvector by power iteration on W + I (the shift keeps bipartite
/// graphs from oscillating without changing the eigenvectors).
inline EigenResult eigenvector_decomposition(const Connectome& w, double tol = 1e-10, std::size_t max_iter = 1000) {
  const std::size_t n = w.size();
  if (n == 0 || std::all_of(w.data().begin(), w.data().end(), [](double v) { return v == 0.0; })) {
    throw DomainError("eigenvector_centrality: zero matrix");
  }
  std::vector<double> v(n, 1.0 / std::sqrt(static_cast<double>(n)));
  std::vector<double> next(n);
  for (std::size_t it = 1; it <= max_iter; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = v[i];
      for (std::size_t j = 0; j < n; ++j) s += w(i, j) * v[j];
      next[i] = s;
    }
    double norm = 0.0;
    for (double x : next) norm += x * x;
    norm = std::sqrt(norm);
    double change = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      next[i] /= norm;
      change = std::max(change, std::abs(next[i] - v[i]));
    }
    v.swap(next);
    if (change < tol) {
      double rq = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) rq += v[i] * w(i, j) * v[j];
      return {v, rq, it};
    }
  }
  throw EigenConvergenceError("eigenvector_centrality: no convergence in " + std::to_string(max_iter) + " iterations",
                              v);
}

inline std::vector<double> eigenvector_centrality(const Connectome& w) { return eigenvector_decomposition(w).vector; }

/// Onnela weighted clustering with weights scaled by the maximum weight.
inline std::vector<double> clustering_coefficient(const Connectome& w) {
  const std::size_t n = w.size();
  std::vector<double> out(n, 0.0);
  double wmax = 0.0;
  for (double x : w.data()) wmax = std::max(wmax, x);
  if (wmax < absent_weight) return out;
  std::vector<double> root(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j && has_edge(w(i, j))) root[i * n + j] = std::cbrt(w(i, j) / wmax);
  std::vector<std::uint32_t> nbr;
  for (std::size_t i = 0; i < n; ++i) {
    nbr.clear();
    for (std::size_t j = 0; j < n; ++j)
      if (root[i * n + j] > 0.0) nbr.push_back(static_cast<std::uint32_t>(j));
    const std::size_t k = nbr.size();
    if (k < 2) continue;
    double s = 0.0;
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = a + 1; b < k; ++b)
        s += root[i * n + nbr[a]] * root[i * n + nbr[b]] * root[nbr[a] * n + nbr[b]];
    // ordered pairs (j, h) count each triangle twice
    out[i] = 2.0 * s / static_cast<double>(k * (k - 1));
  }
  return out;
}

struct Partition {
  std::vector<std::uint32_t> community; ///< node -> community id in [0, count)
  std::size_t count = 0;
};

/// Weighted Newman modularity at resolution 1.
inline double modularity(const Connectome& w, const Partition& p) {
  const std::size_t n = w.size();
  std::vector<double> k(n, 0.0);
  double two_m = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) k[i] += w(i, j);
  for (double x : k) two_m += x;
  if (two_m == 0.0) return 0.0;
  double q = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (p.community[i] == p.community[j]) q += w(i, j) - k[i] * k[j] / two_m;
  return q / two_m;
}

namespace detail {

/// Relabels communities 0.. in order of first appearance.
/// SplitMix64 finaliser.
constexpr std::uint64_t mix(std::uint64_t z) noexcept {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline Partition canonical(const std::vector<std::uint32_t>& raw) {
  std::map<std::uint32_t, std::uint32_t> relabel;
  Partition p;
  p.community.reserve(raw.size());
  for (auto c : raw) {
    auto [it, inserted] = relabel.emplace(c, static_cast<std::uint32_t>(relabel.size()));
    p.community.push_back(it->second);
  }
  p.count = relabel.size();
  return p;
}

} // namespace detail

/// Louvain-style greedy modularity maximisation: local moving in a seeded node
/// order until no move improves modularity, then community aggregation,
/// repeated until a level makes no move.
inline Partition detect_communities(const Connectome& w, std::uint64_t seed) {
  const std::size_t n0 = w.size();
  // current level: dense symmetric weight matrix between super-nodes
  std::size_t n = n0;
  std::vector<double> adj(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) adj[i * n + j] = has_edge(w(i, j)) ? w(i, j) : 0.0;
  std::vector<std::uint32_t> membership(n0);
  std::iota(membership.begin(), membership.end(), 0u);
  // Visit order: seeded hash of each node's strength, with the weights summed in
  // sorted order. A super-node takes the smallest key of its members. The order
  // does not depend on node labels.
  std::vector<std::uint64_t> node_key(n0);
  {
    std::vector<double> row(n0);
    for (std::size_t i = 0; i < n0; ++i) {
      for (std::size_t j = 0; j < n0; ++j) row[j] = adj[i * n0 + j];
      std::sort(row.begin(), row.end());
      const double strength = std::accumulate(row.begin(), row.end(), 0.0);
      node_key[i] = detail::mix(seed ^ std::bit_cast<std::uint64_t>(strength));
    }
  }

  while (true) {
    std::vector<double> k(n, 0.0);
    double two_m = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) k[i] += adj[i * n + j];
      two_m += k[i];
    }
    if (two_m == 0.0) break;
    std::vector<std::uint32_t> comm(n);
    std::iota(comm.begin(), comm.end(), 0u);
    std::vector<double> tot(k);
    std::vector<std::uint64_t> key(n, UINT64_MAX);
    for (std::size_t i = 0; i < n0; ++i) key[membership[i]] = std::min(key[membership[i]], node_key[i]);
    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) { return key[a] < key[b]; });

    bool moved_any = false;
    std::vector<double> link(n, 0.0);
    std::vector<std::uint32_t> touched;
    for (bool moved = true; moved;) {
      moved = false;
      for (std::uint32_t i : order) {
        const std::uint32_t own = comm[i];
        touched.clear();
        for (std::size_t j = 0; j < n; ++j) {
          if (j == i || adj[i * n + j] == 0.0) continue;
          if (link[comm[j]] == 0.0) touched.push_back(comm[j]);
          link[comm[j]] += adj[i * n + j];
        }
        tot[own] -= k[i];
        // gain of joining C (up to a positive factor): link(i, C) - tot(C) k_i / 2m
        double best_gain = link[own] - tot[own] * k[i] / two_m;
        std::uint32_t best = own;
        std::sort(touched.begin(), touched.end());
        for (std::uint32_t c : touched) {
          const double gain = link[c] - tot[c] * k[i] / two_m;
          if (gain > best_gain + 1e-12 * two_m) {
            best_gain = gain;
            best = c;
          }
        }
        tot[best] += k[i];
        comm[i] = best;
        for (std::uint32_t c : touched) link[c] = 0.0;
        link[own] = 0.0;
        if (best != own) moved = moved_any = true;
      }
    }
    if (!moved_any) break;

    Partition level = detail::canonical(comm);
    for (auto& m : membership) m = level.community[m];
    const std::size_t nc = level.count;
    std::vector<double> agg(nc * nc, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) agg[level.community[i] * nc + level.community[j]] += adj[i * n + j];
    adj.swap(agg);
    n = nc;
  }
  return detail::canonical(membership);
}

/// 1 - sum_m (kappa_im / s_i)^2; zero for nodes without strength.
inline std::vector<double> participation_coefficient(const Connectome& w, const Partition& p) {
  const std::size_t n = w.size();
  if (p.community.size() != n) throw ShapeError("participation_coefficient: partition size mismatch");
  std::vector<double> out(n, 0.0);
  std::vector<double> kappa(p.count);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(kappa.begin(), kappa.end(), 0.0);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (p.community[j] >= p.count) throw ValidationError("participation_coefficient: community id out of range");
      kappa[p.community[j]] += w(i, j);
      s += w(i, j);
    }
    if (s <= 0.0) continue;
    double sq = 0.0;
    for (double km : kappa) sq += (km / s) * (km / s);
    out[i] = 1.0 - sq;
  }
  return out;
}

/// Mean finite shortest-path length over ordered pairs i != j.
inline double characteristic_path_length(const Connectome& w) {
  const std::size_t n = w.size();
  auto d = shortest_path_matrix(w);
  double s = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j && std::isfinite(d[i * n + j])) {
        s += d[i * n + j];
        ++count;
      }
  return count == 0 ? 0.0 : s / static_cast<double>(count);
}

inline bool is_connected(const Connectome& w) {
  const std::size_t n = w.size();
  if (n == 0) return true;
  std::vector<char> seen(n, 0);
  std::vector<std::size_t> stack{0};
  seen[0] = 1;
  std::size_t count = 1;
  while (!stack.empty()) {
    const std::size_t u = stack.back();
    stack.pop_back();
    for (std::size_t v = 0; v < n; ++v)
      if (!seen[v] && has_edge(w(u, v))) {
        seen[v] = 1;
        ++count;
        stack.push_back(v);
      }
  }
  return count == n;
}

inline double mean(std::span<const double> v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// Number of weight-shuffled surrogates in the small-worldness null model.
inline constexpr std::size_t surrogate_count = 10;

/// sigma = (C / C_rand) / (L / L_rand). Surrogates permute the upper-triangle
/// weights uniformly over all node pairs, starting from the sorted weights so
/// the surrogates do not depend on node labels.
inline double small_worldness(const Connectome& w, std::uint64_t seed) {
  const std::size_t n = w.size();
  if (n < 3) throw DomainError("small_worldness: need n >= 3");
  if (!is_connected(w)) throw DomainError("small_worldness: graph is disconnected");
  const double c = mean(clustering_coefficient(w));
  const double l = characteristic_path_length(w);
  std::mt19937_64 rng(seed);
  auto weights = upper_tri_vectorize(w);
  std::sort(weights.begin(), weights.end());
  double c_rand = 0.0, l_rand = 0.0;
  for (std::size_t r = 0; r < surrogate_count; ++r) {
    std::shuffle(weights.begin(), weights.end(), rng);
    Connectome surrogate = devectorize(weights, n);
    c_rand += mean(clustering_coefficient(surrogate));
    l_rand += characteristic_path_length(surrogate);
  }
  c_rand /= static_cast<double>(surrogate_count);
  l_rand /= static_cast<double>(surrogate_count);
  if (c_rand == 0.0 || l_rand == 0.0) throw DomainError("small_worldness: degenerate null model (C_rand or L_rand is 0)");
  return (c / c_rand) / (l / l_rand);
}

/// Mean absolute difference over the upper triangle.
inline double edge_mae(const Connectome& a, const Connectome& b) {
  if (a.size() != b.size()) throw ShapeError("edge_mae: sizes " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
  const std::size_t n = a.size();
  if (n < 2) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) s += std::abs(a(i, j) - b(i, j));
  return s / static_cast<double>(pair_count(n));
}

inline double metric_mae(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("metric_mae: lengths differ");
  if (a.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

/// Names of the eight reported measures, in report order.
inline const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names{"mae",         "degree",        "betweenness", "closeness",
                                              "eigenvector", "participation", "clustering",  "small_worldness"};
  return names;
}

/// One measure's outcome for one sample.
struct MetricValue {
  std::optional<double> mae;             ///< null when the measure failed on either graph
  std::optional<double> graph_mean_diff; ///< |mean(pred) - mean(true)|
  std::string error;
};

struct SampleMetrics {
  std::string id;
  std::map<std::string, MetricValue> values;
};

/// All eight measures of a prediction against its ground truth. Failures are
/// recorded per measure and never abort the sample.
inline SampleMetrics evaluate_sample(const Connectome& pred, const Connectome& truth, std::uint64_t seed,
                                     std::string id = {}) {
  if (pred.size() != truth.size()) throw ShapeError("evaluate_sample: size mismatch");
  SampleMetrics out;
  out.id = std::move(id);

  auto vector_measure = [&](const std::string& name, const std::function<std::vector<double>(const Connectome&)>& f) {
    MetricValue mv;
    try {
      auto a = f(pred);
      auto b = f(truth);
      mv.mae = metric_mae(a, b);
      mv.graph_mean_diff = std::abs(mean(a) - mean(b));
    } catch (const std::exception& e) {
      mv.error = e.what();
    }
    out.values[name] = std::move(mv);
  };

  {
    MetricValue mv;
    mv.mae = edge_mae(pred, truth);
    mv.graph_mean_diff = mv.mae;
    out.values["mae"] = mv;
  }
  vector_measure("degree", degree_centrality);
  vector_measure("betweenness", betweenness_centrality);
  vector_measure("closeness", closeness_centrality);
  vector_measure("eigenvector", eigenvector_centrality);
  vector_measure("participation",
                 [&](const Connectome& g) { return participation_coefficient(g, detect_communities(g, seed)); });
  vector_measure("clustering", clustering_coefficient);
  {
    MetricValue mv;
    try {
      const double d = std::abs(small_worldness(pred, seed) - small_worldness(truth, seed));
      mv.mae = d;
      mv.graph_mean_diff = d;
    } catch (const std::exception& e) {
      mv.error = e.what();
    }
    out.values["small_worldness"] = std::move(mv);
  }
  return out;
}

/// Per-sample results for one model and fold plus per-measure means.
struct MetricsReport {
  std::string model;
  int fold = -1; ///< -1 for an aggregate over folds
  std::vector<SampleMetrics> per_sample;
  std::map<std::string, std::optional<double>> aggregate;

  /// Mean of the non-null per-sample values for each measure.
  void compute_aggregate() {
    aggregate.clear();
    for (const auto& name : metric_names()) {
      double s = 0.0;
      std::size_t count = 0;
      for (const auto& sm : per_sample) {
        auto it = sm.values.find(name);
        if (it != sm.values.end() && it->second.mae) {
          s += *it->second.mae;
          ++count;
        }
      }
      aggregate[name] = count == 0 ? std::nullopt : std::optional<double>(s / static_cast<double>(count));
    }
  }
};

} // namespace stpgsr::topo
