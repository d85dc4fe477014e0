#pragma once

// Graph transformer layer, GraphNorm and the block (layer -> norm -> ReLU).

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "stpgsr/autodiff.hpp"
#include "stpgsr/graph.hpp"

namespace stpgsr {

/// Directed message-passing structure: arc e carries a message src[e] -> dst[e].
/// Arcs are sorted by (dst, src). Softmax segments cover only nodes with at
/// least one incoming arc.
class MessageGraph {
public:
  MessageGraph() = default;

  MessageGraph(std::size_t node_count, std::vector<NodePair> arcs) : n_(node_count) {
    for (auto [s, d] : arcs) {
      if (s >= n_ || d >= n_) throw ValidationError("message graph: arc endpoint out of range");
    }
    std::sort(arcs.begin(), arcs.end(), [](const NodePair& a, const NodePair& b) {
      return a.second != b.second ? a.second < b.second : a.first < b.first;
    });
    src_.reserve(arcs.size());
    dst_.reserve(arcs.size());
    for (auto [s, d] : arcs) {
      src_.push_back(s);
      dst_.push_back(d);
    }
    std::vector<std::uint32_t> compact(n_, UINT32_MAX);
    std::vector<std::uint32_t> seg_ids;
    seg_ids.reserve(dst_.size());
    std::uint32_t next = 0;
    for (auto d : dst_) {
      if (compact[d] == UINT32_MAX) compact[d] = next++;
      seg_ids.push_back(compact[d]);
    }
    segments_ = ad::Segments(std::move(seg_ids), next);
  }

  /// Complete digraph: every ordered pair (j -> i), i != j.
  static MessageGraph complete(std::size_t n) { return MessageGraph(n, complete_digraph_arcs(n)); }

  /// Both directions of every dual edge.
  static MessageGraph from_dual(const DualTopology& dual) {
    std::vector<NodePair> arcs;
    arcs.reserve(2 * dual.edge_count());
    for (auto [r, c] : dual.dual_edges()) {
      arcs.emplace_back(r, c);
      arcs.emplace_back(c, r);
    }
    return MessageGraph(dual.node_count(), std::move(arcs));
  }

  [[nodiscard]] std::size_t node_count() const noexcept { return n_; }
  [[nodiscard]] std::size_t arc_count() const noexcept { return src_.size(); }
  [[nodiscard]] std::span<const std::uint32_t> src() const noexcept { return src_; }
  [[nodiscard]] std::span<const std::uint32_t> dst() const noexcept { return dst_; }
  [[nodiscard]] const ad::Segments& segments() const noexcept { return segments_; }

  /// Row-major offsets dst*n + src, i.e. where A(dst, src) sits in an n x n matrix.
  [[nodiscard]] std::vector<std::uint32_t> weight_offsets() const {
    std::vector<std::uint32_t> off(src_.size());
    for (std::size_t e = 0; e < src_.size(); ++e) off[e] = static_cast<std::uint32_t>(dst_[e] * n_ + src_[e]);
    return off;
  }

private:
  std::size_t n_ = 0;
  std::vector<std::uint32_t> src_;
  std::vector<std::uint32_t> dst_;
  ad::Segments segments_;
};

/// Uniform fan-based (Glorot) initialisation.
template <class Rng>
void glorot_uniform(ad::Parameter& p, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-a, a);
  for (auto& v : p.value) v = dist(rng);
}

/// Multi-head graph transformer layer. Weight matrices are stored input-major
/// (d_in x d_h) and applied as X . W.
struct GtLayer {
  std::size_t heads = 1;
  std::size_t d_in = 1;
  std::size_t d_head = 1;
  std::size_t d_out = 1;
  double dropout_p = 0.0;

  std::vector<ad::Parameter> w_skip;  ///< W1 per head: root term
  std::vector<ad::Parameter> w_value; ///< W2 per head: neighbour message
  std::vector<ad::Parameter> w_query; ///< W3 per head
  std::vector<ad::Parameter> w_key;   ///< W4 per head
  std::vector<ad::Parameter> w_edge;  ///< W6 per head, 1 x d_h, scaled by the edge weight
  ad::Parameter w_out;                ///< W0: (H*d_h) x d_out

  GtLayer() = default;

  GtLayer(const std::string& name, std::size_t heads_, std::size_t d_in_, std::size_t d_head_, std::size_t d_out_,
          double dropout)
      : heads(heads_), d_in(d_in_), d_head(d_head_), d_out(d_out_), dropout_p(dropout) {
    if (heads == 0 || d_in == 0 || d_head == 0 || d_out == 0) throw ShapeError("gt layer: zero dimension");
    for (std::size_t h = 0; h < heads; ++h) {
      const std::string hp = name + ".head" + std::to_string(h);
      w_skip.emplace_back(hp + ".w1", ad::Shape{d_in, d_head});
      w_value.emplace_back(hp + ".w2", ad::Shape{d_in, d_head});
      w_query.emplace_back(hp + ".w3", ad::Shape{d_in, d_head});
      w_key.emplace_back(hp + ".w4", ad::Shape{d_in, d_head});
      w_edge.emplace_back(hp + ".w6", ad::Shape{1, d_head});
    }
    w_out = ad::Parameter(name + ".w0", ad::Shape{heads * d_head, d_out});
  }

  template <class Rng>
  void init(Rng& rng) {
    for (std::size_t h = 0; h < heads; ++h) {
      glorot_uniform(w_skip[h], d_in, d_head, rng);
      glorot_uniform(w_value[h], d_in, d_head, rng);
      glorot_uniform(w_query[h], d_in, d_head, rng);
      glorot_uniform(w_key[h], d_in, d_head, rng);
      glorot_uniform(w_edge[h], 1, d_head, rng);
    }
    glorot_uniform(w_out, heads * d_head, d_out, rng);
  }

  void collect(std::vector<ad::Parameter*>& out) {
    for (std::size_t h = 0; h < heads; ++h) {
      out.push_back(&w_skip[h]);
      out.push_back(&w_value[h]);
      out.push_back(&w_query[h]);
      out.push_back(&w_key[h]);
      out.push_back(&w_edge[h]);
    }
    out.push_back(&w_out);
  }
};

/// Per-graph feature normalisation with learnable mean shift (alpha), gain and bias.
struct GraphNorm {
  static constexpr double eps = 1e-5;

  ad::Parameter alpha;
  ad::Parameter gamma;
  ad::Parameter beta;

  GraphNorm() = default;
  GraphNorm(const std::string& name, std::size_t d)
      : alpha(name + ".alpha", {1, d}), gamma(name + ".gamma", {1, d}), beta(name + ".beta", {1, d}) {
    reset();
  }

  void reset() {
    std::fill(alpha.value.begin(), alpha.value.end(), 1.0);
    std::fill(gamma.value.begin(), gamma.value.end(), 1.0);
    std::fill(beta.value.begin(), beta.value.end(), 0.0);
  }

  void collect(std::vector<ad::Parameter*>& out) {
    out.push_back(&alpha);
    out.push_back(&gamma);
    out.push_back(&beta);
  }
};

/// Optional per-head attention coefficients captured during a forward pass.
struct AttentionTrace {
  std::vector<ad::Tensor> alpha; ///< one [E x 1] tensor per head, before dropout
};

/// One graph transformer layer over `graph`. `arc_weight` is [E x 1] holding
/// the scalar edge weight A(dst, src) of every arc in graph order.
template <class Rng>
ad::Tensor gt_layer_forward(GtLayer& p, const ad::Tensor& x, const MessageGraph& graph, const ad::Tensor& arc_weight,
                            bool training, Rng& rng, AttentionTrace* trace = nullptr) {
  ad::Tape& tape = x.tape();
  const std::size_t n = graph.node_count();
  if (x.shape() != ad::Shape{n, p.d_in}) {
    throw ShapeError("gt layer: features " + ad::to_string(x.shape()) + " for " + std::to_string(n) + " nodes, d_in=" +
                     std::to_string(p.d_in));
  }
  if (arc_weight.shape() != ad::Shape{graph.arc_count(), 1}) {
    throw ShapeError("gt layer: arc weights " + ad::to_string(arc_weight.shape()) + " for " +
                     std::to_string(graph.arc_count()) + " arcs");
  }
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(p.d_head));
  std::vector<ad::Tensor> head_out;
  head_out.reserve(p.heads);
  for (std::size_t h = 0; h < p.heads; ++h) {
    ad::Tensor root = ad::matmul(x, tape.param(p.w_skip[h]));
    if (graph.arc_count() == 0) {
      head_out.push_back(root);
      continue;
    }
    ad::Tensor edge_term = ad::matmul(arc_weight, tape.param(p.w_edge[h])); // [E x d_h]
    ad::Tensor q = ad::gather_rows(ad::matmul(x, tape.param(p.w_query[h])), graph.dst());
    ad::Tensor k = ad::add(ad::gather_rows(ad::matmul(x, tape.param(p.w_key[h])), graph.src()), edge_term);
    ad::Tensor v = ad::add(ad::gather_rows(ad::matmul(x, tape.param(p.w_value[h])), graph.src()), edge_term);
    ad::Tensor logits = ad::scale(ad::row_dot(q, k), inv_sqrt_d);
    ad::Tensor alpha = ad::segment_softmax(logits, graph.segments());
    if (trace) trace->alpha.push_back(alpha);
    alpha = ad::dropout(alpha, p.dropout_p, training, rng);
    ad::Tensor agg = ad::scatter_add_rows(ad::scale_rows(v, alpha), graph.dst(), n);
    head_out.push_back(ad::add(root, agg));
  }
  ad::Tensor cat = p.heads == 1 ? head_out[0] : ad::concat_features(head_out);
  return ad::matmul(cat, tape.param(p.w_out));
}

/// gamma * (x - alpha*mu) / sqrt(var + eps) + beta, statistics per feature over
/// the nodes of the graph; var is taken of the shifted features.
inline ad::Tensor graph_norm(GraphNorm& p, const ad::Tensor& x) {
  ad::Tape& tape = x.tape();
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  if (n == 0) throw DomainError("graph_norm: empty graph");
  if (p.alpha.shape.cols != d) throw ShapeError("graph_norm: feature width " + std::to_string(d) + " mismatch");
  ad::Tensor mu = ad::col_mean(x);
  ad::Tensor shifted = ad::sub(x, ad::repeat_rows(ad::mul(tape.param(p.alpha), mu), n));
  ad::Tensor var = ad::col_mean(ad::mul(shifted, shifted));
  ad::Tensor inv_std = ad::repeat_rows(ad::rsqrt(var, GraphNorm::eps), n);
  ad::Tensor scaled = ad::mul(ad::mul(shifted, inv_std), ad::repeat_rows(tape.param(p.gamma), n));
  return ad::add(scaled, ad::repeat_rows(tape.param(p.beta), n));
}

/// Graph transformer block: relu(graph_norm(gt_layer(x))).
struct Gtb {
  GtLayer layer;
  GraphNorm norm;

  Gtb() = default;
  Gtb(const std::string& name, std::size_t heads, std::size_t d_in, std::size_t d_head, std::size_t d_out, double dropout)
      : layer(name, heads, d_in, d_head, d_out, dropout), norm(name + ".norm", d_out) {}

  template <class Rng>
  void init(Rng& rng) {
    layer.init(rng);
    norm.reset();
  }

  void collect(std::vector<ad::Parameter*>& out) {
    layer.collect(out);
    norm.collect(out);
  }

  template <class Rng>
  ad::Tensor forward(const ad::Tensor& x, const MessageGraph& graph, const ad::Tensor& arc_weight, bool training,
                     Rng& rng, AttentionTrace* trace = nullptr) {
    return ad::relu(graph_norm(norm, gt_layer_forward(layer, x, graph, arc_weight, training, rng, trace)));
  }
};

} // namespace stpgsr
