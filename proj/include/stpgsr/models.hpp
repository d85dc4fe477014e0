#pragma once

// Super-resolution models mapping an n_s-node connectome to an n_t-node one.

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "stpgsr/autodiff.hpp"
#include "stpgsr/graph.hpp"
#include "stpgsr/layers.hpp"

namespace stpgsr {

using Rng = std::mt19937_64;

enum class ModelKind { stp_gsr, direct_sr, autoencoder };

inline std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::stp_gsr: return "stp_gsr";
    case ModelKind::direct_sr: return "direct_sr";
    case ModelKind::autoencoder: return "autoencoder";
  }
  return "?";
}

inline ModelKind parse_model_kind(std::string_view s) {
  if (s == "stp_gsr") return ModelKind::stp_gsr;
  if (s == "direct_sr") return ModelKind::direct_sr;
  if (s == "autoencoder") return ModelKind::autoencoder;
  throw ValidationError("unknown model kind '" + std::string(s) + "'");
}

/// Differentiable reflection of an upper-triangle vector [m x 1] into [n x n].
inline ad::Tensor devectorize(const ad::Tensor& v, std::size_t n) {
  const std::size_t m = pair_count(n);
  if (v.shape() != ad::Shape{m, 1}) {
    throw ShapeError("devectorize: " + ad::to_string(v.shape()) + " for n=" + std::to_string(n));
  }
  auto vv = v.values();
  std::vector<double> out(n * n, 0.0);
  std::size_t r = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j, ++r) out[i * n + j] = out[j * n + i] = vv[r];
  const std::size_t iv = v.id();
  return v.tape().record({n, n}, std::move(out), v.requires_grad(), [=](ad::Tape& t, std::size_t self) {
    auto g = t.grad(self);
    double* gv = t.grad_sink(iv);
    std::size_t r = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j, ++r) gv[r] += g[i * n + j] + g[j * n + i];
  });
}

/// Min-max scaled Gram matrix of node embeddings: minmax(Z^T Z).
inline ad::Tensor gram_minmax(const ad::Tensor& z) { return ad::minmax_scale(ad::matmul(ad::transpose(z), z)); }

inline ad::Tensor connectome_tensor(ad::Tape& tape, const Connectome& c) {
  return tape.constant({c.size(), c.size()}, std::vector<double>(c.data().begin(), c.data().end()));
}

inline ad::Tensor upper_tri_tensor(ad::Tape& tape, const Connectome& c) {
  const std::size_t m = pair_count(c.size());
  return tape.constant({m, 1}, upper_tri_vectorize(c));
}

/// Dual of K_n with its message graph, built once per n and shared read-only.
struct DualCacheEntry {
  DualTopology topology;
  MessageGraph graph;
};

inline std::shared_ptr<const DualCacheEntry> shared_complete_dual(std::size_t n) {
  static std::mutex mutex;
  static std::map<std::size_t, std::shared_ptr<const DualCacheEntry>> cache;
  std::lock_guard lock(mutex);
  auto& slot = cache[n];
  if (!slot) {
    DualTopology topo = build_dual_complete(n);
    MessageGraph graph = MessageGraph::from_dual(topo);
    slot = std::make_shared<const DualCacheEntry>(DualCacheEntry{std::move(topo), std::move(graph)});
  }
  return slot;
}

/// Upper-triangle predictions; the loss only ever sees the upper triangle.
struct Prediction {
  ad::Tensor hr;                ///< [n_t(n_t-1)/2 x 1]
  std::optional<ad::Tensor> lr; ///< autoencoder reconstruction, [n_s(n_s-1)/2 x 1]
};

/// Work counters of the most recent forward pass.
struct ForwardCounters {
  std::size_t dual_rows = 0;
  std::size_t dual_arcs = 0;
};

class SrModel {
public:
  SrModel(std::size_t n_s, std::size_t n_t) : n_s_(n_s), n_t_(n_t) {
    if (n_s < 2 || n_t < 2) throw DomainError("model: need at least two nodes per resolution");
    lr_graph_ = std::make_shared<const MessageGraph>(MessageGraph::complete(n_s));
    lr_weight_offsets_ = lr_graph_->weight_offsets();
    hr_upper_offsets_ = upper_tri_offsets(n_t);
  }
  virtual ~SrModel() = default;
  SrModel(const SrModel&) = delete;
  SrModel& operator=(const SrModel&) = delete;

  [[nodiscard]] virtual ModelKind kind() const = 0;
  virtual Prediction forward(ad::Tape& tape, const Connectome& lr, bool training, Rng& rng) = 0;
  virtual void collect(std::vector<ad::Parameter*>& out) = 0;
  virtual void init(Rng& rng) = 0;

  /// L1 on the HR upper triangle; the autoencoder adds the LR reconstruction term.
  virtual ad::Tensor loss(const Prediction& pred, [[maybe_unused]] const Connectome& lr, const Connectome& hr) {
    ad::Tape& tape = pred.hr.tape();
    return ad::l1_loss(pred.hr, upper_tri_tensor(tape, hr));
  }

  [[nodiscard]] std::size_t n_s() const noexcept { return n_s_; }
  [[nodiscard]] std::size_t n_t() const noexcept { return n_t_; }

  [[nodiscard]] std::vector<ad::Parameter*> parameters() {
    std::vector<ad::Parameter*> out;
    collect(out);
    return out;
  }

  [[nodiscard]] std::size_t parameter_count() {
    std::size_t total = 0;
    for (auto* p : parameters()) total += p->size();
    return total;
  }

  /// Inference helper: full HR matrix, no dropout.
  Connectome predict(const Connectome& lr) {
    ad::Tape tape;
    Rng rng(0);
    Prediction p = forward(tape, lr, false, rng);
    return stpgsr::devectorize(p.hr.values(), n_t_);
  }

protected:
  void check_input(const Connectome& lr) const {
    if (lr.size() != n_s_) {
      throw ShapeError("model expects " + std::to_string(n_s_) + "-node input, got " + std::to_string(lr.size()));
    }
  }

  /// LR features X = A_s and arc weights A_s(i, j) over the complete LR digraph.
  std::pair<ad::Tensor, ad::Tensor> lr_inputs(ad::Tape& tape, const Connectome& lr) const {
    ad::Tensor x = connectome_tensor(tape, lr);
    return {x, ad::gather_flat(x, lr_weight_offsets_)};
  }

  std::size_t n_s_;
  std::size_t n_t_;
  std::shared_ptr<const MessageGraph> lr_graph_;
  std::vector<std::uint32_t> lr_weight_offsets_;
  std::vector<std::uint32_t> hr_upper_offsets_;
};

inline std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

/// Node-space GTB settings shared by all models.
struct NodeGtbConfig {
  static constexpr std::size_t heads = 4;
  static constexpr double dropout = 0.2;
};

/// Target edge initializer followed by the dual graph learner.
class StpGsr final : public SrModel {
public:
  StpGsr(std::size_t n_s, std::size_t n_t)
      : SrModel(n_s, n_t),
        node_gtb("node_gtb", NodeGtbConfig::heads, n_s, ceil_div(n_t, NodeGtbConfig::heads), n_t, NodeGtbConfig::dropout),
        dual_gtb("dual_gtb", 1, 1, 1, 1, 0.0) {}

  [[nodiscard]] ModelKind kind() const override { return ModelKind::stp_gsr; }

  void init(Rng& rng) override {
    node_gtb.init(rng);
    dual_gtb.init(rng);
  }

  void collect(std::vector<ad::Parameter*>& out) override {
    node_gtb.collect(out);
    dual_gtb.collect(out);
  }

  /// X_t^0 = minmax(X_s1^T X_s1) with X_s1 = GTB(A_s).
  ad::Tensor target_edge_init(ad::Tape& tape, const Connectome& lr, bool training, Rng& rng) {
    check_input(lr);
    auto [x, w] = lr_inputs(tape, lr);
    return gram_minmax(node_gtb.forward(x, *lr_graph_, w, training, rng));
  }

  Prediction forward(ad::Tape& tape, const Connectome& lr, bool training, Rng& rng) override {
    ad::Tensor x_t0 = target_edge_init(tape, lr, training, rng);
    ad::Tensor dual_x = ad::gather_flat(x_t0, hr_upper_offsets_);
    const MessageGraph& graph = dual().graph;
    ad::Tensor ones = tape.constant({graph.arc_count(), 1}, std::vector<double>(graph.arc_count(), 1.0));
    ad::Tensor out = dual_gtb.forward(dual_x, graph, ones, training, rng);
    counters_.dual_rows = out.rows();
    counters_.dual_arcs = graph.arc_count();
    return {out, std::nullopt};
  }

  /// Dual of the complete HR graph; built on first use.
  const DualCacheEntry& dual() {
    if (!dual_) dual_ = shared_complete_dual(n_t_);
    return *dual_;
  }
  [[nodiscard]] const ForwardCounters& counters() const noexcept { return counters_; }

  Gtb node_gtb;
  Gtb dual_gtb;

private:
  std::shared_ptr<const DualCacheEntry> dual_;
  ForwardCounters counters_;
};

/// Two stacked node-space GTBs; HR matrix from the min-max scaled Gram product.
class DirectSr final : public SrModel {
public:
  DirectSr(std::size_t n_s, std::size_t n_t)
      : SrModel(n_s, n_t),
        gtb1("direct.gtb1", NodeGtbConfig::heads, n_s, ceil_div(n_t, NodeGtbConfig::heads), n_t, NodeGtbConfig::dropout),
        gtb2("direct.gtb2", NodeGtbConfig::heads, n_t, ceil_div(n_t, NodeGtbConfig::heads), n_t, NodeGtbConfig::dropout) {}

  [[nodiscard]] ModelKind kind() const override { return ModelKind::direct_sr; }

  void init(Rng& rng) override {
    gtb1.init(rng);
    gtb2.init(rng);
  }

  void collect(std::vector<ad::Parameter*>& out) override {
    gtb1.collect(out);
    gtb2.collect(out);
  }

  /// Z in R^{n_s x n_t}.
  ad::Tensor embed(ad::Tape& tape, const Connectome& lr, bool training, Rng& rng) {
    check_input(lr);
    auto [x, w] = lr_inputs(tape, lr);
    ad::Tensor h = gtb1.forward(x, *lr_graph_, w, training, rng);
    return gtb2.forward(h, *lr_graph_, w, training, rng);
  }

  Prediction forward(ad::Tape& tape, const Connectome& lr, bool training, Rng& rng) override {
    return {ad::gather_flat(gram_minmax(embed(tape, lr, training, rng)), hr_upper_offsets_), std::nullopt};
  }

  Gtb gtb1;
  Gtb gtb2;
};

/// LR -> HR encoder (as DirectSr) and HR -> LR decoder on the predicted HR graph.
class Autoencoder final : public SrModel {
public:
  static constexpr double reconstruction_weight = 1.0;

  Autoencoder(std::size_t n_s, std::size_t n_t)
      : SrModel(n_s, n_t),
        enc1("ae.enc1", NodeGtbConfig::heads, n_s, ceil_div(n_t, NodeGtbConfig::heads), n_t, NodeGtbConfig::dropout),
        enc2("ae.enc2", NodeGtbConfig::heads, n_t, ceil_div(n_t, NodeGtbConfig::heads), n_t, NodeGtbConfig::dropout),
        dec1("ae.dec1", NodeGtbConfig::heads, n_t, ceil_div(n_t, NodeGtbConfig::heads), n_t, NodeGtbConfig::dropout),
        dec2("ae.dec2", NodeGtbConfig::heads, n_t, ceil_div(n_s, NodeGtbConfig::heads), n_s, NodeGtbConfig::dropout),
        hr_graph_(std::make_shared<const MessageGraph>(MessageGraph::complete(n_t))),
        hr_weight_offsets_(hr_graph_->weight_offsets()),
        lr_upper_offsets_(upper_tri_offsets(n_s)) {}

  [[nodiscard]] ModelKind kind() const override { return ModelKind::autoencoder; }

  void init(Rng& rng) override {
    enc1.init(rng);
    enc2.init(rng);
    dec1.init(rng);
    dec2.init(rng);
  }

  void collect(std::vector<ad::Parameter*>& out) override {
    enc1.collect(out);
    enc2.collect(out);
    dec1.collect(out);
    dec2.collect(out);
  }

  Prediction forward(ad::Tape& tape, const Connectome& lr, bool training, Rng& rng) override {
    check_input(lr);
    auto [x, w] = lr_inputs(tape, lr);
    ad::Tensor z = enc2.forward(enc1.forward(x, *lr_graph_, w, training, rng), *lr_graph_, w, training, rng);
    ad::Tensor hr_upper = ad::gather_flat(gram_minmax(z), hr_upper_offsets_);
    // decoder input: the predicted HR connectome as both graph weights and node features
    ad::Tensor hr_full = stpgsr::devectorize(hr_upper, n_t_);
    ad::Tensor hr_w = ad::gather_flat(hr_full, hr_weight_offsets_);
    ad::Tensor zd = dec2.forward(dec1.forward(hr_full, *hr_graph_, hr_w, training, rng), *hr_graph_, hr_w, training, rng);
    ad::Tensor lr_upper = ad::gather_flat(gram_minmax(zd), lr_upper_offsets_);
    return {hr_upper, lr_upper};
  }

  ad::Tensor loss(const Prediction& pred, const Connectome& lr, const Connectome& hr) override {
    ad::Tape& tape = pred.hr.tape();
    ad::Tensor hr_term = ad::l1_loss(pred.hr, upper_tri_tensor(tape, hr));
    ad::Tensor lr_term = ad::l1_loss(*pred.lr, upper_tri_tensor(tape, lr));
    return ad::add(hr_term, ad::scale(lr_term, reconstruction_weight));
  }

  Gtb enc1;
  Gtb enc2;
  Gtb dec1;
  Gtb dec2;

private:
  std::shared_ptr<const MessageGraph> hr_graph_;
  std::vector<std::uint32_t> hr_weight_offsets_;
  std::vector<std::uint32_t> lr_upper_offsets_;
};

/// Builds and seeds a model of the given kind.
inline std::unique_ptr<SrModel> make_model(ModelKind kind, std::size_t n_s, std::size_t n_t, std::uint64_t seed) {
  std::unique_ptr<SrModel> m;
  switch (kind) {
    case ModelKind::stp_gsr: m = std::make_unique<StpGsr>(n_s, n_t); break;
    case ModelKind::direct_sr: m = std::make_unique<DirectSr>(n_s, n_t); break;
    case ModelKind::autoencoder: m = std::make_unique<Autoencoder>(n_s, n_t); break;
  }
  Rng rng(seed);
  m->init(rng);
  return m;
}

} // namespace stpgsr
