#pragma once

// Finite-difference checks for every differentiable operation and model.

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "stpgsr/autodiff.hpp"
#include "stpgsr/layers.hpp"
#include "stpgsr/models.hpp"

namespace stpgsr::gradcheck {

inline constexpr double op_threshold = 1e-6;
inline constexpr double model_threshold = 1e-4;
inline constexpr double step = 1e-5;

struct Case {
  std::string name;
  double threshold = op_threshold;
  std::function<ad::GradCheckResult()> run;
};

struct Outcome {
  std::string name;
  double threshold = 0.0;
  ad::GradCheckResult result;
  [[nodiscard]] bool passed() const { return result.max_rel_error < threshold; }
};

namespace detail {

inline std::vector<double> uniform(std::size_t n, double lo, double hi, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

/// Values bounded away from zero: magnitude in [0.1, 1], random sign.
inline std::vector<double> away_from_zero(std::size_t n, std::uint64_t seed) {
  auto v = uniform(n, 0.1, 1.0, seed);
  std::mt19937_64 rng(seed ^ 0x55);
  for (auto& x : v)
    if (rng() & 1u) x = -x;
  return v;
}

/// sum(x .* C) with a fixed random C, turning any tensor into a scalar probe.
inline ad::Tensor probe(const ad::Tensor& x, std::uint64_t seed = 99) {
  auto c = x.tape().constant(x.shape(), uniform(x.shape().size(), -1.0, 1.0, seed));
  return ad::sum(ad::mul(x, c));
}

/// Check over several parameters built from shapes.
inline ad::GradCheckResult multi(std::vector<ad::Shape> shapes, std::uint64_t seed,
                                 const std::function<ad::Tensor(ad::Tape&, std::vector<ad::Tensor>&)>& f,
                                 bool nonzero = false) {
  std::vector<ad::Parameter> ps;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    ps.emplace_back("p" + std::to_string(i), shapes[i]);
    ps.back().value = nonzero ? away_from_zero(shapes[i].size(), seed + i) : uniform(shapes[i].size(), -1.0, 1.0, seed + i);
  }
  std::vector<ad::Parameter*> ptrs;
  for (auto& p : ps) ptrs.push_back(&p);
  return ad::grad_check(
      [&](ad::Tape& t) {
        std::vector<ad::Tensor> xs;
        for (auto& p : ps) xs.push_back(t.param(p));
        return f(t, xs);
      },
      ptrs, step);
}

/// Small random connectome with weights in [0.05, 1].
inline Connectome random_connectome(std::size_t n, std::uint64_t seed) {
  auto v = uniform(pair_count(n), 0.05, 1.0, seed);
  return devectorize(v, n);
}

} // namespace detail

/// Per-operation cases (threshold 1e-6) followed by layer-level ones.
inline std::vector<Case> op_cases() {
  using detail::multi;
  using detail::probe;
  using T = std::vector<ad::Tensor>;
  std::vector<Case> cases;
  cases.push_back({"matmul", op_threshold, [] {
                     return multi({{3, 4}, {4, 2}}, 1, [](ad::Tape&, T& x) { return probe(ad::matmul(x[0], x[1])); });
                   }});
  cases.push_back({"transpose", op_threshold, [] {
                     return multi({{5, 3}}, 2, [](ad::Tape&, T& x) { return probe(ad::transpose(x[0])); });
                   }});
  cases.push_back({"add", op_threshold, [] {
                     return multi({{3, 2}, {3, 2}}, 3, [](ad::Tape&, T& x) { return probe(ad::add(x[0], x[1])); });
                   }});
  cases.push_back({"sub", op_threshold, [] {
                     return multi({{3, 2}, {3, 2}}, 4, [](ad::Tape&, T& x) { return probe(ad::sub(x[0], x[1])); });
                   }});
  cases.push_back({"mul", op_threshold, [] {
                     return multi({{3, 2}, {3, 2}}, 5, [](ad::Tape&, T& x) { return probe(ad::mul(x[0], x[1])); });
                   }});
  cases.push_back({"scale", op_threshold, [] {
                     return multi({{6, 1}}, 6, [](ad::Tape&, T& x) { return probe(ad::scale(x[0], 2.0)); });
                   }});
  cases.push_back({"relu", op_threshold, [] {
                     return multi(
                         {{4, 3}}, 7, [](ad::Tape&, T& x) { return probe(ad::relu(x[0])); }, true);
                   }});
  cases.push_back({"rsqrt", op_threshold, [] {
                     return multi({{4, 1}}, 8, [](ad::Tape&, T& x) { return probe(ad::rsqrt(ad::mul(x[0], x[0]), 0.1)); });
                   }});
  cases.push_back({"segment_softmax", op_threshold, [] {
                     ad::Segments seg({0, 0, 1, 2, 1, 2, 2}, 3);
                     return multi({{7, 1}}, 9, [seg](ad::Tape&, T& x) { return probe(ad::segment_softmax(x[0], seg)); });
                   }});
  cases.push_back({"concat_features", op_threshold, [] {
                     return multi({{3, 1}, {3, 2}, {3, 1}}, 10, [](ad::Tape&, T& x) {
                       return probe(ad::concat_features(std::vector<ad::Tensor>{x[0], x[1], x[2]}));
                     });
                   }});
  cases.push_back({"gather_rows", op_threshold, [] {
                     const std::vector<std::uint32_t> idx{2, 0, 2, 1};
                     return multi({{3, 2}}, 11, [idx](ad::Tape&, T& x) { return probe(ad::gather_rows(x[0], idx)); });
                   }});
  cases.push_back({"scatter_add_rows", op_threshold, [] {
                     const std::vector<std::uint32_t> idx{2, 0, 2, 1};
                     return multi({{4, 2}}, 12, [idx](ad::Tape&, T& x) { return probe(ad::scatter_add_rows(x[0], idx, 3)); });
                   }});
  cases.push_back({"gather_flat", op_threshold, [] {
                     const std::vector<std::uint32_t> idx{1, 5, 3, 1};
                     return multi({{2, 3}}, 13, [idx](ad::Tape&, T& x) { return probe(ad::gather_flat(x[0], idx)); });
                   }});
  cases.push_back({"row_dot", op_threshold, [] {
                     return multi({{4, 3}, {4, 3}}, 14, [](ad::Tape&, T& x) { return probe(ad::row_dot(x[0], x[1])); });
                   }});
  cases.push_back({"scale_rows", op_threshold, [] {
                     return multi({{4, 3}, {4, 1}}, 15, [](ad::Tape&, T& x) { return probe(ad::scale_rows(x[0], x[1])); });
                   }});
  cases.push_back({"feature_mean_var", op_threshold, [] {
                     return multi({{4, 3}}, 16, [](ad::Tape&, T& x) {
                       auto mv = ad::feature_mean_var(x[0]);
                       return ad::add(probe(mv.mean, 1), probe(mv.var, 2));
                     });
                   }});
  cases.push_back({"dropout", op_threshold, [] {
                     return multi({{5, 4}}, 17, [](ad::Tape&, T& x) {
                       std::mt19937_64 rng(5);
                       return probe(ad::dropout(x[0], 0.2, true, rng));
                     });
                   }});
  cases.push_back({"l1_loss", op_threshold, [] {
                     return multi({{6, 1}}, 18, [](ad::Tape& t, T& x) {
                       // targets offset by at least 0.05 from any prediction in [-1, 1]
                       auto target = t.constant({6, 1}, {1.5, -1.2, 1.3, -1.4, 1.1, -1.05});
                       return ad::l1_loss(x[0], target);
                     });
                   }});
  cases.push_back({"minmax_scale", op_threshold, [] {
                     return multi({{3, 3}}, 19, [](ad::Tape&, T& x) { return probe(ad::minmax_scale(x[0])); });
                   }});
  cases.push_back({"devectorize", op_threshold, [] {
                     return multi({{6, 1}}, 20, [](ad::Tape&, T& x) { return probe(stpgsr::devectorize(x[0], 4)); });
                   }});
  cases.push_back({"graph_norm", op_threshold, [] {
                     GraphNorm gn("gn", 3);
                     gn.alpha.value = {0.5, 1.0, 0.2};
                     gn.gamma.value = {1.5, -0.7, 0.9};
                     gn.beta.value = {0.1, 0.0, -0.3};
                     ad::Parameter x("x", {4, 3});
                     x.value = detail::uniform(12, -1.0, 1.0, 21);
                     std::vector<ad::Parameter*> ps{&x, &gn.alpha, &gn.gamma, &gn.beta};
                     return ad::grad_check([&](ad::Tape& t) { return probe(graph_norm(gn, t.param(x))); }, ps, step);
                   }});
  cases.push_back({"gt_layer", op_threshold, [] {
                     std::mt19937_64 init(22);
                     GtLayer layer("gt", 2, 3, 2, 3, 0.0);
                     layer.init(init);
                     MessageGraph g(4, {{0, 1}, {1, 0}, {2, 1}, {3, 1}, {1, 2}, {0, 3}, {2, 3}});
                     ad::Parameter x("x", {4, 3});
                     x.value = detail::uniform(12, -1.0, 1.0, 23);
                     ad::Parameter w("w", {g.arc_count(), 1});
                     w.value = detail::uniform(g.arc_count(), 0.1, 1.0, 24);
                     std::vector<ad::Parameter*> ps;
                     layer.collect(ps);
                     ps.push_back(&x);
                     ps.push_back(&w);
                     return ad::grad_check(
                         [&](ad::Tape& t) {
                           std::mt19937_64 rng(0);
                           return probe(gt_layer_forward(layer, t.param(x), g, t.param(w), false, rng));
                         },
                         ps, step);
                   }});
  cases.push_back({"gtb", model_threshold, [] {
                     std::mt19937_64 init(25);
                     Gtb block("gtb", 2, 3, 2, 3, 0.0);
                     block.init(init);
                     MessageGraph g = MessageGraph::complete(4);
                     ad::Parameter x("x", {4, 3});
                     x.value = detail::uniform(12, 0.0, 1.0, 26);
                     ad::Parameter w("w", {g.arc_count(), 1});
                     w.value = detail::uniform(g.arc_count(), 0.1, 1.0, 27);
                     std::vector<ad::Parameter*> ps;
                     block.collect(ps);
                     ps.push_back(&x);
                     return ad::grad_check(
                         [&](ad::Tape& t) {
                           std::mt19937_64 rng(0);
                           return probe(block.forward(t.param(x), g, t.constant({g.arc_count(), 1}, w.value), false, rng));
                         },
                         ps, step);
                   }});
  return cases;
}

/// End-to-end loss gradient w.r.t. every parameter of a 6 -> 8 model.
inline ad::GradCheckResult model_check(ModelKind kind, std::uint64_t seed = 31) {
  auto model = make_model(kind, 6, 8, seed);
  const Connectome lr = detail::random_connectome(6, seed + 1);
  const Connectome hr = detail::random_connectome(8, seed + 2);
  auto params = model->parameters();
  return ad::grad_check(
      [&](ad::Tape& t) {
        Rng rng(0);
        Prediction p = model->forward(t, lr, false, rng);
        return model->loss(p, lr, hr);
      },
      params, step);
}

inline std::vector<Case> model_cases() {
  std::vector<Case> cases;
  for (ModelKind k : {ModelKind::stp_gsr, ModelKind::direct_sr, ModelKind::autoencoder}) {
    cases.push_back({std::string("model:") + std::string(to_string(k)), model_threshold, [k] { return model_check(k); }});
  }
  return cases;
}

inline std::vector<Outcome> run(const std::vector<Case>& cases) {
  std::vector<Outcome> out;
  for (const auto& c : cases) out.push_back({c.name, c.threshold, c.run()});
  return out;
}

} // namespace stpgsr::gradcheck
