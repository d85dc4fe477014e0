#pragma once

// Optimisation loop, k-fold splitting and cross-validation.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "stpgsr/autodiff.hpp"
#include "stpgsr/graph.hpp"
#include "stpgsr/metrics.hpp"
#include "stpgsr/models.hpp"

namespace stpgsr {

/// SplitMix64 finaliser; derives independent seeds from (seed, stream).
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

struct Sample {
  std::string id;
  Connectome lr;
  Connectome hr;
};

struct TrainConfig {
  double learning_rate = 0.005;
  std::size_t epochs = 60;
  std::size_t accumulation_batch = 16;
  std::uint64_t seed = 0;
  ModelKind model_kind = ModelKind::stp_gsr;
  std::size_t fold_count = 3;

  void validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ValidationError("learning_rate must be > 0");
    validate_training();
    if (fold_count < 2) throw ValidationError("fold_count must be >= 2");
  }

  /// The subset train() needs; a zero learning rate is allowed there and leaves parameters unchanged.
  void validate_training() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ValidationError("learning_rate must be >= 0");
    if (accumulation_batch < 1) throw ValidationError("accumulation_batch must be >= 1");
  }
};

/// Adam moments for a fixed parameter list.
class AdamState {
public:
  static constexpr double beta1 = 0.9;
  static constexpr double beta2 = 0.999;
  static constexpr double eps = 1e-8;

  explicit AdamState(std::span<ad::Parameter* const> params) {
    for (auto* p : params) {
      m_.emplace_back(p->size(), 0.0);
      v_.emplace_back(p->size(), 0.0);
    }
  }

  [[nodiscard]] std::uint64_t step() const noexcept { return step_; }

  /// Bias-corrected update from the accumulated gradients, which are zeroed afterwards.
  void update(std::span<ad::Parameter* const> params, double lr) {
    if (params.size() != m_.size()) throw ShapeError("adam: parameter list changed");
    ++step_;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step_));
    for (std::size_t p = 0; p < params.size(); ++p) {
      auto& prm = *params[p];
      if (prm.size() != m_[p].size()) throw ShapeError("adam: shape of " + prm.name + " changed");
      for (std::size_t k = 0; k < prm.size(); ++k) {
        const double g = prm.grad[k];
        m_[p][k] = beta1 * m_[p][k] + (1.0 - beta1) * g;
        v_[p][k] = beta2 * v_[p][k] + (1.0 - beta2) * g * g;
        const double mhat = m_[p][k] / c1;
        const double vhat = v_[p][k] / c2;
        prm.value[k] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
      prm.zero_grad();
    }
  }

private:
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::uint64_t step_ = 0;
};

inline void adam_step(AdamState& state, std::span<ad::Parameter* const> params, double lr) { state.update(params, lr); }

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Seeded shuffle, then contiguous folds whose sizes differ by at most one
/// (the first N mod k folds take the extra sample).
inline std::vector<Fold> kfold_split(std::size_t sample_count, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw DomainError("kfold_split: need k >= 2");
  if (sample_count < k) {
    throw DomainError("kfold_split: " + std::to_string(sample_count) + " samples cannot fill " + std::to_string(k) + " folds");
  }
  std::vector<std::size_t> idx(sample_count);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<Fold> folds(k);
  std::size_t start = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t len = sample_count / k + (f < sample_count % k ? 1 : 0);
    folds[f].test.assign(idx.begin() + static_cast<std::ptrdiff_t>(start), idx.begin() + static_cast<std::ptrdiff_t>(start + len));
    start += len;
  }
  for (std::size_t f = 0; f < k; ++f)
    for (std::size_t g = 0; g < k; ++g)
      if (g != f) folds[f].train.insert(folds[f].train.end(), folds[g].test.begin(), folds[g].test.end());
  return folds;
}

struct TrainHistory {
  std::vector<double> epoch_loss;
  std::vector<double> epoch_seconds;
};

/// Runs forward + backward for one sample, accumulating into parameter grads.
/// Returns the sample loss; throws DivergenceError on a non-finite loss.
inline double accumulate_sample(SrModel& model, const Sample& s, bool training, Rng& rng) {
  ad::Tape tape;
  Prediction pred = model.forward(tape, s.lr, training, rng);
  ad::Tensor loss = model.loss(pred, s.lr, s.hr);
  const double value = loss.item();
  if (!std::isfinite(value)) throw DivergenceError("non-finite training loss on sample '" + s.id + "'");
  tape.backward(loss);
  return value;
}

inline void check_consistent(std::span<const Sample> data) {
  if (data.empty()) throw ValidationError("dataset is empty");
  for (const auto& s : data) {
    if (s.lr.size() != data[0].lr.size() || s.hr.size() != data[0].hr.size()) {
      throw ValidationError("sample '" + s.id + "' has inconsistent resolution");
    }
  }
}

/// Per-epoch seeded shuffle; gradients are averaged over each group of
/// `accumulation_batch` samples (the last group over its actual size) before
/// one Adam step.
inline TrainHistory train(SrModel& model, std::span<const Sample> data, const TrainConfig& cfg,
                          const std::function<void(std::size_t, double)>& on_epoch = {}) {
  cfg.validate_training();
  check_consistent(data);
  if (data[0].lr.size() != model.n_s() || data[0].hr.size() != model.n_t()) {
    throw ValidationError("dataset resolution does not match the model");
  }
  auto params = model.parameters();
  for (auto* p : params) p->zero_grad();
  AdamState adam(params);
  Rng dropout_rng(derive_seed(cfg.seed, 0xD5));
  TrainHistory hist;
  std::vector<std::size_t> order(data.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, 1000 + epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.accumulation_batch) {
      const std::size_t end = std::min(order.size(), start + cfg.accumulation_batch);
      for (std::size_t k = start; k < end; ++k) total += accumulate_sample(model, data[order[k]], true, dropout_rng);
      const double inv = 1.0 / static_cast<double>(end - start);
      for (auto* p : params)
        for (auto& g : p->grad) {
          g *= inv;
          if (!std::isfinite(g)) throw DivergenceError("non-finite gradient in " + p->name);
        }
      adam.update(params, cfg.learning_rate);
    }
    hist.epoch_loss.push_back(total / static_cast<double>(data.size()));
    hist.epoch_seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    if (on_epoch) on_epoch(epoch, hist.epoch_loss.back());
  }
  return hist;
}

/// Evaluates predictions for `data` with per-sample derived seeds. `jobs`
/// workers split the samples; results do not depend on `jobs`.
inline topo::MetricsReport evaluate(SrModel& model, std::span<const Sample> data, std::uint64_t seed,
                                    std::size_t jobs = 1, std::vector<Connectome>* predictions = nullptr) {
  topo::MetricsReport report;
  report.model = std::string(to_string(model.kind()));
  std::vector<Connectome> preds;
  preds.reserve(data.size());
  for (const auto& s : data) preds.push_back(model.predict(s.lr));
  report.per_sample.resize(data.size());
  auto work = [&](std::size_t worker) {
    for (std::size_t i = worker; i < data.size(); i += jobs)
      report.per_sample[i] = topo::evaluate_sample(preds[i], data[i].hr, derive_seed(seed, i), data[i].id);
  };
  jobs = std::max<std::size_t>(1, std::min(jobs, data.size()));
  if (jobs == 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < jobs; ++w) pool.emplace_back(work, w);
  }
  report.compute_aggregate();
  if (predictions) *predictions = std::move(preds);
  return report;
}

struct FoldResult {
  std::size_t fold = 0;
  Fold split;
  std::unique_ptr<SrModel> model;
  TrainHistory history;
  topo::MetricsReport report;
};

struct CrossValidation {
  std::vector<FoldResult> folds;
  std::map<std::string, std::optional<double>> aggregate; ///< mean over folds of each fold aggregate
};

/// Seeds used by every fold. They do not depend on the fold index, so folds
/// that see the same data produce the same numbers.
inline std::uint64_t model_seed(std::uint64_t seed) { return derive_seed(seed, 100); }
inline std::uint64_t eval_seed(std::uint64_t seed) { return derive_seed(seed, 200); }
inline std::uint64_t train_seed(std::uint64_t seed) { return derive_seed(seed, 300); }

/// Fresh seeded model per fold, trained on the other folds and scored on the held-out one.
inline CrossValidation cross_validate(std::span<const Sample> data, const TrainConfig& cfg, std::size_t jobs = 1,
                                      const std::function<void(const FoldResult&)>& on_fold = {}) {
  cfg.validate();
  check_consistent(data);
  CrossValidation cv;
  auto folds = kfold_split(data.size(), cfg.fold_count, cfg.seed);
  for (std::size_t f = 0; f < folds.size(); ++f) {
    FoldResult fr;
    fr.fold = f;
    fr.split = folds[f];
    fr.model = make_model(cfg.model_kind, data[0].lr.size(), data[0].hr.size(), model_seed(cfg.seed));
    std::vector<Sample> train_set, test_set;
    for (auto i : fr.split.train) train_set.push_back(data[i]);
    for (auto i : fr.split.test) test_set.push_back(data[i]);
    TrainConfig fold_cfg = cfg;
    fold_cfg.seed = train_seed(cfg.seed);
    fr.history = train(*fr.model, train_set, fold_cfg);
    fr.report = evaluate(*fr.model, test_set, eval_seed(cfg.seed), jobs);
    fr.report.fold = static_cast<int>(f);
    if (on_fold) on_fold(fr);
    cv.folds.push_back(std::move(fr));
  }
  for (const auto& name : topo::metric_names()) {
    double s = 0.0;
    std::size_t count = 0;
    for (const auto& fr : cv.folds) {
      const auto& v = fr.report.aggregate.at(name);
      if (v) {
        s += *v;
        ++count;
      }
    }
    cv.aggregate[name] = count == 0 ? std::nullopt : std::optional<double>(s / static_cast<double>(count));
  }
  return cv;
}

} // namespace stpgsr
