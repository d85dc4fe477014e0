#include <gtest/gtest.h>

#include <algorithm>
#include <limits>
#include <random>
#include <set>
#include <vector>

#include "stpgsr/io.hpp"
#include "stpgsr/training.hpp"

using namespace stpgsr;

namespace {

Connectome random_connectome(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(0.0, 1.0);
  Connectome c(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) c.set(i, j, d(rng));
  return c;
}

std::vector<Sample> random_samples(std::size_t count, std::size_t ns, std::size_t nt, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Sample> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back({"s" + std::to_string(i), random_connectome(ns, rng), random_connectome(nt, rng)});
  return out;
}

std::vector<std::vector<double>> snapshot(SrModel& m) {
  std::vector<std::vector<double>> v;
  for (auto* p : m.parameters()) v.push_back(p->value);
  return v;
}

} // namespace

TEST(DeriveSeed, DistinctStreams) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t s = 0; s < 1000; ++s) seen.insert(derive_seed(7, s));
  EXPECT_EQ(seen.size(), 1000u);
  EXPECT_EQ(derive_seed(7, 3), derive_seed(7, 3));
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.learning_rate = 0.0;
  EXPECT_THROW(c.validate(), ValidationError);
  EXPECT_NO_THROW(c.validate_training());
  c = TrainConfig{};
  c.accumulation_batch = 0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = TrainConfig{};
  c.fold_count = 1;
  EXPECT_THROW(c.validate(), ValidationError);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ad::Parameter p("p", {3, 1});
  p.value = {1.0, 1.0, 1.0};
  p.grad = {0.25, -3.0, 0.0};
  std::vector<ad::Parameter*> ps{&p};
  AdamState st(ps);
  st.update(ps, 0.01);
  EXPECT_NEAR(p.value[0], 1.0 - 0.01, 1e-9);
  EXPECT_NEAR(p.value[1], 1.0 + 0.01, 1e-9);
  EXPECT_EQ(p.value[2], 1.0);
  EXPECT_EQ(p.grad, (std::vector<double>{0.0, 0.0, 0.0}));
  EXPECT_EQ(st.step(), 1u);
}

TEST(Adam, RejectsChangedParameterList) {
  ad::Parameter a("a", {1, 1}), b("b", {1, 1});
  std::vector<ad::Parameter*> one{&a}, two{&a, &b};
  AdamState st(one);
  EXPECT_THROW(st.update(two, 0.1), ShapeError);
}

TEST(KFold, SizesDisjointAndCovering) {
  const auto folds = kfold_split(167, 3, 5);
  ASSERT_EQ(folds.size(), 3u);
  EXPECT_EQ(folds[0].test.size(), 56u);
  EXPECT_EQ(folds[1].test.size(), 56u);
  EXPECT_EQ(folds[2].test.size(), 55u);
  std::set<std::size_t> all;
  for (const auto& f : folds) {
    EXPECT_EQ(f.train.size() + f.test.size(), 167u);
    for (auto i : f.test) EXPECT_TRUE(all.insert(i).second);
    std::set<std::size_t> tr(f.train.begin(), f.train.end());
    for (auto i : f.test) EXPECT_EQ(tr.count(i), 0u);
  }
  EXPECT_EQ(all.size(), 167u);
}

TEST(KFold, SeedStableAndValidated) {
  const auto a = kfold_split(6, 3, 9), b = kfold_split(6, 3, 9);
  for (std::size_t f = 0; f < 3; ++f) {
    EXPECT_EQ(a[f].test, b[f].test);
    EXPECT_EQ(a[f].test.size(), 2u);
  }
  EXPECT_THROW(kfold_split(2, 3, 0), DomainError);
  EXPECT_THROW(kfold_split(5, 1, 0), DomainError);
}

TEST(Train, ZeroLearningRateLeavesParameters) {
  auto data = random_samples(1, 4, 6, 1);
  auto m = make_model(ModelKind::stp_gsr, 4, 6, 3);
  const auto before = snapshot(*m);
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.epochs = 1;
  const auto hist = train(*m, data, cfg);
  EXPECT_EQ(hist.epoch_loss.size(), 1u);
  EXPECT_EQ(hist.epoch_seconds.size(), 1u);
  EXPECT_EQ(snapshot(*m), before);
}

TEST(Train, AccumulatedGradientEqualsMeanLossGradient) {
  for (auto kind : {ModelKind::stp_gsr, ModelKind::direct_sr, ModelKind::autoencoder}) {
    auto data = random_samples(5, 4, 6, 2);
    auto m = make_model(kind, 4, 6, 4);
    auto params = m->parameters();
    // accumulated per-sample gradients, averaged
    for (auto* p : params) p->zero_grad();
    for (const auto& s : data) {
      Rng rng(0);
      accumulate_sample(*m, s, false, rng);
    }
    std::vector<std::vector<double>> acc;
    for (auto* p : params) {
      for (auto& g : p->grad) g /= static_cast<double>(data.size());
      acc.push_back(p->grad);
      p->zero_grad();
    }
    // one tape, mean of the losses
    ad::Tape tape;
    Rng rng(0);
    ad::Tensor total = tape.constant({1, 1}, {0.0});
    for (const auto& s : data) total = ad::add(total, m->loss(m->forward(tape, s.lr, false, rng), s.lr, s.hr));
    tape.backward(ad::scale(total, 1.0 / static_cast<double>(data.size())));
    for (std::size_t i = 0; i < params.size(); ++i)
      for (std::size_t k = 0; k < acc[i].size(); ++k) ASSERT_NEAR(params[i]->grad[k], acc[i][k], 1e-12) << params[i]->name;
  }
}

TEST(Train, PartialGroupAveragedOverActualSize) {
  // with 3 samples and accumulation 2, the second step uses a group of one
  auto data = random_samples(3, 4, 6, 3);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.accumulation_batch = 2;
  cfg.seed = 8;
  auto a = make_model(ModelKind::direct_sr, 4, 6, 5);
  train(*a, data, cfg);

  // manual replay of the same schedule
  auto b = make_model(ModelKind::direct_sr, 4, 6, 5);
  auto params = b->parameters();
  AdamState adam(params);
  std::vector<std::size_t> order{0, 1, 2};
  std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, 1000));
  std::shuffle(order.begin(), order.end(), shuffle_rng);
  Rng dropout_rng(derive_seed(cfg.seed, 0xD5));
  for (auto group : {std::vector<std::size_t>{order[0], order[1]}, std::vector<std::size_t>{order[2]}}) {
    for (auto i : group) accumulate_sample(*b, data[i], true, dropout_rng);
    for (auto* p : params)
      for (auto& g : p->grad) g /= static_cast<double>(group.size());
    adam.update(params, cfg.learning_rate);
  }
  EXPECT_EQ(snapshot(*a), snapshot(*b));
}

TEST(Train, DeterministicAndRejectsMismatch) {
  auto data = random_samples(6, 4, 6, 4);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.accumulation_batch = 4;
  auto a = make_model(ModelKind::stp_gsr, 4, 6, 1), b = make_model(ModelKind::stp_gsr, 4, 6, 1);
  const auto ha = train(*a, data, cfg), hb = train(*b, data, cfg);
  EXPECT_EQ(ha.epoch_loss, hb.epoch_loss);
  EXPECT_EQ(snapshot(*a), snapshot(*b));

  auto bad = data;
  bad[2].hr = random_samples(1, 4, 7, 9)[0].hr;
  EXPECT_THROW(train(*a, bad, cfg), ValidationError);
  auto wrong = random_samples(2, 5, 6, 1);
  EXPECT_THROW(train(*a, wrong, cfg), ValidationError);
  EXPECT_THROW(train(*a, std::vector<Sample>{}, cfg), ValidationError);
}

TEST(Train, NonFiniteLossIsDivergence) {
  auto data = random_samples(2, 4, 6, 5);
  auto m = make_model(ModelKind::direct_sr, 4, 6, 1);
  m->parameters()[0]->value[0] = std::numeric_limits<double>::infinity();
  TrainConfig cfg;
  cfg.epochs = 1;
  EXPECT_THROW(train(*m, data, cfg), DivergenceError);
}

TEST(Train, LossDecreasesOnSyntheticData) {
  io::SyntheticConfig sc;
  sc.samples = 12;
  sc.n_s = 8;
  sc.n_t = 12;
  const auto data = io::generate_samples(sc);
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.accumulation_batch = 4;
  auto m = make_model(ModelKind::stp_gsr, 8, 12, 2);
  const auto h = train(*m, data, cfg);
  EXPECT_LT(h.epoch_loss.back(), h.epoch_loss.front());
}

TEST(Evaluate, IndependentOfWorkerCount) {
  auto data = random_samples(5, 5, 7, 6);
  auto m = make_model(ModelKind::direct_sr, 5, 7, 2);
  const auto r1 = evaluate(*m, data, 3, 1), r3 = evaluate(*m, data, 3, 3);
  ASSERT_EQ(r1.per_sample.size(), 5u);
  for (const auto& name : topo::metric_names()) {
    EXPECT_EQ(r1.aggregate.at(name), r3.aggregate.at(name)) << name;
    for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(r1.per_sample[i].values.at(name).mae, r3.per_sample[i].values.at(name).mae);
  }
}

TEST(CrossValidate, IdenticalSamplesGiveIdenticalFolds) {
  auto one = random_samples(1, 4, 6, 7)[0];
  std::vector<Sample> data;
  for (int i = 0; i < 4; ++i) data.push_back({"id" + std::to_string(i), one.lr, one.hr});
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.fold_count = 2;
  cfg.accumulation_batch = 2;
  const auto cv = cross_validate(data, cfg);
  ASSERT_EQ(cv.folds.size(), 2u);
  for (const auto& name : topo::metric_names()) EXPECT_EQ(cv.folds[0].report.aggregate.at(name), cv.folds[1].report.aggregate.at(name));
  EXPECT_EQ(cv.folds[0].history.epoch_loss, cv.folds[1].history.epoch_loss);
}

TEST(CrossValidate, AggregateIsMeanOfFolds) {
  auto data = random_samples(6, 4, 6, 8);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.accumulation_batch = 2;
  cfg.model_kind = ModelKind::direct_sr;
  const auto cv = cross_validate(data, cfg);
  ASSERT_EQ(cv.folds.size(), 3u);
  for (const auto& name : topo::metric_names()) {
    double s = 0.0;
    std::size_t count = 0;
    for (const auto& f : cv.folds) {
      EXPECT_EQ(f.report.fold, static_cast<int>(f.fold));
      if (auto v = f.report.aggregate.at(name)) {
        s += *v;
        ++count;
      }
    }
    if (count > 0) {
      ASSERT_TRUE(cv.aggregate.at(name).has_value());
      EXPECT_EQ(*cv.aggregate.at(name), s / static_cast<double>(count)) << name;
    }
  }
}
