#include "dcnpd/training.hpp"

#include <gtest/gtest.h>

#include <map>
#include <sstream>

using namespace dcnpd;

namespace {

TrainConfig small_config(std::size_t epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.shape = DCNShape{{16, 16}, {8}};
  return c;
}

ObservationalDataset biased_linear(std::size_t n, std::size_t d, double noise, std::uint64_t seed) {
  SyntheticConfig cfg;
  cfg.n = n;
  cfg.d = d;
  cfg.bias_strength = 1.0;
  cfg.noise_std = noise;
  cfg.surface = Surface::LinearOffset;
  Rng rng(seed);
  return generate_synthetic(cfg, rng);
}

PropensityModel constant_propensity(std::size_t d, double logit) {
  PropensityModel m;
  m.net.layers.push_back({Matrix::Zero(static_cast<Eigen::Index>(d), 1), Vector::Constant(1, logit),
                          Activation::Sigmoid});
  return m;
}

}  // namespace

TEST(TrainDcn, SingleEpochLeavesTreatedHeadAtInitialization) {
  const ObservationalDataset ds = biased_linear(120, 3, 0.1, 1);
  DCNParams init;
  TrainHooks hooks;
  hooks.on_init = [&](const DCNParams& p) { init = p; };
  Rng rng(2);
  const DCNParams out = train_dcn(ds, constant_propensity(3, 0.3), small_config(1), rng, hooks);
  EXPECT_EQ(out.head1, init.head1);
  EXPECT_FALSE(out.head0 == init.head0);
  EXPECT_FALSE(out.shared == init.shared);
}

TEST(TrainDcn, TwoEpochsUpdateEachHeadOnce) {
  const ObservationalDataset ds = biased_linear(120, 3, 0.1, 3);
  std::vector<DCNParams> snaps;
  TrainHooks hooks;
  hooks.on_init = [&](const DCNParams& p) { snaps.push_back(p); };
  hooks.after_epoch = [&](std::size_t, const DCNParams& p) { snaps.push_back(p); };
  Rng rng(4);
  train_dcn(ds, constant_propensity(3, -0.4), small_config(2), rng, hooks);
  ASSERT_EQ(snaps.size(), 3u);
  EXPECT_FALSE(snaps[1].head0 == snaps[0].head0);  // epoch 1: control
  EXPECT_EQ(snaps[1].head1, snaps[0].head1);
  EXPECT_EQ(snaps[2].head0, snaps[1].head0);  // epoch 2: treated
  EXPECT_FALSE(snaps[2].head1 == snaps[1].head1);
  EXPECT_FALSE(snaps[1].shared == snaps[0].shared);
  EXPECT_FALSE(snaps[2].shared == snaps[1].shared);
}

TEST(TrainDcn, HeadFreezingOverTenEpochs) {
  const ObservationalDataset ds = biased_linear(150, 4, 0.5, 5);
  Rng prng(6);
  PropensityConfig pc;
  pc.epochs = 200;
  const PropensityModel prop = train_propensity(ds, pc, prng);
  DCNParams prev;
  TrainHooks hooks;
  hooks.on_init = [&](const DCNParams& p) { prev = p; };
  hooks.after_epoch = [&](std::size_t k, const DCNParams& p) {
    if (k % 2 == 1) {
      EXPECT_EQ(p.head1, prev.head1) << "epoch " << k;
      EXPECT_FALSE(p.head0 == prev.head0) << "epoch " << k;
    } else {
      EXPECT_EQ(p.head0, prev.head0) << "epoch " << k;
      EXPECT_FALSE(p.head1 == prev.head1) << "epoch " << k;
    }
    EXPECT_FALSE(p.shared == prev.shared) << "epoch " << k;
    prev = p;
  };
  Rng rng(7);
  train_dcn(ds, prop, small_config(10), rng, hooks);
}

TEST(TrainDcn, SameSeedSameParameters) {
  const ObservationalDataset ds = biased_linear(100, 3, 0.5, 8);
  const PropensityModel prop = constant_propensity(3, 1.0);
  Rng a(9), b(9);
  const DCNParams p = train_dcn(ds, prop, small_config(6), a);
  const DCNParams q = train_dcn(ds, prop, small_config(6), b);
  EXPECT_EQ(p.shared, q.shared);
  EXPECT_EQ(p.head0, q.head0);
  EXPECT_EQ(p.head1, q.head1);
}

TEST(TrainDcn, PerExampleKeepProbabilityFollowsSchedule) {
  const ObservationalDataset ds = biased_linear(90, 3, 0.5, 10);
  Rng prng(11);
  PropensityConfig pc;
  pc.epochs = 100;
  const PropensityModel prop = train_propensity(ds, pc, prng);
  const Vector p = predict_propensity(prop, ds.X);
  for (double gamma : {1.0, 0.6}) {
    TrainConfig cfg = small_config(4);
    cfg.gamma = gamma;
    std::map<std::size_t, int> visits;
    TrainHooks hooks;
    hooks.on_keep_prob = [&](std::size_t k, std::size_t row, double keep) {
      const auto i = static_cast<Eigen::Index>(row);
      const double expected = gamma / 2.0 + binary_entropy(p(i)) / 2.0;
      EXPECT_EQ(keep, expected) << "row " << row;
      // Single-row inference sees the same propensity up to rounding.
      EXPECT_NEAR(predict_propensity(prop, Vector(ds.X.row(i).transpose())), p(i), 1e-14);
      EXPECT_EQ(ds.W(static_cast<Eigen::Index>(row)), k % 2 == 0 ? 1 : 0);
      ++visits[row];
    };
    Rng rng(12);
    train_dcn(ds, prop, cfg, rng, hooks);
    EXPECT_EQ(visits.size(), ds.n());  // 4 epochs touch both batches
  }
}

TEST(TrainDcn, EmptyBatchRejected) {
  ObservationalDataset ds = biased_linear(40, 2, 0.1, 13);
  ds.W.setOnes();
  Rng rng(0);
  EXPECT_THROW(train_dcn(ds, constant_propensity(2, 0.0), small_config(2), rng), std::invalid_argument);
  ds.W.setZero();
  EXPECT_THROW(train_dcn(ds, constant_propensity(2, 0.0), small_config(2), rng), std::invalid_argument);
}

TEST(TrainDcn, InvalidConfigRejected) {
  const ObservationalDataset ds = biased_linear(40, 2, 0.1, 14);
  Rng rng(0);
  TrainConfig c = small_config(0);
  EXPECT_THROW(train_dcn(ds, constant_propensity(2, 0.0), c, rng), std::invalid_argument);
  c = small_config(2);
  c.gamma = 1.2;
  EXPECT_THROW(train_dcn(ds, constant_propensity(2, 0.0), c, rng), std::invalid_argument);
}

TEST(TrainDcn, RecoversConstantEffectOnNoiselessToy) {
  // y0 = x'b, y1 = x'b + 2, mild selection bias, default network shape.
  SyntheticConfig sc;
  sc.n = 500;
  sc.d = 5;
  sc.bias_strength = 1.0;
  Rng drng(15);
  ObservationalDataset ds = draw_covariates(sc, drng);
  Vector beta(5);
  beta << 0.4, 0.0, 0.2, 0.1, 0.0;
  const Vector m0 = ds.X * beta;
  const Vector m1 = m0.array() + 2.0;
  for (Eigen::Index i = 0; i < ds.Y.size(); ++i) ds.Y(i) = ds.W(i) == 1 ? m1(i) : m0(i);
  ds.set_truth(m0, m1);

  Rng srng(16);
  const auto [train, test] = train_test_split(ds, 0.8, srng);
  Rng prng(17), rng(18);
  const PropensityModel prop = train_propensity(train, PropensityConfig{}, prng);
  TrainConfig cfg;
  cfg.epochs = 200;
  std::vector<EpochMetrics> log;
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochMetrics& m) { log.push_back(m); };
  const DCNParams p = train_dcn(train, prop, cfg, rng, hooks);

  const Vector ite = predict_deterministic(p, test.X).ite();
  const double mse = (ite.array() - 2.0).square().mean();
  EXPECT_LT(mse, 0.25);

  ASSERT_EQ(log.size(), 200u);
  EXPECT_EQ(log.front().phase, 0);
  EXPECT_EQ(log[1].phase, 1);
  EXPECT_LT(log[198].factual_mse, log[0].factual_mse);  // last control epoch vs first
  EXPECT_LT(log[199].factual_mse, log[1].factual_mse);
}

namespace {

DCNParams constant_heads(double c0, double c1) {
  Rng rng(0);
  DCNParams p = init_dcn(2, DCNShape{{3}, {2}}, rng);
  for (auto* s : {&p.shared, &p.head0, &p.head1})
    for (auto& L : s->layers) {
      L.W.setZero();
      L.b.setZero();
    }
  p.head0.layers.back().b(0) = c0;
  p.head1.layers.back().b(0) = c1;
  return p;
}

}  // namespace

TEST(FactualMse, HandBuiltTwoRows) {
  ObservationalDataset b;
  b.X = Matrix::Zero(2, 2);
  b.W.resize(2);
  b.W << 0, 1;
  b.Y.resize(2);
  b.Y << 0.0, 1.0;
  EXPECT_DOUBLE_EQ(factual_mse(constant_heads(1.0, 3.0), b), 2.5);
}

TEST(FactualMse, PerfectAndConstantResidual) {
  ObservationalDataset b;
  b.X = Matrix::Ones(3, 2);
  b.W.resize(3);
  b.W << 0, 1, 1;
  b.Y = Vector::Constant(3, 4.0);
  EXPECT_EQ(factual_mse(constant_heads(4.0, 4.0), b), 0.0);
  EXPECT_DOUBLE_EQ(factual_mse(constant_heads(0.0, 0.0), b), 16.0);
}

TEST(FactualMse, EmptyBatchRejected) {
  ObservationalDataset b;
  b.X.resize(0, 2);
  b.W.resize(0);
  b.Y.resize(0);
  EXPECT_THROW(factual_mse(constant_heads(0, 0), b), std::invalid_argument);
}

TEST(EpochLog, JsonLines) {
  std::ostringstream out;
  const TrainHooks hooks = json_epoch_logger(out);
  hooks.on_epoch({3, 0, 0.5});
  hooks.on_epoch({4, 1, 1.25});
  EXPECT_EQ(out.str(),
            "{\"epoch\":3,\"phase\":\"control\",\"factual_mse\":0.5}\n"
            "{\"epoch\":4,\"phase\":\"treated\",\"factual_mse\":1.25}\n");
}
