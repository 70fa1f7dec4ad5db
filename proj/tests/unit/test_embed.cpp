#include <gtest/gtest.h>

#include <random>

#include "cosplace/error.hpp"
#include "cosplace/embed.hpp"
#include "oracles.hpp"

namespace cosplace {
namespace {

FeatureMap random_map(std::mt19937_64& rng, int c, int h, int w, double lo = 0.0, double hi = 3.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  FeatureMap fm(c, h, w);
  for (auto& v : fm.values) v = static_cast<float>(u(rng));
  return fm;
}

EmbeddingModel random_model(std::mt19937_64& rng, int c, int d, PoolingKind kind, double p = 3.0) {
  EmbedConfig cfg;
  cfg.output_dim = d;
  cfg.pooling = {kind, p};
  cfg.learn_p = kind == PoolingKind::kGem;
  EmbeddingModel m = new_embedding_model(c, cfg, rng());
  std::normal_distribution<double> n(0.0, 0.3);
  for (Eigen::Index i = 0; i < m.bias.size(); ++i) m.bias[i] = n(rng);
  return m;
}

TEST(Pool, GemWithPOneIsAverage) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 50; ++i) {
    const FeatureMap fm = random_map(rng, 5, 3, 4);
    const Eigen::VectorXd gem = pool(fm, {PoolingKind::kGem, 1.0});
    const Eigen::VectorXd avg = pool(fm, {PoolingKind::kAverage, 0.0});
    EXPECT_LT((gem - avg).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Pool, ConstantMapIsFixedPoint) {
  FeatureMap fm(3, 2, 2);
  std::fill(fm.values.begin(), fm.values.end(), 2.5f);
  for (auto kind : {PoolingKind::kGem, PoolingKind::kAverage, PoolingKind::kMax}) {
    const Eigen::VectorXd v = pool(fm, {kind, 3.0});
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(v[c], 2.5, 1e-12);
  }
}

TEST(Pool, GemHandValue) {
  FeatureMap fm(1, 1, 2);
  fm.values = {1.0f, 7.0f};
  EXPECT_NEAR(pool(fm, {PoolingKind::kGem, 3.0})[0], 5.561297766521235, 1e-12);
}

TEST(Pool, GemRectifiesNegativeValues) {
  FeatureMap fm(1, 1, 2);
  fm.values = {-5.0f, 4.0f};
  EXPECT_NEAR(pool(fm, {PoolingKind::kGem, 1.0})[0], 2.0, 1e-12);
}

TEST(Pool, GemMonotoneInPAndApproachesMax) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 20; ++i) {
    const FeatureMap fm = random_map(rng, 4, 3, 3, 0.0, 5.0);
    Eigen::VectorXd prev = pool(fm, {PoolingKind::kGem, 1.0});
    for (double p = 1.5; p <= 64.0; p *= 1.5) {
      const Eigen::VectorXd cur = pool(fm, {PoolingKind::kGem, p});
      EXPECT_TRUE(((cur - prev).array() >= -1e-12).all());
      prev = cur;
    }
    const Eigen::VectorXd mx = pool(fm, {PoolingKind::kMax, 0.0});
    const Eigen::VectorXd g64 = pool(fm, {PoolingKind::kGem, 64.0});
    for (int c = 0; c < 4; ++c) EXPECT_GE(g64[c], 0.95 * mx[c]);
  }
}

TEST(Pool, Errors) {
  FeatureMap fm(1, 1, 2);
  fm.values = {1.0f, std::numeric_limits<float>::quiet_NaN()};
  EXPECT_THROW(pool(fm, {PoolingKind::kAverage, 0.0}), Error);
  fm.values = {1.0f, 2.0f};
  EXPECT_THROW(pool(fm, {PoolingKind::kGem, 0.5}), Error);
}

TEST(Forward, OneHotThroughIdentity) {
  EmbeddingModel m;
  m.pooling = {PoolingKind::kAverage, 0.0};
  m.projection = Eigen::MatrixXd::Identity(3, 3);
  m.bias = Eigen::VectorXd::Zero(3);
  FeatureMap fm(3, 1, 1);
  fm.values = {0.0f, 1.0f, 0.0f};
  const Descriptor d = forward(m, fm);
  EXPECT_EQ(d, Eigen::Vector3d(0.0, 1.0, 0.0));
}

TEST(Forward, PositiveScalingOfInputIsAbsorbed) {
  std::mt19937_64 rng(3);
  EmbeddingModel m = random_model(rng, 6, 4, PoolingKind::kAverage);
  m.bias.setZero();
  const FeatureMap fm = random_map(rng, 6, 2, 2);
  FeatureMap scaled = fm;
  for (auto& v : scaled.values) v *= 10.0f;
  EXPECT_LT((forward(m, fm) - forward(m, scaled)).norm(), 1e-6);
}

TEST(Forward, UnitNormAndJointScaleInvariance) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 100; ++i) {
    EmbeddingModel m = random_model(rng, 5, 7, static_cast<PoolingKind>(i % 3));
    const FeatureMap fm = random_map(rng, 5, 3, 2);
    const Descriptor d = forward(m, fm);
    EXPECT_NEAR(d.norm(), 1.0, 1e-6);
    EmbeddingModel scaled = m;
    scaled.projection *= 3.7;
    scaled.bias *= 3.7;
    EXPECT_LT((forward(scaled, fm) - d).norm(), 1e-12);
  }
}

TEST(Forward, Errors) {
  EmbeddingModel m;
  m.pooling = {PoolingKind::kAverage, 0.0};
  m.projection = Eigen::MatrixXd::Zero(2, 2);
  m.bias = Eigen::VectorXd::Zero(2);
  FeatureMap fm(2, 1, 1);
  fm.values = {1.0f, 1.0f};
  EXPECT_THROW(forward(m, fm), Error);  // zero vector
  FeatureMap wrong(3, 1, 1);
  EXPECT_THROW(forward(m, wrong), Error);
}

// Flattens (projection, bias, p) for finite differences.
std::vector<double> flatten(const EmbeddingModel& m) {
  std::vector<double> x(m.projection.data(), m.projection.data() + m.projection.size());
  x.insert(x.end(), m.bias.data(), m.bias.data() + m.bias.size());
  x.push_back(m.pooling.p);
  return x;
}

EmbeddingModel unflatten(EmbeddingModel m, const std::vector<double>& x) {
  std::copy(x.begin(), x.begin() + m.projection.size(), m.projection.data());
  std::copy(x.begin() + m.projection.size(), x.begin() + m.projection.size() + m.bias.size(),
            m.bias.data());
  m.pooling.p = x.back();
  return m;
}

double gradient_check(std::mt19937_64& rng, int c, int h, int w, int d, PoolingKind kind) {
  const EmbeddingModel m = random_model(rng, c, d, kind, 2.0 + std::uniform_real_distribution<double>(0, 2)(rng));
  const FeatureMap fm = random_map(rng, c, h, w, 0.05, 3.0);
  Eigen::VectorXd r(d);
  std::normal_distribution<double> n;
  for (int i = 0; i < d; ++i) r[i] = n(rng);

  const ModelGradients g = backward(m, fm, r);
  std::vector<double> analytic(g.projection.data(), g.projection.data() + g.projection.size());
  analytic.insert(analytic.end(), g.bias.data(), g.bias.data() + g.bias.size());
  analytic.push_back(kind == PoolingKind::kGem ? g.p : 0.0);

  auto objective = [&](const std::vector<double>& x) { return r.dot(forward(unflatten(m, x), fm)); };
  const auto numeric = oracle::central_difference(objective, flatten(m), 1e-5);
  return oracle::relative_error(analytic, numeric);
}

TEST(Backward, FiniteDifferenceSmallInstance) {
  std::mt19937_64 rng(5);
  for (auto kind : {PoolingKind::kGem, PoolingKind::kAverage, PoolingKind::kMax}) {
    EXPECT_LT(gradient_check(rng, 4, 2, 2, 3, kind), 1e-4);
  }
}

TEST(Backward, FiniteDifferenceRandomInstances) {
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<int> dim(1, 6);
  for (int i = 0; i < 100; ++i) {
    const auto kind = static_cast<PoolingKind>(i % 3);
    EXPECT_LT(gradient_check(rng, dim(rng), dim(rng), dim(rng), dim(rng) + 1, kind), 1e-4) << i;
  }
}

TEST(Backward, DescriptorDirectionHasNoGradient) {
  std::mt19937_64 rng(7);
  const EmbeddingModel m = random_model(rng, 5, 4, PoolingKind::kGem);
  const FeatureMap fm = random_map(rng, 5, 2, 2);
  const Descriptor d = forward(m, fm);
  const ModelGradients g = backward(m, fm, 2.5 * d);
  EXPECT_LT(g.projection.norm(), 1e-12);
  EXPECT_LT(g.bias.norm(), 1e-12);
  EXPECT_LT(std::abs(g.p), 1e-12);
}

TEST(Backward, ZeroUpstreamGradient) {
  std::mt19937_64 rng(8);
  const EmbeddingModel m = random_model(rng, 5, 4, PoolingKind::kGem);
  const FeatureMap fm = random_map(rng, 5, 2, 2);
  const ModelGradients g = backward(m, fm, Eigen::VectorXd::Zero(4));
  EXPECT_EQ(g.projection.norm(), 0.0);
  EXPECT_EQ(g.bias.norm(), 0.0);
  EXPECT_EQ(g.p, 0.0);
}

TEST(Checkpoint, RoundTripAndStructure) {
  std::mt19937_64 rng(9);
  const EmbeddingModel m = random_model(rng, 6, 5, PoolingKind::kGem);
  const std::string bytes = save_model(m, "{\"note\":1}");
  std::string meta;
  EXPECT_EQ(load_model(bytes, &meta), m);
  EXPECT_EQ(meta, "{\"note\":1}");
  EXPECT_EQ(save_model(load_model(bytes), meta), bytes);
  std::string truncated = bytes.substr(0, bytes.size() - 3);
  EXPECT_THROW(load_model(truncated), Error);
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(load_model(bad), Error);
}

TEST(FeatureStore, RoundTrip) {
  std::mt19937_64 rng(10);
  FeatureStore store;
  for (int i = 0; i < 20; ++i) store.insert("k" + std::to_string(i), random_map(rng, 3, 2, 1 + i % 3));
  const FeatureStore again = FeatureStore::deserialize(store.serialize());
  EXPECT_EQ(again.entries(), store.entries());
  EXPECT_THROW(store.at("missing"), Error);
}

}  // namespace
}  // namespace cosplace
