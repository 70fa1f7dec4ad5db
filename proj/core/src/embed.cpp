#include "cosplace/embed.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "cosplace/binary_io.hpp"
#include "cosplace/error.hpp"

namespace cosplace {

std::string_view pooling_name(PoolingKind kind) {
  switch (kind) {
    case PoolingKind::kGem: return "gem";
    case PoolingKind::kAverage: return "avg";
    case PoolingKind::kMax: return "max";
  }
  return "?";
}

PoolingKind parse_pooling(std::string_view name) {
  if (name == "gem") return PoolingKind::kGem;
  if (name == "avg" || name == "average") return PoolingKind::kAverage;
  if (name == "max") return PoolingKind::kMax;
  throw Error(ErrorCode::kInvalidConfig, "unknown pooling '" + std::string(name) + "'");
}

namespace {

void check_feature_map(const FeatureMap& fm) {
  if (fm.channels < 1 || fm.height < 1 || fm.width < 1 ||
      fm.values.size() != std::size_t(fm.channels) * fm.spatial()) {
    throw Error(ErrorCode::kDimension, "feature map has inconsistent shape");
  }
}

// GeM of one channel, computed relative to the channel maximum so large p
// cannot overflow. Also returns d(result)/dp.
std::pair<double, double> gem_channel(const float* x, std::size_t count, double p) {
  double peak = 0.0;
  for (std::size_t i = 0; i < count; ++i) peak = std::max(peak, static_cast<double>(x[i]));
  if (peak <= 0.0) return {0.0, 0.0};
  double sum = 0.0;
  double sum_log = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const double r = std::max(0.0, static_cast<double>(x[i])) / peak;
    if (r <= 0.0) continue;
    const double rp = std::pow(r, p);
    sum += rp;
    sum_log += rp * std::log(r);
  }
  const double n = static_cast<double>(count);
  const double mean = sum / n;
  const double value = peak * std::pow(mean, 1.0 / p);
  const double dlog_dp = -std::log(mean) / (p * p) + (sum_log / n) / (p * mean);
  return {value, value * dlog_dp};
}

Eigen::VectorXd pool_impl(const FeatureMap& fm, const Pooling& pooling,
                          Eigen::VectorXd* d_dp) {
  check_feature_map(fm);
  for (float v : fm.values) {
    if (!std::isfinite(v)) throw Error(ErrorCode::kNonFinite, "feature map contains non-finite values");
  }
  const std::size_t hw = fm.spatial();
  Eigen::VectorXd out(fm.channels);
  if (d_dp) d_dp->setZero(fm.channels);

  switch (pooling.kind) {
    case PoolingKind::kGem: {
      if (!(pooling.p >= 1.0) || !std::isfinite(pooling.p)) {
        throw Error(ErrorCode::kDomain, "GeM exponent must be finite and >= 1");
      }
      for (int c = 0; c < fm.channels; ++c) {
        const auto [value, grad] = gem_channel(fm.values.data() + c * hw, hw, pooling.p);
        out[c] = value;
        if (d_dp) (*d_dp)[c] = grad;
      }
      break;
    }
    case PoolingKind::kAverage:
      for (int c = 0; c < fm.channels; ++c) {
        double sum = 0.0;
        for (std::size_t i = 0; i < hw; ++i) sum += fm.values[c * hw + i];
        out[c] = sum / static_cast<double>(hw);
      }
      break;
    case PoolingKind::kMax:
      for (int c = 0; c < fm.channels; ++c) {
        const float* begin = fm.values.data() + c * hw;
        out[c] = *std::max_element(begin, begin + hw);
      }
      break;
  }
  return out;
}

}  // namespace

Eigen::VectorXd pool(const FeatureMap& fm, const Pooling& pooling) {
  return pool_impl(fm, pooling, nullptr);
}

void EmbeddingModel::validate() const {
  if (projection.rows() < 1 || projection.cols() < 1) {
    throw Error(ErrorCode::kInvalidConfig, "embedding model has an empty projection");
  }
  if (bias.size() != projection.rows()) {
    throw Error(ErrorCode::kInvalidConfig, "bias length does not match output dimension");
  }
  if (!projection.allFinite() || !bias.allFinite() || !std::isfinite(pooling.p)) {
    throw Error(ErrorCode::kNonFinite, "embedding model has non-finite parameters");
  }
}

bool operator==(const EmbeddingModel& a, const EmbeddingModel& b) {
  return a.pooling.kind == b.pooling.kind && a.pooling.p == b.pooling.p &&
         a.learn_p == b.learn_p && a.has_bias == b.has_bias &&
         a.projection.rows() == b.projection.rows() &&
         a.projection.cols() == b.projection.cols() && a.projection == b.projection &&
         a.bias.size() == b.bias.size() && a.bias == b.bias;
}

EmbeddingModel new_embedding_model(int input_channels, const EmbedConfig& cfg,
                                   std::uint64_t seed) {
  if (input_channels < 1 || cfg.output_dim < 1) {
    throw Error(ErrorCode::kInvalidConfig, "embedding dimensions must be >= 1");
  }
  EmbeddingModel m;
  m.pooling = cfg.pooling;
  m.learn_p = cfg.learn_p && cfg.pooling.kind == PoolingKind::kGem;
  m.has_bias = cfg.has_bias;
  m.projection.resize(cfg.output_dim, input_channels);
  m.bias = Eigen::VectorXd::Zero(cfg.output_dim);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(input_channels)));
  for (int r = 0; r < m.projection.rows(); ++r)
    for (int c = 0; c < m.projection.cols(); ++c) m.projection(r, c) = normal(rng);
  return m;
}

ForwardCache forward_with_cache(const EmbeddingModel& m, const FeatureMap& fm) {
  if (fm.channels != m.input_channels()) {
    throw Error(ErrorCode::kDimension, "feature map has " + std::to_string(fm.channels) +
                                           " channels, model expects " +
                                           std::to_string(m.input_channels()));
  }
  ForwardCache cache;
  cache.pooled = pool_impl(fm, m.pooling, m.pooling.kind == PoolingKind::kGem ? &cache.pooled_dp : nullptr);
  cache.pre_norm = m.projection * cache.pooled + m.bias;
  cache.norm = cache.pre_norm.norm();
  if (!(cache.norm > 0.0) || !std::isfinite(cache.norm)) {
    throw Error(ErrorCode::kDomain, "degenerate descriptor: projected vector has zero norm");
  }
  cache.descriptor = cache.pre_norm / cache.norm;
  return cache;
}

Descriptor forward(const EmbeddingModel& m, const FeatureMap& fm) {
  return forward_with_cache(m, fm).descriptor;
}

ModelGradients ModelGradients::zeros_like(const EmbeddingModel& m) {
  ModelGradients g;
  g.projection = Eigen::MatrixXd::Zero(m.projection.rows(), m.projection.cols());
  g.bias = Eigen::VectorXd::Zero(m.bias.size());
  return g;
}

ModelGradients& ModelGradients::operator+=(const ModelGradients& other) {
  projection += other.projection;
  bias += other.bias;
  p += other.p;
  return *this;
}

Eigen::VectorXd tangent_projection(const Descriptor& d, const Eigen::VectorXd& grad) {
  return grad - d * d.dot(grad);
}

ModelGradients backward(const EmbeddingModel& m, const ForwardCache& cache,
                        const Eigen::VectorXd& grad_descriptor) {
  if (grad_descriptor.size() != m.output_dim()) {
    throw Error(ErrorCode::kDimension, "descriptor gradient has wrong length");
  }
  const Eigen::VectorXd grad_pre =
      tangent_projection(cache.descriptor, grad_descriptor) / cache.norm;
  ModelGradients g;
  g.projection = grad_pre * cache.pooled.transpose();
  g.bias = m.has_bias ? grad_pre : Eigen::VectorXd::Zero(grad_pre.size());
  if (m.pooling.kind == PoolingKind::kGem && cache.pooled_dp.size() == cache.pooled.size()) {
    g.p = (m.projection.transpose() * grad_pre).dot(cache.pooled_dp);
  }
  return g;
}

ModelGradients backward(const EmbeddingModel& m, const FeatureMap& fm,
                        const Eigen::VectorXd& grad_descriptor) {
  return backward(m, forward_with_cache(m, fm), grad_descriptor);
}

std::string encode_model_section(const EmbeddingModel& m) {
  m.validate();
  io::Writer w;
  w.put(static_cast<std::uint8_t>(m.pooling.kind));
  w.put(m.pooling.p);
  w.put(static_cast<std::uint8_t>(m.learn_p));
  w.put(static_cast<std::uint8_t>(m.has_bias));
  w.put(static_cast<std::uint32_t>(m.projection.rows()));
  w.put(static_cast<std::uint32_t>(m.projection.cols()));
  // Row-major projection.
  for (int r = 0; r < m.projection.rows(); ++r)
    for (int c = 0; c < m.projection.cols(); ++c) w.put(m.projection(r, c));
  w.put_span(std::span<const double>(m.bias.data(), static_cast<std::size_t>(m.bias.size())));
  return std::string(w.view());
}

EmbeddingModel decode_model_section(std::string_view payload) {
  io::Reader r(payload, "model section");
  EmbeddingModel m;
  const auto kind = r.get<std::uint8_t>();
  if (kind > 2) throw Error(ErrorCode::kParse, "model section: unknown pooling");
  m.pooling.kind = static_cast<PoolingKind>(kind);
  m.pooling.p = r.get<double>();
  m.learn_p = r.get<std::uint8_t>() != 0;
  m.has_bias = r.get<std::uint8_t>() != 0;
  const auto rows = r.get<std::uint32_t>();
  const auto cols = r.get<std::uint32_t>();
  m.projection.resize(rows, cols);
  for (std::uint32_t i = 0; i < rows; ++i)
    for (std::uint32_t j = 0; j < cols; ++j) m.projection(i, j) = r.get<double>();
  m.bias.resize(rows);
  r.get_span(std::span<double>(m.bias.data(), rows));
  r.expect_end();
  m.validate();
  return m;
}

namespace {

std::string kind_payload(std::uint32_t kind) {
  io::Writer w;
  w.put(kind);
  return std::string(w.view());
}

}  // namespace

std::string save_model(const EmbeddingModel& m, std::string_view metadata) {
  io::Container c;
  c.magic = std::string(kCheckpointMagic);
  c.version = kCheckpointVersion;
  c.sections.push_back({io::make_tag("KIND"), kind_payload(kKindInferenceModel)});
  c.sections.push_back({io::make_tag("MODL"), encode_model_section(m)});
  c.sections.push_back({io::make_tag("META"), std::string(metadata)});
  return io::encode_container(c);
}

EmbeddingModel load_model(std::string_view bytes, std::string* metadata) {
  const io::Container c =
      io::decode_container(bytes, kCheckpointMagic, kCheckpointVersion, "checkpoint");
  if (metadata && c.count("META") == 1) *metadata = c.only("META").payload;
  // Training-state checkpoints also carry a MODL section, so both kinds load.
  return decode_model_section(c.only("MODL").payload);
}

void FeatureStore::insert(std::string key, FeatureMap fm) {
  check_feature_map(fm);
  maps_.insert_or_assign(std::move(key), std::move(fm));
}

const FeatureMap& FeatureStore::at(std::string_view key) const {
  auto it = maps_.find(key);
  if (it == maps_.end()) {
    throw Error(ErrorCode::kNotFound, "no features for '" + std::string(key) + "'");
  }
  return it->second;
}

bool FeatureStore::contains(std::string_view key) const { return maps_.find(key) != maps_.end(); }

namespace {
constexpr std::string_view kStoreMagic = "CPFSTORE";
constexpr std::uint32_t kStoreVersion = 1;
}  // namespace

std::string FeatureStore::serialize() const {
  io::Writer w;
  w.put(static_cast<std::uint64_t>(maps_.size()));
  for (const auto& [key, fm] : maps_) {
    w.put_string(key);
    w.put(static_cast<std::uint32_t>(fm.channels));
    w.put(static_cast<std::uint32_t>(fm.height));
    w.put(static_cast<std::uint32_t>(fm.width));
    w.put_span(std::span<const float>(fm.values));
  }
  io::Container c;
  c.magic = std::string(kStoreMagic);
  c.version = kStoreVersion;
  c.sections.push_back({io::make_tag("FMAP"), std::string(w.view())});
  return io::encode_container(c);
}

FeatureStore FeatureStore::deserialize(std::string_view bytes) {
  const io::Container c = io::decode_container(bytes, kStoreMagic, kStoreVersion, "feature store");
  io::Reader r(c.only("FMAP").payload, "feature store");
  FeatureStore store;
  const auto n = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < n; ++i) {
    std::string key = r.get_string();
    const auto ch = r.get<std::uint32_t>();
    const auto h = r.get<std::uint32_t>();
    const auto wd = r.get<std::uint32_t>();
    FeatureMap fm(static_cast<int>(ch), static_cast<int>(h), static_cast<int>(wd));
    r.get_span(std::span<float>(fm.values));
    store.insert(std::move(key), std::move(fm));
  }
  r.expect_end();
  return store;
}

}  // namespace cosplace
