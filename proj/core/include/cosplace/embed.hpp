#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace cosplace {

/// C x H x W activations standing in for a backbone output. Row-major
/// (channel, row, column).
struct FeatureMap {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> values;

  FeatureMap() = default;
  FeatureMap(int c, int h, int w) : channels(c), height(h), width(w), values(std::size_t(c) * h * w) {}

  std::size_t spatial() const { return std::size_t(height) * width; }
  float& at(int c, int y, int x) { return values[(std::size_t(c) * height + y) * width + x]; }
  float at(int c, int y, int x) const { return values[(std::size_t(c) * height + y) * width + x]; }

  friend bool operator==(const FeatureMap&, const FeatureMap&) = default;
};

using Descriptor = Eigen::VectorXd;

enum class PoolingKind : std::uint8_t { kGem = 0, kAverage = 1, kMax = 2 };

std::string_view pooling_name(PoolingKind kind);
PoolingKind parse_pooling(std::string_view name);

struct Pooling {
  PoolingKind kind = PoolingKind::kGem;
  double p = 3.0;  // GeM exponent, ignored otherwise
};

/// Per-channel pooling. GeM rectifies at zero first and requires p >= 1.
/// Throws kNonFinite on non-finite input, kDomain on a bad exponent.
Eigen::VectorXd pool(const FeatureMap& fm, const Pooling& pooling);

/// Pooling -> affine projection to D dimensions -> L2 normalization.
struct EmbeddingModel {
  Pooling pooling;
  bool learn_p = false;
  bool has_bias = true;
  Eigen::MatrixXd projection;  // D x C
  Eigen::VectorXd bias;        // D (all zero and frozen when !has_bias)

  int output_dim() const { return static_cast<int>(projection.rows()); }
  int input_channels() const { return static_cast<int>(projection.cols()); }

  /// Throws kInvalidConfig for empty or non-finite parameters.
  void validate() const;

  friend bool operator==(const EmbeddingModel& a, const EmbeddingModel& b);
};

struct EmbedConfig {
  int output_dim = 512;
  Pooling pooling;
  bool learn_p = false;
  bool has_bias = true;
};

/// Gaussian projection with std 1/sqrt(C), zero bias. Deterministic in seed.
EmbeddingModel new_embedding_model(int input_channels, const EmbedConfig& cfg,
                                   std::uint64_t seed);

/// Intermediates of one forward pass, reused by backward.
struct ForwardCache {
  Eigen::VectorXd pooled;
  Eigen::VectorXd pre_norm;
  double norm = 0.0;
  Descriptor descriptor;
  // GeM only: d pooled_c / d p.
  Eigen::VectorXd pooled_dp;
};

/// Throws kDimension on channel mismatch and kDomain when the projected vector
/// is zero (no direction to normalize).
Descriptor forward(const EmbeddingModel& m, const FeatureMap& fm);
ForwardCache forward_with_cache(const EmbeddingModel& m, const FeatureMap& fm);

struct ModelGradients {
  Eigen::MatrixXd projection;
  Eigen::VectorXd bias;
  double p = 0.0;  // only meaningful for a learnable GeM exponent

  static ModelGradients zeros_like(const EmbeddingModel& m);
  ModelGradients& operator+=(const ModelGradients& other);
};

ModelGradients backward(const EmbeddingModel& m, const FeatureMap& fm,
                        const Eigen::VectorXd& grad_descriptor);
ModelGradients backward(const EmbeddingModel& m, const ForwardCache& cache,
                        const Eigen::VectorXd& grad_descriptor);

/// Removes the component of `grad` along the unit vector `d` (the Jacobian of
/// L2 normalization evaluated at a unit vector).
Eigen::VectorXd tangent_projection(const Descriptor& d, const Eigen::VectorXd& grad);

// Checkpoint serialization (inference model only: MODL + META sections).

inline constexpr std::string_view kCheckpointMagic = "COSPLACE";
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint32_t kKindInferenceModel = 1;
inline constexpr std::uint32_t kKindTrainingState = 2;

std::string encode_model_section(const EmbeddingModel& m);
EmbeddingModel decode_model_section(std::string_view payload);

std::string save_model(const EmbeddingModel& m, std::string_view metadata = {});
EmbeddingModel load_model(std::string_view bytes, std::string* metadata = nullptr);

/// Feature maps keyed by image id.
class FeatureStore {
 public:
  void insert(std::string key, FeatureMap fm);
  const FeatureMap& at(std::string_view key) const;  // throws kNotFound
  bool contains(std::string_view key) const;
  std::size_t size() const { return maps_.size(); }
  const std::map<std::string, FeatureMap, std::less<>>& entries() const { return maps_; }

  std::string serialize() const;
  static FeatureStore deserialize(std::string_view bytes);

 private:
  std::map<std::string, FeatureMap, std::less<>> maps_;
};

}  // namespace cosplace
