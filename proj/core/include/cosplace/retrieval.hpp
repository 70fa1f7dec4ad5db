#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "cosplace/embed.hpp"
#include "cosplace/geodesy.hpp"
#include "cosplace/partition.hpp"

namespace cosplace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Immutable database of unit-norm descriptors with aligned ids and poses.
class DescriptorIndex {
 public:
  DescriptorIndex() = default;

  std::size_t size() const { return ids_.size(); }
  int dim() const { return static_cast<int>(matrix_.cols()); }
  const std::vector<std::string>& ids() const { return ids_; }
  const std::vector<GeoPose>& poses() const { return poses_; }
  const RowMatrix& matrix() const { return matrix_; }
  const UtmZone& zone() const { return zone_; }

  std::string serialize() const;
  static DescriptorIndex deserialize(std::string_view bytes);

  friend DescriptorIndex build_index(std::span<const Descriptor>, std::span<const std::string>,
                                     std::span<const GeoPose>, const UtmZone&);

 private:
  std::vector<std::string> ids_;
  RowMatrix matrix_;
  std::vector<GeoPose> poses_;
  UtmZone zone_{10, Hemisphere::kNorth};
};

/// Throws kNotNormalized naming the offending id (tolerance 1e-5),
/// kDuplicateId, or kDimension on length mismatch.
DescriptorIndex build_index(std::span<const Descriptor> descriptors,
                            std::span<const std::string> ids,
                            std::span<const GeoPose> poses, const UtmZone& zone);

struct Neighbor {
  std::size_t row = 0;
  std::string id;
  double similarity = 0.0;

  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

/// Operation counts of the exhaustive scan (multiply-adds and rows visited).
struct SearchCounters {
  std::uint64_t multiply_adds = 0;
  std::uint64_t rows_scanned = 0;
};

/// Exhaustive top-k by inner product, descending; equal similarities keep
/// insertion order. Throws kDomain for k < 1, kDimension on size mismatch.
std::vector<Neighbor> knn(const DescriptorIndex& index, const Descriptor& query, std::size_t k,
                          SearchCounters* counters = nullptr);

struct Query {
  Descriptor descriptor;
  GeoPose pose;
  UtmZone zone{10, Hemisphere::kNorth};
};

inline constexpr double kDefaultThresholdMeters = 25.0;

struct EvalReport {
  std::string label = "model";
  double threshold_m = kDefaultThresholdMeters;
  std::size_t num_queries = 0;
  std::vector<int> ks;
  std::vector<double> recall;  // aligned with ks, fractions in [0, 1]
  // 1-based rank of the first database item within threshold among the top
  // max(ks) results; nullopt when none.
  std::vector<std::optional<int>> first_correct_rank;

  double recall_at(int k) const;  // throws kNotFound for an unreported k

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

/// A query hits at K when any of its top-K results lies within threshold_m.
/// Throws kDomain for empty queries or unsorted Ks, kZoneMismatch when a
/// query is not in the index's zone.
EvalReport recall_at_n(const DescriptorIndex& index, std::span<const Query> queries,
                       std::span<const int> ks, double threshold_m = kDefaultThresholdMeters,
                       int threads = 1);

inline const std::vector<int> kDefaultRecallKs = {1, 5, 10, 20};

nlohmann::json report_to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);

/// Markdown-style table with one row per report and R@K columns in percent.
std::string format_report_table(std::span<const EvalReport> reports);

}  // namespace cosplace
