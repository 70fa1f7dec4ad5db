#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace cosplace {

struct ImageRecord;

/// Capture position (UTM metres) and compass heading (degrees, [0, 360)).
struct GeoPose {
  double east = 0.0;
  double north = 0.0;
  double heading = 0.0;

  friend bool operator==(const GeoPose&, const GeoPose&) = default;
};

/// Wraps any finite heading into [0, 360).
double normalize_heading(double degrees);

/// Smallest angle between two headings, in [0, 180].
double heading_difference(double a, double b);

struct PartitionConfig {
  double cell_size_m = 10.0;      // M
  int heading_bin_deg = 30;       // alpha, must divide 360
  int translation_separation = 5; // N
  int heading_separation = 2;     // L
  int min_images_per_class = 10;

  int heading_bins() const { return 360 / heading_bin_deg; }
  int group_count() const {
    return translation_separation * translation_separation * heading_separation;
  }

  /// Throws kInvalidConfig when an invariant does not hold.
  void validate() const;

  friend bool operator==(const PartitionConfig&, const PartitionConfig&) = default;
};

/// Class index triple: floor-quantized east, north and heading.
struct ClassId {
  std::int64_t east = 0;
  std::int64_t north = 0;
  std::int32_t heading = 0;

  friend auto operator<=>(const ClassId&, const ClassId&) = default;
};

/// Group index triple (u, v, w) with u, v in [0, N) and w in [0, L).
struct GroupId {
  std::int32_t u = 0;
  std::int32_t v = 0;
  std::int32_t w = 0;

  friend auto operator<=>(const GroupId&, const GroupId&) = default;
};

std::string to_string(const ClassId& c);
std::string to_string(const GroupId& g);

ClassId assign_class(const GeoPose& pose, const PartitionConfig& cfg);
GroupId assign_group(const ClassId& c, const PartitionConfig& cfg);

/// All N*N*L groups in lexicographic (u, v, w) order.
std::vector<GroupId> enumerate_groups(const PartitionConfig& cfg);

/// True when an infinitesimal change of position or heading moves an image
/// from one class to the other: Chebyshev distance <= 1 on the cell indices and
/// circular distance <= 1 on the heading bins.
bool adjacent(const ClassId& a, const ClassId& b, const PartitionConfig& cfg);

struct Partition {
  PartitionConfig config;
  std::map<ClassId, std::vector<std::string>> class_members;  // ids sorted
  std::map<ClassId, GroupId> class_group;
  // Only non-empty groups appear. The position of a class in its list is its
  // label index inside that group's classifier head.
  std::map<GroupId, std::vector<ClassId>> group_classes;
  std::int64_t discarded_count = 0;        // classes dropped by the size filter
  std::int64_t discarded_image_count = 0;  // images inside those classes

  const std::vector<ClassId>& classes_in(const GroupId& g) const;

  friend bool operator==(const Partition&, const Partition&) = default;
};

/// Assigns every record to its class and group, then drops classes with fewer
/// than min_images_per_class members. The result does not depend on record
/// order. Throws kEmptyPartition when no class survives and kZoneMismatch when
/// records span more than one UTM zone.
Partition build_partition(std::span<const ImageRecord> records,
                          const PartitionConfig& cfg);

struct PartitionStats {
  std::int64_t group_count = 0;  // N*N*L, including empty groups
  std::int64_t retained_classes = 0;
  std::int64_t retained_images = 0;
  std::int64_t discarded_classes = 0;
  std::int64_t discarded_images = 0;
  std::map<GroupId, std::int64_t> classes_per_group;  // every enumerated group
  std::map<GroupId, std::int64_t> images_per_group;
  std::int64_t min_class_size = 0;
  std::int64_t max_class_size = 0;
  double mean_class_size = 0.0;
  std::map<std::int64_t, std::int64_t> class_size_histogram;  // size -> #classes

  friend bool operator==(const PartitionStats&, const PartitionStats&) = default;
};

PartitionStats partition_stats(const Partition& p);

inline constexpr int kPartitionFormatVersion = 1;

nlohmann::json partition_to_json(const Partition& p);
/// Throws kParse on schema or version mismatch, kInvalidConfig when the
/// stored tables are inconsistent with the stored config.
Partition partition_from_json(const nlohmann::json& doc);

void to_json(nlohmann::json& j, const PartitionConfig& cfg);
void from_json(const nlohmann::json& j, PartitionConfig& cfg);

}  // namespace cosplace
