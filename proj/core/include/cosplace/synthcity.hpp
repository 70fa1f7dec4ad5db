#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "cosplace/embed.hpp"
#include "cosplace/geodesy.hpp"
#include "cosplace/ingest.hpp"
#include "cosplace/partition.hpp"

namespace cosplace {

/// A synthetic city: places on a jittered grid, several viewing directions per
/// place, each (place, direction) a "scene" with its own latent appearance.
/// Feature maps are a fixed random linear lift of the scene latent plus a
/// per-image nuisance component, spatial noise and, for queries, a domain shift.
struct CityConfig {
  double extent_m = 400.0;
  double place_spacing_m = 40.0;
  double place_jitter_m = 3.0;
  int headings_per_place = 4;
  int images_per_place_heading = 12;
  int queries_per_place_heading = 1;
  int latent_dim = 32;
  int channels = 48;
  int height = 4;
  int width = 4;
  double signal_offset = 2.0;   // constant activation shared by every image
  double noise_sigma = 0.25;    // i.i.d. per activation
  int nuisance_dim = 8;
  double nuisance_sigma = 3.0;  // per-image appearance change along a fixed subspace
  double domain_shift_sigma = 0.3;
  // Jitter is kept below a quarter of these so every scene stays in one class.
  double class_cell_m = 10.0;
  int class_heading_deg = 30;
  double origin_east = 550000.0;
  double origin_north = 4180000.0;
  UtmZone zone{10, Hemisphere::kNorth};
  std::uint64_t seed = 0;

  int places_per_side() const;
  void validate() const;
};

struct SyntheticWorld {
  CityConfig config;
  std::vector<ImageRecord> records;  // database / training images
  std::vector<ImageRecord> queries;  // domain-shifted query images
  FeatureStore features;             // both records and queries
  std::vector<Eigen::VectorXd> latents;         // unit norm, one per scene
  std::map<std::string, int, std::less<>> scene_of;  // image id -> scene index
  double max_cross_similarity = 0.0;  // largest |<latent_a, latent_b>| over distinct scenes
};

/// Fully deterministic in cfg.seed. Throws kInvalidConfig when the extent
/// cannot hold one place.
SyntheticWorld generate_city(const CityConfig& cfg);

/// Unit-normalized latent of the image's scene. Throws kNotFound.
Descriptor oracle_descriptor(const SyntheticWorld& world, std::string_view image_id);

/// Oracle descriptors as 1x1 feature maps (channels = latent_dim), so they can
/// travel through the ordinary feature-store file format.
FeatureStore oracle_feature_store(const SyntheticWorld& world);

struct Violation {
  int property = 0;  // 1..4
  std::vector<ClassId> classes;
  std::string message;
};

struct ViolationReport {
  std::vector<Violation> violations;
  bool property4_checked = false;
  std::size_t image_pairs_checked = 0;
  std::size_t class_pairs_checked = 0;

  bool ok() const { return violations.empty(); }
};

/// Exhaustive check of the four group properties straight from their
/// definitions (quantization, modular grouping, pairwise separation,
/// adjacency), without calling into the partition module's logic.
ViolationReport oracle_pairwise_check(std::span<const ImageRecord> records,
                                      const Partition& partition);
ViolationReport oracle_pairwise_check(const SyntheticWorld& world, const Partition& partition);

}  // namespace cosplace
