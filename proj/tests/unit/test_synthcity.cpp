#include <gtest/gtest.h>

#include <algorithm>

#include "cosplace/error.hpp"
#include "cosplace/partition.hpp"
#include "cosplace/retrieval.hpp"
#include "cosplace/synthcity.hpp"

namespace cosplace {
namespace {

CityConfig small_city(std::uint64_t seed = 1) {
  CityConfig cfg;
  cfg.extent_m = 160.0;
  cfg.images_per_place_heading = 3;
  cfg.channels = 12;
  cfg.latent_dim = 16;
  cfg.height = 2;
  cfg.width = 2;
  cfg.seed = seed;
  return cfg;
}

TEST(City, DefaultCounts) {
  const SyntheticWorld world = generate_city(CityConfig{});
  EXPECT_EQ(world.records.size(), 4800u);
  EXPECT_EQ(world.queries.size(), 400u);
  EXPECT_EQ(world.latents.size(), 400u);
  EXPECT_EQ(world.features.size(), 5200u);
}

TEST(City, Deterministic) {
  const SyntheticWorld a = generate_city(small_city(5));
  const SyntheticWorld b = generate_city(small_city(5));
  EXPECT_EQ(a.records, b.records);
  EXPECT_EQ(a.queries, b.queries);
  EXPECT_EQ(a.features.serialize(), b.features.serialize());
  const SyntheticWorld c = generate_city(small_city(6));
  EXPECT_NE(a.features.serialize(), c.features.serialize());
}

TEST(City, NoiselessScenesShareFeatures) {
  CityConfig cfg = small_city();
  cfg.noise_sigma = 0.0;
  cfg.nuisance_sigma = 0.0;
  const SyntheticWorld world = generate_city(cfg);
  for (const ImageRecord& r : world.records) {
    const std::string first = r.id.substr(0, r.id.size() - 3) + "000";
    EXPECT_EQ(world.features.at(r.id), world.features.at(first));
  }
}

TEST(City, GeometryStaysInBounds) {
  const CityConfig cfg = small_city();
  const SyntheticWorld world = generate_city(cfg);
  for (const auto* list : {&world.records, &world.queries}) {
    for (const ImageRecord& r : *list) {
      EXPECT_GE(r.pose.heading, 0.0);
      EXPECT_LT(r.pose.heading, 360.0);
      EXPECT_GE(r.pose.east, cfg.origin_east);
      EXPECT_LE(r.pose.east, cfg.origin_east + cfg.extent_m);
      EXPECT_GE(r.pose.north, cfg.origin_north);
      EXPECT_LE(r.pose.north, cfg.origin_north + cfg.extent_m);
      EXPECT_EQ(r.zone, cfg.zone);
    }
  }
}

TEST(City, EachSceneIsOneClass) {
  const SyntheticWorld world = generate_city(small_city());
  PartitionConfig pc;
  pc.min_images_per_class = 1;
  std::map<int, std::set<ClassId>> classes_of_scene;
  for (const auto* list : {&world.records, &world.queries}) {
    for (const ImageRecord& r : *list) classes_of_scene[world.scene_of.at(r.id)].insert(assign_class(r.pose, pc));
  }
  std::set<ClassId> seen;
  for (const auto& [scene, classes] : classes_of_scene) {
    ASSERT_EQ(classes.size(), 1u) << scene;
    EXPECT_TRUE(seen.insert(*classes.begin()).second);
  }
}

TEST(City, LatentsSeparated) {
  const SyntheticWorld orth = generate_city(small_city());  // 64 scenes > 16 dims
  EXPECT_LT(orth.max_cross_similarity, 1.0 - 1e-3);
  CityConfig cfg = small_city();
  cfg.latent_dim = 64;
  const SyntheticWorld exact = generate_city(cfg);
  EXPECT_LT(exact.max_cross_similarity, 1e-12);
}

TEST(Oracle, DescriptorsAndPerfectRecall) {
  const SyntheticWorld world = generate_city(small_city());
  EXPECT_EQ(oracle_descriptor(world, "p0000_h0_000"), oracle_descriptor(world, "p0000_h0_002"));
  EXPECT_THROW(oracle_descriptor(world, "nope"), Error);

  std::vector<Descriptor> d;
  std::vector<std::string> ids;
  std::vector<GeoPose> poses;
  for (const ImageRecord& r : world.records) {
    d.push_back(oracle_descriptor(world, r.id));
    ids.push_back(r.id);
    poses.push_back(r.pose);
  }
  const DescriptorIndex index = build_index(d, ids, poses, world.config.zone);
  std::vector<Query> queries;
  for (const ImageRecord& q : world.queries) queries.push_back({oracle_descriptor(world, q.id), q.pose, q.zone});
  EXPECT_EQ(recall_at_n(index, queries, kDefaultRecallKs, 25.0).recall_at(1), 1.0);

  const FeatureStore store = oracle_feature_store(world);
  EXPECT_EQ(store.size(), world.features.size());
  EXPECT_EQ(store.at("q0001_h2_000").channels, world.config.latent_dim);
}

TEST(Oracle, PropertiesHoldOnValidConfigs) {
  const SyntheticWorld world = generate_city(small_city(3));
  for (int n : {1, 2, 5}) {
    for (int l : {1, 2, 3}) {
      PartitionConfig pc;
      pc.translation_separation = n;
      pc.heading_separation = l;
      pc.heading_bin_deg = 30;
      pc.min_images_per_class = 2;
      const Partition p = build_partition(world.records, pc);
      const ViolationReport report = oracle_pairwise_check(world, p);
      EXPECT_TRUE(report.ok()) << (report.ok() ? "" : report.violations[0].message);
      EXPECT_EQ(report.property4_checked, n > 1 && l > 1);
    }
  }
}

TEST(Oracle, ReportsCorruptedClass) {
  const SyntheticWorld world = generate_city(small_city(4));
  PartitionConfig pc;
  pc.min_images_per_class = 2;
  Partition p = build_partition(world.records, pc);
  const ClassId victim = p.class_members.begin()->first;
  const GroupId from = p.class_group.at(victim);
  const GroupId to{(from.u + 1) % pc.translation_separation, from.v, from.w};
  p.class_group[victim] = to;
  auto& list = p.group_classes[from];
  list.erase(std::find(list.begin(), list.end(), victim));
  p.group_classes[to].push_back(victim);

  const ViolationReport report = oracle_pairwise_check(world, p);
  ASSERT_FALSE(report.ok());
  bool property1 = false;
  for (const Violation& v : report.violations) {
    EXPECT_NE(std::find(v.classes.begin(), v.classes.end(), victim), v.classes.end()) << v.message;
    property1 |= v.property == 1 && v.classes == std::vector<ClassId>{victim};
  }
  EXPECT_TRUE(property1);
}

TEST(Oracle, SingleTranslationGroupSkipsAdjacency) {
  const SyntheticWorld world = generate_city(small_city(7));
  PartitionConfig pc;
  pc.translation_separation = 1;
  pc.min_images_per_class = 1;
  const ViolationReport report = oracle_pairwise_check(world, build_partition(world.records, pc));
  EXPECT_TRUE(report.ok());
  EXPECT_FALSE(report.property4_checked);
  EXPECT_EQ(report.class_pairs_checked, 0u);
}

TEST(City, Errors) {
  CityConfig cfg;
  cfg.extent_m = 10.0;
  EXPECT_THROW(generate_city(cfg), Error);
  cfg = CityConfig{};
  cfg.noise_sigma = -1.0;
  EXPECT_THROW(generate_city(cfg), Error);
}

}  // namespace
}  // namespace cosplace
