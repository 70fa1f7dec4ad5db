#include "cosplace/partition.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "cosplace/error.hpp"
#include "cosplace/ingest.hpp"

namespace cosplace {
namespace {

std::int64_t floor_div(double value, double step) {
  return static_cast<std::int64_t>(std::floor(value / step));
}

std::int64_t positive_mod(std::int64_t value, std::int64_t modulus) {
  const std::int64_t r = value % modulus;
  return r < 0 ? r + modulus : r;
}

const std::vector<ClassId> kNoClasses;

}  // namespace

double normalize_heading(double degrees) {
  double h = std::fmod(degrees, 360.0);
  if (h < 0.0) h += 360.0;
  // fmod of a tiny negative number can round up to exactly 360.
  if (h >= 360.0) h = 0.0;
  return h;
}

double heading_difference(double a, double b) {
  const double d = std::abs(normalize_heading(a) - normalize_heading(b));
  return std::min(d, 360.0 - d);
}

void PartitionConfig::validate() const {
  auto fail = [](const std::string& what) {
    throw Error(ErrorCode::kInvalidConfig, "partition config: " + what);
  };
  if (!(cell_size_m > 0.0) || !std::isfinite(cell_size_m)) fail("M must be > 0");
  if (heading_bin_deg <= 0 || 360 % heading_bin_deg != 0) {
    fail("alpha=" + std::to_string(heading_bin_deg) + " must divide 360");
  }
  if (translation_separation < 1) fail("N must be >= 1");
  if (heading_separation < 1) fail("L must be >= 1");
  if (heading_bins() % heading_separation != 0) {
    fail("(360/alpha) mod L must be 0, got 360/" + std::to_string(heading_bin_deg) +
         " mod " + std::to_string(heading_separation));
  }
  if (heading_bin_deg == 360 && heading_separation != 1) {
    fail("alpha=360 requires L=1");
  }
  if (min_images_per_class < 0) fail("min_images_per_class must be >= 0");
}

std::string to_string(const ClassId& c) {
  return "C(" + std::to_string(c.east) + "," + std::to_string(c.north) + "," +
         std::to_string(c.heading) + ")";
}

std::string to_string(const GroupId& g) {
  return "G(" + std::to_string(g.u) + "," + std::to_string(g.v) + "," +
         std::to_string(g.w) + ")";
}

ClassId assign_class(const GeoPose& pose, const PartitionConfig& cfg) {
  ClassId c;
  c.east = floor_div(pose.east, cfg.cell_size_m);
  c.north = floor_div(pose.north, cfg.cell_size_m);
  c.heading = static_cast<std::int32_t>(
      floor_div(normalize_heading(pose.heading), cfg.heading_bin_deg));
  // 359.9999... / 30 can round to exactly 12.0.
  if (c.heading >= cfg.heading_bins()) c.heading = cfg.heading_bins() - 1;
  return c;
}

GroupId assign_group(const ClassId& c, const PartitionConfig& cfg) {
  const std::int64_t n = cfg.translation_separation;
  return GroupId{static_cast<std::int32_t>(positive_mod(c.east, n)),
                 static_cast<std::int32_t>(positive_mod(c.north, n)),
                 static_cast<std::int32_t>(positive_mod(c.heading, cfg.heading_separation))};
}

std::vector<GroupId> enumerate_groups(const PartitionConfig& cfg) {
  std::vector<GroupId> groups;
  groups.reserve(static_cast<std::size_t>(cfg.group_count()));
  for (int u = 0; u < cfg.translation_separation; ++u)
    for (int v = 0; v < cfg.translation_separation; ++v)
      for (int w = 0; w < cfg.heading_separation; ++w) groups.push_back({u, v, w});
  return groups;
}

bool adjacent(const ClassId& a, const ClassId& b, const PartitionConfig& cfg) {
  if (std::abs(a.east - b.east) > 1 || std::abs(a.north - b.north) > 1) return false;
  const int bins = cfg.heading_bins();
  const int d = static_cast<int>(positive_mod(a.heading - b.heading, bins));
  return std::min(d, bins - d) <= 1;
}

const std::vector<ClassId>& Partition::classes_in(const GroupId& g) const {
  auto it = group_classes.find(g);
  return it == group_classes.end() ? kNoClasses : it->second;
}

Partition build_partition(std::span<const ImageRecord> records,
                          const PartitionConfig& cfg) {
  cfg.validate();
  require_single_zone(records);

  std::map<ClassId, std::vector<std::string>> all_classes;
  for (const ImageRecord& r : records) {
    all_classes[assign_class(r.pose, cfg)].push_back(r.id);
  }

  Partition p;
  p.config = cfg;
  for (auto& [cls, members] : all_classes) {
    if (static_cast<std::int64_t>(members.size()) < cfg.min_images_per_class) {
      ++p.discarded_count;
      p.discarded_image_count += static_cast<std::int64_t>(members.size());
      continue;
    }
    std::sort(members.begin(), members.end());
    const GroupId g = assign_group(cls, cfg);
    p.class_group.emplace(cls, g);
    // std::map iteration is lexicographic on ClassId, so each list is sorted.
    p.group_classes[g].push_back(cls);
    p.class_members.emplace(cls, std::move(members));
  }
  if (p.class_members.empty()) {
    throw Error(ErrorCode::kEmptyPartition,
                "no class has at least " + std::to_string(cfg.min_images_per_class) +
                    " images (" + std::to_string(p.discarded_count) +
                    " classes discarded); training is impossible");
  }
  return p;
}

PartitionStats partition_stats(const Partition& p) {
  PartitionStats s;
  s.discarded_classes = p.discarded_count;
  s.discarded_images = p.discarded_image_count;
  if (p.class_members.empty() && p.group_classes.empty()) return s;

  s.group_count = p.config.group_count();
  for (const GroupId& g : enumerate_groups(p.config)) {
    s.classes_per_group[g] = 0;
    s.images_per_group[g] = 0;
  }
  for (const auto& [g, classes] : p.group_classes) {
    s.classes_per_group[g] = static_cast<std::int64_t>(classes.size());
    std::int64_t images = 0;
    for (const ClassId& c : classes) {
      auto it = p.class_members.find(c);
      if (it != p.class_members.end()) images += static_cast<std::int64_t>(it->second.size());
    }
    s.images_per_group[g] = images;
  }
  bool first = true;
  for (const auto& [c, members] : p.class_members) {
    const auto size = static_cast<std::int64_t>(members.size());
    ++s.retained_classes;
    s.retained_images += size;
    ++s.class_size_histogram[size];
    s.min_class_size = first ? size : std::min(s.min_class_size, size);
    s.max_class_size = first ? size : std::max(s.max_class_size, size);
    first = false;
  }
  if (s.retained_classes > 0) {
    s.mean_class_size =
        static_cast<double>(s.retained_images) / static_cast<double>(s.retained_classes);
  }
  return s;
}

void to_json(nlohmann::json& j, const PartitionConfig& cfg) {
  j = nlohmann::json{{"M", cfg.cell_size_m},
                     {"alpha", cfg.heading_bin_deg},
                     {"N", cfg.translation_separation},
                     {"L", cfg.heading_separation},
                     {"min_images_per_class", cfg.min_images_per_class}};
}

void from_json(const nlohmann::json& j, PartitionConfig& cfg) {
  j.at("M").get_to(cfg.cell_size_m);
  j.at("alpha").get_to(cfg.heading_bin_deg);
  j.at("N").get_to(cfg.translation_separation);
  j.at("L").get_to(cfg.heading_separation);
  j.at("min_images_per_class").get_to(cfg.min_images_per_class);
}

namespace {

nlohmann::json class_json(const ClassId& c) { return {c.east, c.north, c.heading}; }
nlohmann::json group_json(const GroupId& g) { return {g.u, g.v, g.w}; }

ClassId class_from_json(const nlohmann::json& j) {
  return ClassId{j.at(0).get<std::int64_t>(), j.at(1).get<std::int64_t>(),
                 j.at(2).get<std::int32_t>()};
}
GroupId group_from_json(const nlohmann::json& j) {
  return GroupId{j.at(0).get<std::int32_t>(), j.at(1).get<std::int32_t>(),
                 j.at(2).get<std::int32_t>()};
}

}  // namespace

nlohmann::json partition_to_json(const Partition& p) {
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& [c, members] : p.class_members) {
    classes.push_back({{"id", class_json(c)},
                       {"group", group_json(p.class_group.at(c))},
                       {"members", members}});
  }
  nlohmann::json groups = nlohmann::json::array();
  for (const auto& [g, list] : p.group_classes) {
    nlohmann::json ids = nlohmann::json::array();
    for (const ClassId& c : list) ids.push_back(class_json(c));
    groups.push_back({{"id", group_json(g)}, {"classes", std::move(ids)}});
  }
  return nlohmann::json{{"format", "cosplace.partition"},
                        {"version", kPartitionFormatVersion},
                        {"config", p.config},
                        {"discarded_count", p.discarded_count},
                        {"discarded_image_count", p.discarded_image_count},
                        {"classes", std::move(classes)},
                        {"groups", std::move(groups)}};
}

Partition partition_from_json(const nlohmann::json& doc) {
  Partition p;
  try {
    if (doc.at("format").get<std::string>() != "cosplace.partition") {
      throw Error(ErrorCode::kParse, "not a partition document");
    }
    const int version = doc.at("version").get<int>();
    if (version != kPartitionFormatVersion) {
      throw Error(ErrorCode::kParse,
                  "unsupported partition version " + std::to_string(version));
    }
    p.config = doc.at("config").get<PartitionConfig>();
    p.discarded_count = doc.at("discarded_count").get<std::int64_t>();
    p.discarded_image_count = doc.at("discarded_image_count").get<std::int64_t>();
    for (const auto& entry : doc.at("classes")) {
      const ClassId c = class_from_json(entry.at("id"));
      p.class_group.emplace(c, group_from_json(entry.at("group")));
      p.class_members.emplace(c, entry.at("members").get<std::vector<std::string>>());
    }
    for (const auto& entry : doc.at("groups")) {
      std::vector<ClassId> list;
      for (const auto& c : entry.at("classes")) list.push_back(class_from_json(c));
      p.group_classes.emplace(group_from_json(entry.at("id")), std::move(list));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("partition document: ") + e.what());
  }

  p.config.validate();
  std::set<ClassId> listed;
  for (const auto& [g, list] : p.group_classes) {
    for (const ClassId& c : list) {
      auto it = p.class_group.find(c);
      if (it == p.class_group.end() || it->second != g || !listed.insert(c).second ||
          assign_group(c, p.config) != g) {
        throw Error(ErrorCode::kInvalidConfig,
                    "partition document: group table inconsistent at " + to_string(c));
      }
    }
  }
  if (listed.size() != p.class_group.size()) {
    throw Error(ErrorCode::kInvalidConfig,
                "partition document: classes missing from group table");
  }
  return p;
}

}  // namespace cosplace
