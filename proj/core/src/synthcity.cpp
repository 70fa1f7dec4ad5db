#include "cosplace/synthcity.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <set>

#include "cosplace/error.hpp"

namespace cosplace {

int CityConfig::places_per_side() const {
  return static_cast<int>(std::floor(extent_m / place_spacing_m));
}

void CityConfig::validate() const {
  auto fail = [](const std::string& what) {
    throw Error(ErrorCode::kInvalidConfig, "city config: " + what);
  };
  if (!(extent_m > 0.0) || !(place_spacing_m > 0.0)) fail("extent and spacing must be > 0");
  if (places_per_side() < 1) fail("extent is too small to hold one place");
  if (headings_per_place < 1 || images_per_place_heading < 1 || queries_per_place_heading < 0) {
    fail("per-place counts must be positive");
  }
  if (latent_dim < 1 || channels < 1 || height < 1 || width < 1 || nuisance_dim < 0) {
    fail("dimensions must be positive");
  }
  if (!(noise_sigma >= 0.0) || !(domain_shift_sigma >= 0.0) || !(nuisance_sigma >= 0.0) ||
      !(place_jitter_m >= 0.0)) {
    fail("sigmas and jitter must be >= 0");
  }
  if (!(class_cell_m > 0.0) || class_heading_deg <= 0 || 360 % class_heading_deg != 0) {
    fail("class cell must be > 0 and the heading bin must divide 360");
  }
}

namespace {

// Spreads unit latents: exact Gram-Schmidt when they fit, otherwise
// alternating projections toward an equal-norm tight frame (which minimizes
// the frame potential sum <a,b>^2).
void spread_latents(std::vector<Eigen::VectorXd>& latents, int dim) {
  const auto n = static_cast<Eigen::Index>(latents.size());
  if (n <= dim) {
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < i; ++j) latents[i] -= latents[j] * latents[j].dot(latents[i]);
      latents[i].normalize();
    }
    return;
  }
  Eigen::MatrixXd x(n, dim);
  for (Eigen::Index i = 0; i < n; ++i) x.row(i) = latents[i].transpose();
  const double frame_scale = std::sqrt(static_cast<double>(n) / dim);
  for (int iter = 0; iter < 200; ++iter) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(x.transpose() * x);
    const Eigen::VectorXd inv_sqrt = eig.eigenvalues().cwiseMax(1e-300).cwiseSqrt().cwiseInverse();
    x = frame_scale * x * eig.eigenvectors() * inv_sqrt.asDiagonal() * eig.eigenvectors().transpose();
    x.rowwise().normalize();
  }
  for (Eigen::Index i = 0; i < n; ++i) latents[i] = x.row(i).transpose();
}

std::string scene_image_id(char prefix, int place, int heading, int index) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%c%04d_h%d_%03d", prefix, place, heading, index);
  return buf;
}

}  // namespace

SyntheticWorld generate_city(const CityConfig& cfg) {
  cfg.validate();
  SyntheticWorld world;
  world.config = cfg;
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);

  const int side = cfg.places_per_side();
  const int scenes = side * side * cfg.headings_per_place;
  const std::size_t fm_size = std::size_t(cfg.channels) * cfg.height * cfg.width;

  // Fixed appearance model shared by every image.
  Eigen::MatrixXd channel_lift(cfg.channels, cfg.latent_dim);
  Eigen::MatrixXd spatial_lift(static_cast<Eigen::Index>(fm_size), cfg.latent_dim);
  Eigen::MatrixXd nuisance_lift(cfg.channels, std::max(cfg.nuisance_dim, 1));
  // A unit latent gives O(1) per-channel signal; the spatial term is weaker.
  for (Eigen::Index i = 0; i < channel_lift.size(); ++i) channel_lift.data()[i] = normal(rng);
  for (Eigen::Index i = 0; i < spatial_lift.size(); ++i) spatial_lift.data()[i] = 0.5 * normal(rng);
  const double nuisance_scale = 1.0 / std::sqrt(static_cast<double>(std::max(cfg.nuisance_dim, 1)));
  for (Eigen::Index i = 0; i < nuisance_lift.size(); ++i) {
    nuisance_lift.data()[i] = cfg.nuisance_dim > 0 ? normal(rng) * nuisance_scale : 0.0;
  }

  world.latents.resize(static_cast<std::size_t>(scenes));
  for (auto& l : world.latents) {
    l.resize(cfg.latent_dim);
    for (int k = 0; k < cfg.latent_dim; ++k) l[k] = normal(rng);
    if (l.norm() == 0.0) l[0] = 1.0;
    l.normalize();
  }
  spread_latents(world.latents, cfg.latent_dim);
  for (std::size_t a = 0; a < world.latents.size(); ++a) {
    for (std::size_t b = a + 1; b < world.latents.size(); ++b) {
      world.max_cross_similarity =
          std::max(world.max_cross_similarity, std::abs(world.latents[a].dot(world.latents[b])));
    }
  }

  auto make_features = [&](const Eigen::VectorXd& latent, bool query) {
    Eigen::VectorXd nuisance(std::max(cfg.nuisance_dim, 1));
    for (Eigen::Index k = 0; k < nuisance.size(); ++k) nuisance[k] = normal(rng) * cfg.nuisance_sigma;
    const Eigen::VectorXd channel = channel_lift * latent + nuisance_lift * nuisance;
    const Eigen::VectorXd spatial = spatial_lift * latent;
    Eigen::VectorXd shift = Eigen::VectorXd::Zero(cfg.channels);
    if (query) {
      for (int c = 0; c < cfg.channels; ++c) shift[c] = normal(rng) * cfg.domain_shift_sigma;
    }
    FeatureMap fm(cfg.channels, cfg.height, cfg.width);
    const std::size_t hw = fm.spatial();
    for (int c = 0; c < cfg.channels; ++c) {
      for (std::size_t s = 0; s < hw; ++s) {
        const std::size_t i = c * hw + s;
        const double noise = cfg.noise_sigma > 0.0 ? normal(rng) * cfg.noise_sigma : 0.0;
        fm.values[i] = static_cast<float>(cfg.signal_offset + channel[c] + shift[c] +
                                          spatial[static_cast<Eigen::Index>(i)] + noise);
      }
    }
    return fm;
  };

  const double cell = cfg.class_cell_m;
  const double bin = cfg.class_heading_deg;
  auto snap = [&](double v) { return std::floor(v / cell) * cell + 0.5 * cell; };
  const double pos_jitter = 0.24 * cell;
  const double heading_jitter = 0.24 * bin;

  for (int py = 0; py < side; ++py) {
    for (int px = 0; px < side; ++px) {
      const int place = py * side + px;
      const double east = snap(cfg.origin_east + (px + 0.5) * cfg.place_spacing_m +
                               unit(rng) * cfg.place_jitter_m);
      const double north = snap(cfg.origin_north + (py + 0.5) * cfg.place_spacing_m +
                                unit(rng) * cfg.place_jitter_m);
      for (int h = 0; h < cfg.headings_per_place; ++h) {
        const double nominal = 360.0 * h / cfg.headings_per_place;
        const double centre = std::floor(nominal / bin) * bin + 0.5 * bin;
        const int scene = place * cfg.headings_per_place + h;
        const Eigen::VectorXd& latent = world.latents[static_cast<std::size_t>(scene)];
        auto emit = [&](char prefix, int index, bool query) {
          ImageRecord r;
          r.id = scene_image_id(prefix, place, h, index);
          r.pose.east = east + unit(rng) * pos_jitter;
          r.pose.north = north + unit(rng) * pos_jitter;
          r.pose.heading = normalize_heading(centre + unit(rng) * heading_jitter);
          r.zone = cfg.zone;
          world.features.insert(r.id, make_features(latent, query));
          world.scene_of.emplace(r.id, scene);
          (query ? world.queries : world.records).push_back(std::move(r));
        };
        for (int i = 0; i < cfg.images_per_place_heading; ++i) emit('p', i, false);
        for (int i = 0; i < cfg.queries_per_place_heading; ++i) emit('q', i, true);
      }
    }
  }
  return world;
}

Descriptor oracle_descriptor(const SyntheticWorld& world, std::string_view image_id) {
  auto it = world.scene_of.find(image_id);
  if (it == world.scene_of.end()) {
    throw Error(ErrorCode::kNotFound, "image '" + std::string(image_id) + "' not in world");
  }
  return world.latents[static_cast<std::size_t>(it->second)].normalized();
}

FeatureStore oracle_feature_store(const SyntheticWorld& world) {
  FeatureStore store;
  for (const auto& [id, scene] : world.scene_of) {
    const Eigen::VectorXd d = world.latents[static_cast<std::size_t>(scene)].normalized();
    FeatureMap fm(static_cast<int>(d.size()), 1, 1);
    for (Eigen::Index k = 0; k < d.size(); ++k) fm.values[static_cast<std::size_t>(k)] = static_cast<float>(d[k]);
    store.insert(id, std::move(fm));
  }
  return store;
}

namespace {

// Independent restatement of the class and group definitions.
struct OracleCell {
  long long e, n, h;
  auto operator<=>(const OracleCell&) const = default;
};

long long oracle_mod(long long a, long long m) { return ((a % m) + m) % m; }

}  // namespace

ViolationReport oracle_pairwise_check(std::span<const ImageRecord> records,
                                      const Partition& partition) {
  const PartitionConfig& cfg = partition.config;
  const double M = cfg.cell_size_m;
  const double alpha = cfg.heading_bin_deg;
  const long long N = cfg.translation_separation;
  const long long L = cfg.heading_separation;
  const long long bins = 360 / cfg.heading_bin_deg;
  ViolationReport report;

  auto cell_of = [&](const GeoPose& p) {
    double h = std::fmod(p.heading, 360.0);
    if (h < 0) h += 360.0;
    long long hk = static_cast<long long>(std::floor(h / alpha));
    if (hk >= bins) hk = bins - 1;
    return OracleCell{static_cast<long long>(std::floor(p.east / M)),
                      static_cast<long long>(std::floor(p.north / M)), hk};
  };
  auto as_class = [](const ClassId& c) { return OracleCell{c.east, c.north, c.heading}; };
  auto as_class_id = [](const OracleCell& c) {
    return ClassId{c.e, c.n, static_cast<std::int32_t>(c.h)};
  };

  std::map<std::string, const ImageRecord*, std::less<>> by_id;
  for (const ImageRecord& r : records) by_id.emplace(r.id, &r);

  // Claimed group of each class, from the group tables.
  std::map<ClassId, std::vector<GroupId>> listed_in;
  for (const auto& [g, classes] : partition.group_classes) {
    for (const ClassId& c : classes) listed_in[c].push_back(g);
  }

  // Property 1 (and class assignment consistency).
  for (const auto& [c, members] : partition.class_members) {
    const OracleCell oc = as_class(c);
    const GroupId expected{static_cast<int>(oracle_mod(oc.e, N)), static_cast<int>(oracle_mod(oc.n, N)),
                           static_cast<int>(oracle_mod(oc.h, L))};
    auto claimed = partition.class_group.find(c);
    const auto& lists = listed_in[c];
    if (claimed == partition.class_group.end() || !(claimed->second == expected) ||
        lists.size() != 1 || !(lists.front() == expected)) {
      report.violations.push_back({1, {c}, to_string(c) + " must belong to exactly " +
                                               to_string(expected)});
    }
    for (const std::string& id : members) {
      auto it = by_id.find(id);
      if (it == by_id.end() || !(cell_of(it->second->pose) == oc)) {
        report.violations.push_back({1, {c}, "image '" + id + "' does not quantize to " + to_string(c)});
      }
    }
  }
  for (const auto& [c, lists] : listed_in) {
    if (!partition.class_members.contains(c)) {
      report.violations.push_back({1, {c}, to_string(c) + " is listed in a group but has no members"});
    }
  }

  // Property 3.
  std::set<GroupId> all_groups;
  for (long long u = 0; u < N; ++u)
    for (long long v = 0; v < N; ++v)
      for (long long w = 0; w < L; ++w)
        all_groups.insert(GroupId{static_cast<int>(u), static_cast<int>(v), static_cast<int>(w)});
  if (static_cast<long long>(all_groups.size()) != N * N * L ||
      enumerate_groups(cfg).size() != all_groups.size()) {
    report.violations.push_back({3, {}, "group count differs from N*N*L"});
  }
  for (const auto& [g, classes] : partition.group_classes) {
    if (!all_groups.contains(g)) {
      report.violations.push_back({3, classes, to_string(g) + " is outside the N*N*L grid"});
    }
  }

  // Property 2: image pairs of distinct classes sharing a group.
  const double min_distance = M * static_cast<double>(N - 1);
  const double min_angle = alpha * static_cast<double>(L - 1);
  constexpr double kSlack = 1e-9;
  for (const auto& [g, classes] : partition.group_classes) {
    std::vector<std::pair<const ImageRecord*, OracleCell>> images;
    for (const ClassId& c : classes) {
      auto members = partition.class_members.find(c);
      if (members == partition.class_members.end()) continue;
      for (const std::string& id : members->second) {
        auto it = by_id.find(id);
        if (it != by_id.end()) images.emplace_back(it->second, as_class(c));
      }
    }
    for (std::size_t a = 0; a < images.size(); ++a) {
      for (std::size_t b = a + 1; b < images.size(); ++b) {
        if (images[a].second == images[b].second) continue;
        ++report.image_pairs_checked;
        const GeoPose& pa = images[a].first->pose;
        const GeoPose& pb = images[b].first->pose;
        const double distance = std::sqrt((pa.east - pb.east) * (pa.east - pb.east) +
                                          (pa.north - pb.north) * (pa.north - pb.north));
        double dh = std::abs(std::fmod(pa.heading - pb.heading, 360.0));
        dh = std::min(dh, 360.0 - dh);
        if (!(distance >= min_distance - kSlack) && !(dh > min_angle - kSlack)) {
          report.violations.push_back(
              {2,
               {as_class_id(images[a].second), as_class_id(images[b].second)},
               "images '" + images[a].first->id + "' and '" + images[b].first->id + "' are " +
                   std::to_string(distance) + " m and " + std::to_string(dh) + " deg apart"});
        }
      }
    }
  }

  // Property 4: no adjacent classes within a group (exempt when N == 1 or L == 1).
  report.property4_checked = N > 1 && L > 1;
  if (report.property4_checked) {
    for (const auto& [g, classes] : partition.group_classes) {
      for (std::size_t a = 0; a < classes.size(); ++a) {
        for (std::size_t b = a + 1; b < classes.size(); ++b) {
          ++report.class_pairs_checked;
          const OracleCell x = as_class(classes[a]);
          const OracleCell y = as_class(classes[b]);
          const long long dh = oracle_mod(x.h - y.h, bins);
          const bool touching = std::llabs(x.e - y.e) <= 1 && std::llabs(x.n - y.n) <= 1 &&
                                std::min(dh, bins - dh) <= 1;
          if (touching) {
            report.violations.push_back(
                {4, {classes[a], classes[b]}, "adjacent classes share " + to_string(g)});
          }
        }
      }
    }
  }
  return report;
}

ViolationReport oracle_pairwise_check(const SyntheticWorld& world, const Partition& partition) {
  return oracle_pairwise_check(world.records, partition);
}

}  // namespace cosplace
