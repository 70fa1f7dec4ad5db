#include "cosplace/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>

#include "cosplace/binary_io.hpp"
#include "cosplace/error.hpp"
#include "cosplace/ingest.hpp"
#include "cosplace/parallel.hpp"

namespace cosplace {
namespace {

constexpr double kIndexUnitTolerance = 1e-5;
constexpr std::string_view kIndexMagic = "CPINDEX_";
constexpr std::uint32_t kIndexVersion = 1;

}  // namespace

DescriptorIndex build_index(std::span<const Descriptor> descriptors,
                            std::span<const std::string> ids, std::span<const GeoPose> poses,
                            const UtmZone& zone) {
  if (descriptors.size() != ids.size() || ids.size() != poses.size()) {
    throw Error(ErrorCode::kDimension, "index inputs must have equal lengths");
  }
  DescriptorIndex index;
  index.zone_ = zone;
  if (descriptors.empty()) return index;

  const auto dim = descriptors.front().size();
  std::set<std::string_view> seen;
  index.matrix_.resize(static_cast<Eigen::Index>(descriptors.size()), dim);
  for (std::size_t i = 0; i < descriptors.size(); ++i) {
    if (descriptors[i].size() != dim) {
      throw Error(ErrorCode::kDimension, "descriptor '" + ids[i] + "' has a different dimension");
    }
    if (!(std::abs(descriptors[i].norm() - 1.0) <= kIndexUnitTolerance)) {
      throw Error(ErrorCode::kNotNormalized, "descriptor '" + ids[i] + "' is not unit-norm");
    }
    if (!seen.insert(ids[i]).second) {
      throw Error(ErrorCode::kDuplicateId, "duplicate index id '" + ids[i] + "'");
    }
    index.matrix_.row(static_cast<Eigen::Index>(i)) = descriptors[i].transpose();
  }
  index.ids_.assign(ids.begin(), ids.end());
  index.poses_.assign(poses.begin(), poses.end());
  return index;
}

std::vector<Neighbor> knn(const DescriptorIndex& index, const Descriptor& query, std::size_t k,
                          SearchCounters* counters) {
  if (k < 1) throw Error(ErrorCode::kDomain, "k must be >= 1");
  if (index.size() == 0) return {};
  if (query.size() != index.dim()) {
    throw Error(ErrorCode::kDimension, "query has dimension " + std::to_string(query.size()) +
                                           ", index has " + std::to_string(index.dim()));
  }
  const std::size_t n = index.size();
  const auto dim = static_cast<std::size_t>(index.dim());
  std::vector<double> scores(n);
  const double* rows = index.matrix().data();
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = rows + r * dim;
    double dot = 0.0;
    for (std::size_t c = 0; c < dim; ++c) dot += row[c] * query[static_cast<Eigen::Index>(c)];
    scores[r] = dot;
  }
  if (counters) {
    counters->rows_scanned += n;
    counters->multiply_adds += n * dim;
  }

  const std::size_t take = std::min(k, n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (scores[a] != scores[b]) return scores[a] > scores[b];
                      return a < b;
                    });
  std::vector<Neighbor> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) {
    out.push_back({order[i], index.ids()[order[i]], scores[order[i]]});
  }
  return out;
}

double EvalReport::recall_at(int k) const {
  for (std::size_t i = 0; i < ks.size(); ++i) {
    if (ks[i] == k) return recall[i];
  }
  throw Error(ErrorCode::kNotFound, "recall@" + std::to_string(k) + " not in report");
}

EvalReport recall_at_n(const DescriptorIndex& index, std::span<const Query> queries,
                       std::span<const int> ks, double threshold_m, int threads) {
  if (queries.empty()) throw Error(ErrorCode::kDomain, "recall needs at least one query");
  if (ks.empty() || ks.front() < 1 || !std::is_sorted(ks.begin(), ks.end()) ||
      std::adjacent_find(ks.begin(), ks.end()) != ks.end()) {
    throw Error(ErrorCode::kDomain, "Ks must be positive and strictly ascending");
  }
  if (!(threshold_m >= 0.0)) throw Error(ErrorCode::kDomain, "threshold must be >= 0");
  for (const Query& q : queries) {
    if (!(q.zone == index.zone())) {
      throw Error(ErrorCode::kZoneMismatch, "query zone " + format_zone(q.zone) +
                                                " differs from database zone " +
                                                format_zone(index.zone()));
    }
  }

  const std::size_t max_k = static_cast<std::size_t>(ks.back());
  std::vector<std::optional<int>> first(queries.size());
  parallel_for(queries.size(), threads, [&](std::size_t qi) {
    const Query& q = queries[qi];
    const UtmCoord qc{q.pose.east, q.pose.north, q.zone};
    const auto hits = knn(index, q.descriptor, max_k);
    for (std::size_t rank = 0; rank < hits.size(); ++rank) {
      const GeoPose& p = index.poses()[hits[rank].row];
      if (utm_distance(qc, UtmCoord{p.east, p.north, index.zone()}) <= threshold_m) {
        first[qi] = static_cast<int>(rank + 1);
        break;
      }
    }
  });

  EvalReport report;
  report.threshold_m = threshold_m;
  report.num_queries = queries.size();
  report.ks.assign(ks.begin(), ks.end());
  for (int k : ks) {
    std::size_t hit_count = 0;
    for (const auto& r : first) hit_count += (r && *r <= k) ? 1 : 0;
    report.recall.push_back(static_cast<double>(hit_count) / static_cast<double>(queries.size()));
  }
  report.first_correct_rank = std::move(first);
  return report;
}

std::string DescriptorIndex::serialize() const {
  io::Writer head;
  head.put(static_cast<std::uint64_t>(ids_.size()));
  head.put(static_cast<std::uint32_t>(matrix_.cols()));
  head.put(static_cast<std::int32_t>(zone_.number));
  head.put(static_cast<std::uint8_t>(zone_.hemisphere == Hemisphere::kNorth ? 0 : 1));
  io::Writer ids;
  for (const auto& id : ids_) ids.put_string(id);
  io::Writer poses;
  for (const auto& p : poses_) {
    poses.put(p.east);
    poses.put(p.north);
    poses.put(p.heading);
  }
  io::Writer desc;
  desc.put_span(std::span<const double>(matrix_.data(), static_cast<std::size_t>(matrix_.size())));

  io::Container c;
  c.magic = std::string(kIndexMagic);
  c.version = kIndexVersion;
  c.sections.push_back({io::make_tag("HEAD"), std::string(head.view())});
  c.sections.push_back({io::make_tag("IDS_"), std::string(ids.view())});
  c.sections.push_back({io::make_tag("POSE"), std::string(poses.view())});
  c.sections.push_back({io::make_tag("DESC"), std::string(desc.view())});
  return io::encode_container(c);
}

DescriptorIndex DescriptorIndex::deserialize(std::string_view bytes) {
  const io::Container c = io::decode_container(bytes, kIndexMagic, kIndexVersion, "index");
  io::Reader head(c.only("HEAD").payload, "index header");
  const auto count = static_cast<std::size_t>(head.get<std::uint64_t>());
  const auto dim = head.get<std::uint32_t>();
  UtmZone zone;
  zone.number = head.get<std::int32_t>();
  zone.hemisphere = head.get<std::uint8_t>() == 0 ? Hemisphere::kNorth : Hemisphere::kSouth;
  head.expect_end();

  std::vector<std::string> ids;
  io::Reader ir(c.only("IDS_").payload, "index ids");
  for (std::size_t i = 0; i < count; ++i) ids.push_back(ir.get_string());
  ir.expect_end();

  std::vector<GeoPose> poses(count);
  io::Reader pr(c.only("POSE").payload, "index poses");
  for (auto& p : poses) {
    p.east = pr.get<double>();
    p.north = pr.get<double>();
    p.heading = pr.get<double>();
  }
  pr.expect_end();

  io::Reader dr(c.only("DESC").payload, "index descriptors");
  std::vector<Descriptor> descriptors(count, Descriptor(dim));
  for (auto& d : descriptors) dr.get_span(std::span<double>(d.data(), dim));
  dr.expect_end();
  return build_index(descriptors, ids, poses, zone);
}

nlohmann::json report_to_json(const EvalReport& report) {
  nlohmann::json recall = nlohmann::json::object();
  for (std::size_t i = 0; i < report.ks.size(); ++i) {
    recall[std::to_string(report.ks[i])] = report.recall[i];
  }
  nlohmann::json ranks = nlohmann::json::array();
  for (const auto& r : report.first_correct_rank) ranks.push_back(r ? nlohmann::json(*r) : nlohmann::json());
  return nlohmann::json{{"format", "cosplace.eval_report"},
                        {"version", 1},
                        {"label", report.label},
                        {"threshold_m", report.threshold_m},
                        {"num_queries", report.num_queries},
                        {"ks", report.ks},
                        {"recall_at", std::move(recall)},
                        {"first_correct_rank", std::move(ranks)}};
}

EvalReport report_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "cosplace.eval_report" || j.at("version") != 1) {
      throw Error(ErrorCode::kParse, "not a version-1 eval report");
    }
    EvalReport r;
    r.label = j.at("label").get<std::string>();
    r.threshold_m = j.at("threshold_m").get<double>();
    r.num_queries = j.at("num_queries").get<std::size_t>();
    r.ks = j.at("ks").get<std::vector<int>>();
    for (int k : r.ks) r.recall.push_back(j.at("recall_at").at(std::to_string(k)).get<double>());
    for (const auto& v : j.at("first_correct_rank")) {
      r.first_correct_rank.push_back(v.is_null() ? std::nullopt : std::optional<int>(v.get<int>()));
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("eval report: ") + e.what());
  }
}

std::string format_report_table(std::span<const EvalReport> reports) {
  std::ostringstream out;
  if (reports.empty()) return {};
  std::size_t label_width = 6;
  for (const auto& r : reports) label_width = std::max(label_width, r.label.size());
  char buf[64];
  auto pad = [&](std::string s) {
    s.resize(label_width, ' ');
    return s;
  };
  out << "| " << pad("Method") << " |";
  for (int k : reports.front().ks) {
    std::snprintf(buf, sizeof(buf), " %6s |", ("R@" + std::to_string(k)).c_str());
    out << buf;
  }
  out << "\n|" << std::string(label_width + 2, '-') << "|";
  for (std::size_t i = 0; i < reports.front().ks.size(); ++i) out << "--------|";
  out << '\n';
  for (const auto& r : reports) {
    out << "| " << pad(r.label) << " |";
    for (double v : r.recall) {
      std::snprintf(buf, sizeof(buf), " %6.1f |", 100.0 * v);
      out << buf;
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace cosplace
