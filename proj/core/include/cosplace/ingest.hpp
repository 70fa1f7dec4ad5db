#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cosplace/geodesy.hpp"
#include "cosplace/partition.hpp"

namespace cosplace {

struct ImageRecord {
  std::string id;
  GeoPose pose;
  UtmZone zone{10, Hemisphere::kNorth};
  std::optional<std::string> source_uri;
  std::optional<std::string> features_ref;  // key into a FeatureStore; defaults to id
  std::optional<LatLon> latlon;             // kept when the manifest carried lat/lon

  const std::string& feature_key() const { return features_ref ? *features_ref : id; }

  friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

/// Manifest CSV. Required header columns are `id,east,north,heading`; when
/// east/north are absent, `lat,lon` are projected to UTM. Optional columns:
/// `zone` (e.g. `10N`), `lat`, `lon`, `uri`, `features`. Lines starting with
/// `#` are comments. Throws kParse (with the line number), kDuplicateId or
/// kZoneMismatch.
std::vector<ImageRecord> parse_manifest(std::istream& in);

/// Writes the canonical manifest form: `id,east,north,heading,zone` plus
/// `lat,lon` / `uri` / `features` columns when any record carries them.
/// Numbers are printed with round-trip precision.
void write_manifest(std::ostream& out, std::span<const ImageRecord> records,
                    std::string_view comment = {});

std::string format_zone(const UtmZone& zone);
UtmZone parse_zone(std::string_view text);

/// `@{east:010.2f}@{north:011.2f}@{heading:05.1f}@{id}@`
std::string encode_record_name(const ImageRecord& r);
ImageRecord decode_record_name(std::string_view name);

struct ValidationSplit {
  std::vector<ImageRecord> train;
  std::vector<ImageRecord> val_database;
  std::vector<ImageRecord> val_queries;
};

/// Random-by-record split: floor(fraction*n) records each for the validation
/// database and validation queries, the rest for training. Deterministic in
/// `seed`; preserves input order inside each output list.
ValidationSplit split_validation(std::span<const ImageRecord> records,
                                 double fraction, std::uint64_t seed);

/// Throws kZoneMismatch when records do not share one zone and hemisphere.
void require_single_zone(std::span<const ImageRecord> records);

}  // namespace cosplace
