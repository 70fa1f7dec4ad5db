#include "cosplace/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <string>

#include "cosplace/error.hpp"

namespace cosplace {
namespace {

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(value)) {
    return std::nullopt;
  }
  return value;
}

std::string format_double(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

[[noreturn]] void parse_error(std::size_t line, const std::string& what) {
  throw Error(ErrorCode::kParse, "manifest line " + std::to_string(line) + ": " + what);
}

// Headings are accepted in [0, 720) and wrapped once.
double checked_heading(double h, std::size_t line) {
  if (!(h >= 0.0 && h < 720.0)) {
    parse_error(line, "heading " + format_double(h) + " outside [0, 720)");
  }
  return normalize_heading(h);
}

}  // namespace

std::string format_zone(const UtmZone& zone) {
  return std::to_string(zone.number) + (zone.hemisphere == Hemisphere::kNorth ? "N" : "S");
}

UtmZone parse_zone(std::string_view text) {
  text = trim(text);
  if (text.size() < 2) throw Error(ErrorCode::kParse, "bad UTM zone '" + std::string(text) + "'");
  const char h = text.back();
  UtmZone zone;
  if (h == 'N' || h == 'n') {
    zone.hemisphere = Hemisphere::kNorth;
  } else if (h == 'S' || h == 's') {
    zone.hemisphere = Hemisphere::kSouth;
  } else {
    throw Error(ErrorCode::kParse, "bad UTM zone '" + std::string(text) + "'");
  }
  text.remove_suffix(1);
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), zone.number);
  if (ec != std::errc() || ptr != text.data() + text.size() || zone.number < 1 ||
      zone.number > 60) {
    throw Error(ErrorCode::kParse, "bad UTM zone number in '" + std::string(text) + "'");
  }
  return zone;
}

void require_single_zone(std::span<const ImageRecord> records) {
  if (records.empty()) return;
  const UtmZone& first = records.front().zone;
  for (const ImageRecord& r : records) {
    if (!(r.zone == first)) {
      throw Error(ErrorCode::kZoneMismatch,
                  "records span UTM zones " + format_zone(first) + " and " +
                      format_zone(r.zone) + " (first offender: '" + r.id + "')");
    }
  }
}

std::vector<ImageRecord> parse_manifest(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  std::map<std::string, std::size_t, std::less<>> columns;
  std::size_t column_count = 0;

  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view view = trim(line);
    if (view.empty() || view.front() == '#') continue;
    const auto header = split(view, ',');
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (!columns.emplace(std::string(trim(header[i])), i).second) {
        parse_error(line_no, "duplicate column '" + std::string(trim(header[i])) + "'");
      }
    }
    column_count = header.size();
    break;
  }
  if (columns.empty()) throw Error(ErrorCode::kParse, "manifest has no header row");

  auto column = [&](std::string_view name) -> std::optional<std::size_t> {
    auto it = columns.find(name);
    return it == columns.end() ? std::nullopt : std::optional<std::size_t>(it->second);
  };
  const auto col_id = column("id");
  const auto col_east = column("east");
  const auto col_north = column("north");
  const auto col_heading = column("heading");
  const auto col_lat = column("lat");
  const auto col_lon = column("lon");
  const auto col_zone = column("zone");
  const auto col_uri = column("uri");
  const auto col_features = column("features");

  if (!col_id || !col_heading) {
    throw Error(ErrorCode::kParse, "manifest header must contain id and heading columns");
  }
  const bool has_utm = col_east && col_north;
  const bool has_latlon = col_lat && col_lon;
  if (!has_utm && !has_latlon) {
    throw Error(ErrorCode::kParse, "manifest header needs east,north or lat,lon columns");
  }

  std::vector<ImageRecord> records;
  std::map<std::string, std::size_t, std::less<>> seen;  // id -> line
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view view = trim(line);
    if (view.empty() || view.front() == '#') continue;
    const auto fields = split(view, ',');
    if (fields.size() != column_count) {
      parse_error(line_no, "expected " + std::to_string(column_count) + " fields, got " +
                               std::to_string(fields.size()));
    }
    auto number = [&](std::size_t col, const char* name) {
      auto v = parse_double(fields[col]);
      if (!v) parse_error(line_no, std::string("unparseable ") + name + " '" +
                                       std::string(fields[col]) + "'");
      return *v;
    };

    ImageRecord r;
    r.id = std::string(trim(fields[*col_id]));
    if (r.id.empty()) parse_error(line_no, "empty id");
    r.pose.heading = checked_heading(number(*col_heading, "heading"), line_no);

    if (has_latlon) {
      LatLon ll{number(*col_lat, "lat"), number(*col_lon, "lon")};
      if (std::abs(ll.latitude) > 90.0) parse_error(line_no, "latitude outside [-90, 90]");
      ll.longitude = normalize_longitude(ll.longitude);
      r.latlon = ll;
    }
    if (col_zone) {
      try {
        r.zone = parse_zone(fields[*col_zone]);
      } catch (const Error& e) {
        parse_error(line_no, e.what());
      }
    }
    if (has_utm) {
      r.pose.east = number(*col_east, "east");
      r.pose.north = number(*col_north, "north");
      if (!col_zone && r.latlon) r.zone = latlon_to_utm(*r.latlon).zone;
    } else {
      try {
        const UtmCoord c = col_zone ? latlon_to_utm(*r.latlon, r.zone) : latlon_to_utm(*r.latlon);
        r.pose.east = c.east;
        r.pose.north = c.north;
        r.zone = c.zone;
      } catch (const Error& e) {
        parse_error(line_no, e.what());
      }
    }
    if (col_uri && !trim(fields[*col_uri]).empty()) r.source_uri = std::string(trim(fields[*col_uri]));
    if (col_features && !trim(fields[*col_features]).empty()) {
      r.features_ref = std::string(trim(fields[*col_features]));
    }

    if (auto [it, inserted] = seen.emplace(r.id, line_no); !inserted) {
      throw Error(ErrorCode::kDuplicateId, "duplicate id '" + r.id + "' on lines " +
                                               std::to_string(it->second) + " and " +
                                               std::to_string(line_no));
    }
    records.push_back(std::move(r));
  }
  require_single_zone(records);
  return records;
}

void write_manifest(std::ostream& out, std::span<const ImageRecord> records,
                    std::string_view comment) {
  const bool any_latlon = std::any_of(records.begin(), records.end(),
                                      [](const ImageRecord& r) { return r.latlon.has_value(); });
  const bool any_uri = std::any_of(records.begin(), records.end(),
                                   [](const ImageRecord& r) { return r.source_uri.has_value(); });
  const bool any_features = std::any_of(
      records.begin(), records.end(), [](const ImageRecord& r) { return r.features_ref.has_value(); });

  if (!comment.empty()) out << "# " << comment << '\n';
  out << "id,east,north,heading,zone";
  if (any_latlon) out << ",lat,lon";
  if (any_uri) out << ",uri";
  if (any_features) out << ",features";
  out << '\n';
  for (const ImageRecord& r : records) {
    out << r.id << ',' << format_double(r.pose.east) << ',' << format_double(r.pose.north)
        << ',' << format_double(r.pose.heading) << ',' << format_zone(r.zone);
    if (any_latlon) {
      out << ',';
      if (r.latlon) out << format_double(r.latlon->latitude);
      out << ',';
      if (r.latlon) out << format_double(r.latlon->longitude);
    }
    if (any_uri) out << ',' << r.source_uri.value_or("");
    if (any_features) out << ',' << r.features_ref.value_or("");
    out << '\n';
  }
}

std::string encode_record_name(const ImageRecord& r) {
  if (r.id.find('@') != std::string::npos) {
    throw Error(ErrorCode::kDomain, "record id '" + r.id + "' contains '@'");
  }
  char buf[96];
  std::snprintf(buf, sizeof(buf), "@%010.2f@%011.2f@%05.1f@", r.pose.east, r.pose.north,
                r.pose.heading);
  return std::string(buf) + r.id + "@";
}

ImageRecord decode_record_name(std::string_view name) {
  const auto parts = split(name, '@');
  if (parts.size() != 6 || !parts.front().empty() || !parts.back().empty()) {
    throw Error(ErrorCode::kParse, "record name '" + std::string(name) +
                                       "' does not have 4 '@'-delimited fields");
  }
  auto number = [&](std::string_view s, const char* field) {
    auto v = parse_double(s);
    if (!v) {
      throw Error(ErrorCode::kParse, std::string("record name: non-numeric ") + field +
                                         " '" + std::string(s) + "'");
    }
    return *v;
  };
  ImageRecord r;
  r.pose.east = number(parts[1], "east");
  r.pose.north = number(parts[2], "north");
  r.pose.heading = normalize_heading(number(parts[3], "heading"));
  r.id = std::string(parts[4]);
  if (r.id.empty()) throw Error(ErrorCode::kParse, "record name: empty id");
  return r;
}

ValidationSplit split_validation(std::span<const ImageRecord> records, double fraction,
                                 std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 0.5)) {
    throw Error(ErrorCode::kDomain, "validation fraction must be in (0, 0.5]");
  }
  const std::size_t n = records.size();
  const auto k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
  if (k == 0 || 2 * k >= n) {
    throw Error(ErrorCode::kDomain, "not enough records (" + std::to_string(n) +
                                        ") for a validation split at fraction " +
                                        std::to_string(fraction));
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<std::uint8_t> role(n, 0);  // 0 train, 1 db, 2 query
  for (std::size_t i = 0; i < k; ++i) role[order[i]] = 1;
  for (std::size_t i = k; i < 2 * k; ++i) role[order[i]] = 2;

  ValidationSplit out;
  for (std::size_t i = 0; i < n; ++i) {
    (role[i] == 0 ? out.train : role[i] == 1 ? out.val_database : out.val_queries)
        .push_back(records[i]);
  }
  return out;
}

}  // namespace cosplace
