#pragma once

// WGS-84 <-> UTM conversion using the 6th-order Krueger series for the
// transverse Mercator projection (sub-millimetre in-zone).

namespace cosplace {

enum class Hemisphere { kNorth, kSouth };

struct LatLon {
  double latitude = 0.0;   // degrees, [-90, 90]
  double longitude = 0.0;  // degrees, [-180, 180)

  friend bool operator==(const LatLon&, const LatLon&) = default;
};

/// The zone a UTM coordinate is expressed in.
struct UtmZone {
  int number = 0;  // 1..60
  Hemisphere hemisphere = Hemisphere::kNorth;

  friend bool operator==(const UtmZone&, const UtmZone&) = default;
};

struct UtmCoord {
  double east = 0.0;   // metres, false easting 500 000 at the central meridian
  double north = 0.0;  // metres, false northing 10 000 000 in the south
  UtmZone zone;
};

inline constexpr double kWgs84SemiMajorAxis = 6378137.0;
inline constexpr double kWgs84Flattening = 1.0 / 298.257223563;
inline constexpr double kUtmScaleFactor = 0.9996;
inline constexpr double kUtmFalseEasting = 500000.0;
inline constexpr double kUtmFalseNorthingSouth = 10000000.0;
inline constexpr double kUtmMaxAbsLatitude = 84.0;

/// Wraps a longitude into [-180, 180).
double normalize_longitude(double degrees);

/// Zone number from the plain 6-degree rule (no Norway/Svalbard exceptions).
int utm_zone_for_longitude(double longitude);

/// Projects into the zone chosen by the 6-degree rule. Throws kDomain when
/// |latitude| > 84 degrees or the input is not finite.
UtmCoord latlon_to_utm(const LatLon& p);

/// Projects into an explicitly chosen zone (used to keep a whole dataset in one zone).
UtmCoord latlon_to_utm(const LatLon& p, const UtmZone& zone);

/// Inverse projection. Throws kDomain for a zone number outside 1..60.
LatLon utm_to_latlon(const UtmCoord& c);

/// Planar distance in metres. Throws kZoneMismatch across zones/hemispheres.
double utm_distance(const UtmCoord& a, const UtmCoord& b);

}  // namespace cosplace
