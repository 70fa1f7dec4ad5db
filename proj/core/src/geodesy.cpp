#include "cosplace/geodesy.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>

#include "cosplace/error.hpp"

namespace cosplace {
namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;
constexpr int kOrder = 6;

struct Series {
  double n = 0.0;
  double e = 0.0;         // first eccentricity
  double rectifying = 0.0;  // A, radius of the rectifying sphere
  std::array<double, kOrder> alpha{};
  std::array<double, kOrder> beta{};
};

Series make_series() {
  Series s;
  const double f = kWgs84Flattening;
  const double n = f / (2.0 - f);
  const double n2 = n * n, n3 = n2 * n, n4 = n3 * n, n5 = n4 * n, n6 = n5 * n;
  s.n = n;
  s.e = std::sqrt(f * (2.0 - f));
  s.rectifying = kWgs84SemiMajorAxis / (1.0 + n) *
                 (1.0 + n2 / 4.0 + n4 / 64.0 + n6 / 256.0);
  s.alpha = {
      n / 2.0 - 2.0 / 3.0 * n2 + 5.0 / 16.0 * n3 + 41.0 / 180.0 * n4 -
          127.0 / 288.0 * n5 + 7891.0 / 37800.0 * n6,
      13.0 / 48.0 * n2 - 3.0 / 5.0 * n3 + 557.0 / 1440.0 * n4 +
          281.0 / 630.0 * n5 - 1983433.0 / 1935360.0 * n6,
      61.0 / 240.0 * n3 - 103.0 / 140.0 * n4 + 15061.0 / 26880.0 * n5 +
          167603.0 / 181440.0 * n6,
      49561.0 / 161280.0 * n4 - 179.0 / 168.0 * n5 +
          6601661.0 / 7257600.0 * n6,
      34729.0 / 80640.0 * n5 - 3418889.0 / 1995840.0 * n6,
      212378941.0 / 319334400.0 * n6,
  };
  s.beta = {
      n / 2.0 - 2.0 / 3.0 * n2 + 37.0 / 96.0 * n3 - 1.0 / 360.0 * n4 -
          81.0 / 512.0 * n5 + 96199.0 / 604800.0 * n6,
      1.0 / 48.0 * n2 + 1.0 / 15.0 * n3 - 437.0 / 1440.0 * n4 +
          46.0 / 105.0 * n5 - 1118711.0 / 3870720.0 * n6,
      17.0 / 480.0 * n3 - 37.0 / 840.0 * n4 - 209.0 / 4480.0 * n5 +
          5569.0 / 90720.0 * n6,
      4397.0 / 161280.0 * n4 - 11.0 / 504.0 * n5 - 830251.0 / 7257600.0 * n6,
      4583.0 / 161280.0 * n5 - 108847.0 / 3991680.0 * n6,
      20648693.0 / 638668800.0 * n6,
  };
  return s;
}

const Series& series() {
  static const Series s = make_series();
  return s;
}

double central_meridian(int zone) { return -183.0 + 6.0 * zone; }

void check_zone(const UtmZone& zone) {
  if (zone.number < 1 || zone.number > 60) {
    throw Error(ErrorCode::kDomain,
                "UTM zone number " + std::to_string(zone.number) +
                    " outside 1..60");
  }
}

// tan(conformal latitude) from tan(geodetic latitude).
double conformal_tan(double tau, double e) {
  const double sigma = std::sinh(e * std::atanh(e * tau / std::hypot(1.0, tau)));
  return tau * std::hypot(1.0, sigma) - sigma * std::hypot(1.0, tau);
}

}  // namespace

double normalize_longitude(double degrees) {
  double wrapped = std::fmod(degrees + 180.0, 360.0);
  if (wrapped < 0.0) wrapped += 360.0;
  return wrapped - 180.0;
}

int utm_zone_for_longitude(double longitude) {
  const double lon = normalize_longitude(longitude);
  const int zone = static_cast<int>(std::floor((lon + 180.0) / 6.0)) + 1;
  return zone > 60 ? 60 : zone;
}

UtmCoord latlon_to_utm(const LatLon& p) {
  UtmZone zone{utm_zone_for_longitude(p.longitude),
               p.latitude < 0.0 ? Hemisphere::kSouth : Hemisphere::kNorth};
  return latlon_to_utm(p, zone);
}

UtmCoord latlon_to_utm(const LatLon& p, const UtmZone& zone) {
  if (!std::isfinite(p.latitude) || !std::isfinite(p.longitude)) {
    throw Error(ErrorCode::kDomain, "non-finite latitude/longitude");
  }
  if (std::abs(p.latitude) > kUtmMaxAbsLatitude) {
    throw Error(ErrorCode::kDomain,
                "latitude " + std::to_string(p.latitude) +
                    " outside the UTM band [-84, 84] degrees");
  }
  check_zone(zone);
  const Series& s = series();

  const double lambda =
      normalize_longitude(p.longitude - central_meridian(zone.number)) * kDegToRad;
  const double phi = p.latitude * kDegToRad;
  const double tau = std::tan(phi);
  const double tau_prime = conformal_tan(tau, s.e);

  const double xi_prime = std::atan2(tau_prime, std::cos(lambda));
  const double eta_prime =
      std::asinh(std::sin(lambda) / std::hypot(tau_prime, std::cos(lambda)));

  double xi = xi_prime;
  double eta = eta_prime;
  for (int j = 1; j <= kOrder; ++j) {
    const double a = s.alpha[j - 1];
    xi += a * std::sin(2.0 * j * xi_prime) * std::cosh(2.0 * j * eta_prime);
    eta += a * std::cos(2.0 * j * xi_prime) * std::sinh(2.0 * j * eta_prime);
  }

  UtmCoord out;
  out.zone = zone;
  out.east = kUtmFalseEasting + kUtmScaleFactor * s.rectifying * eta;
  out.north = kUtmScaleFactor * s.rectifying * xi;
  if (zone.hemisphere == Hemisphere::kSouth) out.north += kUtmFalseNorthingSouth;
  return out;
}

LatLon utm_to_latlon(const UtmCoord& c) {
  check_zone(c.zone);
  if (!std::isfinite(c.east) || !std::isfinite(c.north)) {
    throw Error(ErrorCode::kDomain, "non-finite UTM coordinate");
  }
  const Series& s = series();
  const double scale = kUtmScaleFactor * s.rectifying;
  double northing = c.north;
  if (c.zone.hemisphere == Hemisphere::kSouth) northing -= kUtmFalseNorthingSouth;

  const double xi = northing / scale;
  const double eta = (c.east - kUtmFalseEasting) / scale;

  double xi_prime = xi;
  double eta_prime = eta;
  for (int j = 1; j <= kOrder; ++j) {
    const double b = s.beta[j - 1];
    xi_prime -= b * std::sin(2.0 * j * xi) * std::cosh(2.0 * j * eta);
    eta_prime -= b * std::cos(2.0 * j * xi) * std::sinh(2.0 * j * eta);
  }

  const double tau_prime =
      std::sin(xi_prime) / std::hypot(std::sinh(eta_prime), std::cos(xi_prime));
  const double lambda = std::atan2(std::sinh(eta_prime), std::cos(xi_prime));

  // Newton iteration for tau given tau'.
  const double e2 = s.e * s.e;
  double tau = tau_prime;
  for (int iter = 0; iter < 10; ++iter) {
    const double tp = conformal_tan(tau, s.e);
    const double delta = (tau_prime - tp) / std::hypot(1.0, tp) *
                         (1.0 + (1.0 - e2) * tau * tau) /
                         ((1.0 - e2) * std::hypot(1.0, tau));
    tau += delta;
    if (std::abs(delta) < 1e-14 * std::max(1.0, std::abs(tau))) break;
  }

  LatLon out;
  out.latitude = std::atan(tau) / kDegToRad;
  out.longitude =
      normalize_longitude(central_meridian(c.zone.number) + lambda / kDegToRad);
  return out;
}

double utm_distance(const UtmCoord& a, const UtmCoord& b) {
  if (!(a.zone == b.zone)) {
    throw Error(ErrorCode::kZoneMismatch,
                "distance between UTM zones " + std::to_string(a.zone.number) +
                    " and " + std::to_string(b.zone.number) +
                    " (or across hemispheres) is not supported");
  }
  return std::hypot(a.east - b.east, a.north - b.north);
}

}  // namespace cosplace
