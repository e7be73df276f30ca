#pragma once

#include <cmath>

namespace driftcov::geo {

inline constexpr double kEarthRadiusKm = 6371.0;
inline constexpr double kDegToRad = M_PI / 180.0;

/// Axis-aligned lon/lat study region.
struct Region {
  double lon_min{};
  double lon_max{};
  double lat_min{};
  double lat_max{};

  bool contains(double lon, double lat) const {
    return lon >= lon_min && lon <= lon_max && lat >= lat_min && lat <= lat_max;
  }
  double lon_centre() const { return 0.5 * (lon_min + lon_max); }
  double lat_centre() const { return 0.5 * (lat_min + lat_max); }

  /// Throws std::invalid_argument if bounds are inverted or latitudes exceed +/-90.
  void validate() const;
};

/// Point in a local tangent-plane projection, kilometres from the origin.
/// Also doubles as the generic planar location for the simulation studies,
/// where coordinates live on the unit square.
struct LocalPoint {
  double x{};
  double y{};
};

inline double distance(const LocalPoint& a, const LocalPoint& b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

/// Equirectangular tangent-plane projection about a fixed origin,
/// spherical Earth of radius 6371 km.
class Projection {
 public:
  Projection(double lon0_deg, double lat0_deg);
  static Projection about_centre(const Region& r) { return Projection(r.lon_centre(), r.lat_centre()); }

  /// Throws std::invalid_argument on non-finite input.
  LocalPoint project(double lon_deg, double lat_deg) const;
  void unproject(const LocalPoint& p, double& lon_deg, double& lat_deg) const;

  double lon0() const { return lon0_; }
  double lat0() const { return lat0_; }

 private:
  double lon0_, lat0_, cos_lat0_;
};

struct Circle {
  LocalPoint centre;
  double radius_km{};
};

/// Rectangle in local coordinates (a Region pushed through a Projection).
struct LocalRect {
  double x_min{}, x_max{}, y_min{}, y_max{};
};

LocalRect to_local(const Region& r, const Projection& p);

/// Area of circle-rectangle intersection in km^2, via Sutherland-Hodgman
/// clipping of a regular n-gon approximation and the shoelace formula.
/// Relative error against the exact area is below 1e-4 at the default n.
/// Returns 0 when the circle lies entirely outside the rectangle.
double clipped_circle_area(const Circle& c, const LocalRect& r, int ngon = 1024);

}  // namespace driftcov::geo
