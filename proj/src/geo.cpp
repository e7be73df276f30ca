#include "driftcov/geo.hpp"

#include <stdexcept>
#include <vector>

namespace driftcov::geo {

void Region::validate() const {
  if (!(lon_min < lon_max) || !(lat_min < lat_max))
    throw std::invalid_argument("Region: bounds must satisfy lon_min < lon_max and lat_min < lat_max");
  if (std::fabs(lat_min) > 90.0 || std::fabs(lat_max) > 90.0)
    throw std::invalid_argument("Region: |lat| must be <= 90");
}

Projection::Projection(double lon0_deg, double lat0_deg)
    : lon0_(lon0_deg), lat0_(lat0_deg), cos_lat0_(std::cos(lat0_deg * kDegToRad)) {
  if (!std::isfinite(lon0_deg) || !std::isfinite(lat0_deg))
    throw std::invalid_argument("Projection: non-finite origin");
}

LocalPoint Projection::project(double lon_deg, double lat_deg) const {
  if (!std::isfinite(lon_deg) || !std::isfinite(lat_deg))
    throw std::invalid_argument("project: non-finite input");
  return {kEarthRadiusKm * cos_lat0_ * (lon_deg - lon0_) * kDegToRad,
          kEarthRadiusKm * (lat_deg - lat0_) * kDegToRad};
}

void Projection::unproject(const LocalPoint& p, double& lon_deg, double& lat_deg) const {
  lon_deg = lon0_ + p.x / (kEarthRadiusKm * cos_lat0_) / kDegToRad;
  lat_deg = lat0_ + p.y / kEarthRadiusKm / kDegToRad;
}

LocalRect to_local(const Region& r, const Projection& p) {
  LocalPoint lo = p.project(r.lon_min, r.lat_min);
  LocalPoint hi = p.project(r.lon_max, r.lat_max);
  return {lo.x, hi.x, lo.y, hi.y};
}

namespace {

struct Pt {
  double x, y;
};

// Clip a polygon against one half-plane keep(p) >= 0, with half-plane boundary
// crossing interpolated linearly. Standard Sutherland-Hodgman stage.
template <typename Inside, typename Cross>
std::vector<Pt> clip_edge(const std::vector<Pt>& poly, Inside inside, Cross cross) {
  std::vector<Pt> out;
  out.reserve(poly.size() + 4);
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Pt& cur = poly[i];
    const Pt& prev = poly[(i + n - 1) % n];
    bool cur_in = inside(cur);
    bool prev_in = inside(prev);
    if (cur_in) {
      if (!prev_in) out.push_back(cross(prev, cur));
      out.push_back(cur);
    } else if (prev_in) {
      out.push_back(cross(prev, cur));
    }
  }
  return out;
}

double shoelace(const std::vector<Pt>& poly) {
  double a = 0.0;
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Pt& p = poly[i];
    const Pt& q = poly[(i + 1) % n];
    a += p.x * q.y - q.x * p.y;
  }
  return 0.5 * std::fabs(a);
}

}  // namespace

double clipped_circle_area(const Circle& c, const LocalRect& r, int ngon) {
  if (!(c.radius_km > 0.0)) throw std::invalid_argument("clipped_circle_area: radius must be > 0");
  if (ngon < 8) throw std::invalid_argument("clipped_circle_area: ngon too small");

  std::vector<Pt> poly;
  poly.reserve(static_cast<std::size_t>(ngon));
  for (int i = 0; i < ngon; ++i) {
    double th = 2.0 * M_PI * (static_cast<double>(i) + 0.5) / ngon;
    poly.push_back({c.centre.x + c.radius_km * std::cos(th), c.centre.y + c.radius_km * std::sin(th)});
  }

  auto cross_x = [](double x0) {
    return [x0](const Pt& a, const Pt& b) {
      double t = (x0 - a.x) / (b.x - a.x);
      return Pt{x0, a.y + t * (b.y - a.y)};
    };
  };
  auto cross_y = [](double y0) {
    return [y0](const Pt& a, const Pt& b) {
      double t = (y0 - a.y) / (b.y - a.y);
      return Pt{a.x + t * (b.x - a.x), y0};
    };
  };

  poly = clip_edge(poly, [&](const Pt& p) { return p.x >= r.x_min; }, cross_x(r.x_min));
  if (poly.empty()) return 0.0;
  poly = clip_edge(poly, [&](const Pt& p) { return p.x <= r.x_max; }, cross_x(r.x_max));
  if (poly.empty()) return 0.0;
  poly = clip_edge(poly, [&](const Pt& p) { return p.y >= r.y_min; }, cross_y(r.y_min));
  if (poly.empty()) return 0.0;
  poly = clip_edge(poly, [&](const Pt& p) { return p.y <= r.y_max; }, cross_y(r.y_max));
  if (poly.size() < 3) return 0.0;

  return shoelace(poly);
}

}  // namespace driftcov::geo
