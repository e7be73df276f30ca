#include "driftcov/occupancy.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace driftcov::occupancy {

CircleGrid CircleGrid::make(const geo::Region& region, double radius_km, int nx, int ny) {
  region.validate();
  if (!(radius_km > 0)) throw std::invalid_argument("CircleGrid: radius must be > 0");
  if (nx < 2 || ny < 2) throw std::invalid_argument("CircleGrid: need at least 2x2 centres");

  CircleGrid g{geo::Projection::about_centre(region), radius_km, nx, ny, {}, {}, {}, {}, {}};
  const geo::LocalRect rect = geo::to_local(region, g.projection);
  const double full = M_PI * radius_km * radius_km;

  for (int iy = 0; iy < ny; ++iy) {
    double lat = region.lat_min + (region.lat_max - region.lat_min) * iy / (ny - 1);
    for (int ix = 0; ix < nx; ++ix) {
      double lon = region.lon_min + (region.lon_max - region.lon_min) * ix / (nx - 1);
      geo::LocalPoint c = g.projection.project(lon, lat);
      double clipped = geo::clipped_circle_area({c, radius_km}, rect);
      g.centres.push_back(c);
      g.centre_lon.push_back(lon);
      g.centre_lat.push_back(lat);
      g.clipped_area_km2.push_back(clipped);
      g.correction.push_back(clipped > 0 ? std::max(1.0, full / clipped) : 0.0);
    }
  }
  return g;
}

CellGrid CellGrid::make(const geo::Region& region, double cell_lon_deg, double cell_lat_deg) {
  region.validate();
  if (!(cell_lon_deg > 0) || !(cell_lat_deg > 0))
    throw std::invalid_argument("CellGrid: cell sizes must be > 0");

  CellGrid g;
  g.region = region;
  g.cell_lon_deg = cell_lon_deg;
  g.cell_lat_deg = cell_lat_deg;
  g.n_lon = std::max(1, static_cast<int>(std::ceil((region.lon_max - region.lon_min) / cell_lon_deg - 1e-9)));
  g.n_lat = std::max(1, static_cast<int>(std::ceil((region.lat_max - region.lat_min) / cell_lat_deg - 1e-9)));

  // Exact spherical quad area R^2 dlon (sin lat2 - sin lat1), per latitude band.
  const double r2 = geo::kEarthRadiusKm * geo::kEarthRadiusKm;
  const double dlon_rad = cell_lon_deg * geo::kDegToRad;
  for (int iy = 0; iy < g.n_lat; ++iy) {
    double lat1 = region.lat_min + iy * cell_lat_deg;
    double lat2 = std::min(lat1 + cell_lat_deg, region.lat_max);
    g.area_km2.push_back(r2 * dlon_rad *
                         (std::sin(lat2 * geo::kDegToRad) - std::sin(lat1 * geo::kDegToRad)));
  }
  return g;
}

int CellGrid::cell_index(double lon, double lat) const {
  if (!region.contains(lon, lat)) return -1;
  int ix = std::min(n_lon - 1, static_cast<int>((lon - region.lon_min) / cell_lon_deg));
  int iy = std::min(n_lat - 1, static_cast<int>((lat - region.lat_min) / cell_lat_deg));
  return iy * n_lon + ix;
}

double CellGrid::lon_centre(int index) const {
  return region.lon_min + (index % n_lon + 0.5) * cell_lon_deg;
}

double CellGrid::lat_centre(int index) const {
  return region.lat_min + (index / n_lon + 0.5) * cell_lat_deg;
}

namespace {

// Maximal runs of consecutive in-circle fixes; calls sink(run_length) per run.
template <typename Sink>
void for_each_run(const traj::TrajectorySegment& seg, const CircleGrid& grid, int circle,
                  Sink&& sink) {
  const geo::LocalPoint& c = grid.centres[circle];
  int run = 0;
  for (const auto& fix : seg.fixes) {
    geo::LocalPoint p = grid.projection.project(fix.lon, fix.lat);
    if (geo::distance(p, c) <= grid.radius_km) {
      ++run;
    } else if (run > 0) {
      sink(run);
      run = 0;
    }
  }
  if (run > 0) sink(run);
}

double median(std::vector<double>& v) {
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::vector<std::optional<double>> residence_time(const std::vector<traj::TrajectorySegment>& segments,
                                                  const CircleGrid& grid,
                                                  const ResidenceOptions& opt) {
  if (segments.empty()) throw std::invalid_argument("residence_time: no segments");

  std::vector<std::optional<double>> out(grid.size());
  const double full = M_PI * grid.radius_km * grid.radius_km;

  for (int ci = 0; ci < grid.size(); ++ci) {
    if (grid.clipped_area_km2[ci] <= 0) continue;
    std::vector<double> dwell_min;
    for (const auto& seg : segments) {
      for_each_run(seg, grid, ci, [&](int run_len) {
        // Fence-post duration; single-fix runs get half a sample interval.
        double dur_s = run_len >= 2 ? (run_len - 1) * seg.delta_s : 0.5 * seg.delta_s;
        dwell_min.push_back(dur_s / 60.0);
      });
    }
    if (dwell_min.empty()) continue;
    double value = median(dwell_min) * grid.correction[ci];
    if (opt.per_km2) value /= full;
    out[ci] = value;
  }
  return out;
}

std::vector<double> mass_flux(const std::vector<traj::TrajectorySegment>& segments,
                              const CircleGrid& grid, double total_period_years) {
  if (!(total_period_years > 0)) throw std::invalid_argument("mass_flux: period must be > 0");

  std::vector<double> out(grid.size(), 0.0);
  for (int ci = 0; ci < grid.size(); ++ci) {
    if (grid.clipped_area_km2[ci] <= 0) continue;
    long runs = 0;
    for (const auto& seg : segments) for_each_run(seg, grid, ci, [&](int) { ++runs; });
    out[ci] = runs / (total_period_years * grid.clipped_area_km2[ci]);
  }
  return out;
}

std::vector<double> drifter_density(const std::vector<traj::Fix>& fixes, const CellGrid& grid,
                                    double delta_s) {
  if (!(delta_s > 0)) throw std::invalid_argument("drifter_density: delta must be > 0");
  std::vector<double> hours(grid.size(), 0.0);
  for (const auto& fix : fixes) {
    int idx = grid.cell_index(fix.lon, fix.lat);
    if (idx >= 0) hours[idx] += delta_s / 3600.0;
  }
  std::vector<double> out(grid.size());
  for (int i = 0; i < grid.size(); ++i) out[i] = hours[i] / grid.cell_area_km2(i);
  return out;
}

std::vector<SpeedSample> surface_speed_samples(const std::vector<traj::TrajectorySegment>& segments,
                                               const std::set<int>& months) {
  std::vector<SpeedSample> out;
  for (const auto& seg : segments) {
    auto z = traj::velocities(seg);
    for (std::size_t j = 0; j < seg.fixes.size(); ++j) {
      const auto& fix = seg.fixes[j];
      if (!months.empty() && !months.count(traj::utc_month(fix.time_s))) continue;
      out.push_back({fix.lon, fix.lat, std::abs(z[j])});
    }
  }
  return out;
}

}  // namespace driftcov::occupancy
