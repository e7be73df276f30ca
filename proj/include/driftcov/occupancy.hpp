#pragma once

#include <optional>
#include <set>
#include <vector>

#include "driftcov/geo.hpp"
#include "driftcov/trajectory.hpp"

namespace driftcov::occupancy {

/// Lattice of circular counting windows with border-effect corrections
/// (full-circle area over clipped area).
struct CircleGrid {
  geo::Projection projection;
  double radius_km{};
  int nx{}, ny{};
  std::vector<geo::LocalPoint> centres;     // x-fastest, index = iy*nx + ix
  std::vector<double> centre_lon, centre_lat;
  std::vector<double> clipped_area_km2;
  std::vector<double> correction;           // pi R^2 / clipped area, >= 1

  static CircleGrid make(const geo::Region& region, double radius_km = 50.0, int nx = 20,
                         int ny = 25);
  int size() const { return nx * ny; }
};

/// Graticule cells tiling the region, with spherical-quad areas (latitude
/// dependent).
struct CellGrid {
  geo::Region region;
  double cell_lon_deg{}, cell_lat_deg{};
  int n_lon{}, n_lat{};
  std::vector<double> area_km2;  // per row of cells (constant along a latitude band)

  static CellGrid make(const geo::Region& region, double cell_lon_deg = 0.25,
                       double cell_lat_deg = 0.25);
  int size() const { return n_lon * n_lat; }
  /// Flat index of the containing cell, or -1 outside the region.
  int cell_index(double lon, double lat) const;
  double cell_area_km2(int index) const { return area_km2[index / n_lon]; }
  double lon_centre(int index) const;
  double lat_centre(int index) const;
};

struct ResidenceOptions {
  bool per_km2 = false;  // divide by pi R^2 for the min/km^2 variant
};

/// Median consecutive dwell time of drifter runs inside each circle, minutes,
/// scaled by the circle's edge correction. Circles with no runs yield nullopt.
std::vector<std::optional<double>> residence_time(const std::vector<traj::TrajectorySegment>& segments,
                                                  const CircleGrid& grid,
                                                  const ResidenceOptions& opt = {});

/// Count of segment-runs crossing each circle per year per km^2, using the
/// clipped circle area (equivalently the full-circle rate times the edge
/// correction).
std::vector<double> mass_flux(const std::vector<traj::TrajectorySegment>& segments,
                              const CircleGrid& grid, double total_period_years);

/// Hours of drifter presence per km^2 in each cell; every fix contributes
/// delta hours to its containing cell.
std::vector<double> drifter_density(const std::vector<traj::Fix>& fixes, const CellGrid& grid,
                                    double delta_s);

struct SpeedSample {
  double lon{}, lat{};
  double speed_ms{};
};

/// Scattered (location, |z|) samples restricted to fixes whose UTC month is
/// in the filter (empty filter = keep everything).
std::vector<SpeedSample> surface_speed_samples(const std::vector<traj::TrajectorySegment>& segments,
                                               const std::set<int>& months = {12, 1, 2});

}  // namespace driftcov::occupancy
