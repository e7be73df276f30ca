#include <doctest.h>

#include <cmath>

#include "driftcov/occupancy.hpp"

using namespace driftcov;

namespace {

const geo::Region kRegion{-40.0, -30.0, -58.0, -50.0};

traj::TrajectorySegment straight_track(const occupancy::CircleGrid& grid, int circle,
                                       double speed_ms, double delta_s, int n_fixes) {
  // Straight west-to-east track through the circle centre.
  traj::TrajectorySegment seg{"s#0", {}, delta_s};
  double lon0 = grid.centre_lon[circle];
  double lat0 = grid.centre_lat[circle];
  double deg_per_fix = speed_ms * delta_s / 1000.0 /
                       (6371.0 * std::cos(lat0 * geo::kDegToRad) * geo::kDegToRad);
  // Fixes straddle the centre at half-spacing offsets (the generic phase for
  // the fence-post dwell estimate).
  for (int i = 0; i < n_fixes; ++i)
    seg.fixes.push_back({"s", i * delta_s, lon0 + (i - n_fixes / 2 + 0.5) * deg_per_fix, lat0,
                         std::nullopt, std::nullopt});
  return seg;
}

}  // namespace

TEST_CASE("circle grid: layout and edge corrections") {
  auto grid = occupancy::CircleGrid::make(kRegion, 50.0, 20, 25);
  CHECK(grid.size() == 500);
  CHECK(grid.centre_lon[0] == doctest::Approx(kRegion.lon_min));
  CHECK(grid.centre_lon[19] == doctest::Approx(kRegion.lon_max));
  CHECK(grid.centre_lat[0] == doctest::Approx(kRegion.lat_min));
  CHECK(grid.centre_lat[499] == doctest::Approx(kRegion.lat_max));

  // Equidistant per axis.
  double step0 = grid.centre_lon[1] - grid.centre_lon[0];
  for (int ix = 2; ix < 20; ++ix)
    CHECK(grid.centre_lon[ix] - grid.centre_lon[ix - 1] == doctest::Approx(step0));

  for (double c : grid.correction) CHECK(c >= 1.0);

  // Interior circles need essentially no correction; corner circles need ~4.
  int mid = 12 * 20 + 10;
  CHECK(grid.correction[mid] == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(grid.correction[0] == doctest::Approx(4.0).epsilon(1e-3));
}

TEST_CASE("residence time: straight diameter crossing dwells 2R/v") {
  auto grid = occupancy::CircleGrid::make(kRegion, 50.0, 20, 25);
  int mid = 12 * 20 + 10;
  const double v = 0.5, delta = 3600.0;
  auto seg = straight_track(grid, mid, v, delta, 300);
  auto rt = occupancy::residence_time({seg}, grid);
  REQUIRE(rt[mid].has_value());
  const double expected_min = 2 * 50.0 * 1000.0 / v / 60.0;  // 3333.3 minutes
  CHECK(std::fabs(*rt[mid] - expected_min) <= delta / 60.0 + 1e-9);
}

TEST_CASE("residence time: edge circle doubles the raw median") {
  auto grid = occupancy::CircleGrid::make(kRegion, 50.0, 20, 25);
  int edge = 12 * 20 + 0;  // west edge, vertically interior
  int mid = 12 * 20 + 10;
  CHECK(grid.correction[edge] == doctest::Approx(2.0).epsilon(1e-3));

  // Identical west-east diameter crossings through both centres give the same
  // raw dwell, so the edge value must be twice the interior one.
  auto seg_edge = straight_track(grid, edge, 0.5, 3600.0, 300);
  auto seg_mid = straight_track(grid, mid, 0.5, 3600.0, 300);
  seg_mid.segment_id = "s#1";
  auto rt = occupancy::residence_time({seg_edge, seg_mid}, grid);
  REQUIRE(rt[edge].has_value());
  REQUIRE(rt[mid].has_value());
  CHECK(*rt[edge] == doctest::Approx(2.0 * *rt[mid]).epsilon(2e-3));
}

TEST_CASE("residence time: per-km2 variant divides by the full disc area") {
  auto grid = occupancy::CircleGrid::make(kRegion, 50.0, 20, 25);
  int mid = 12 * 20 + 10;
  auto seg = straight_track(grid, mid, 0.5, 3600.0, 300);
  auto plain = occupancy::residence_time({seg}, grid);
  auto dens = occupancy::residence_time({seg}, grid, {.per_km2 = true});
  REQUIRE(plain[mid].has_value());
  CHECK(*dens[mid] == doctest::Approx(*plain[mid] / (M_PI * 50.0 * 50.0)));
}

TEST_CASE("residence time: empty segment list rejected, empty circles missing") {
  auto grid = occupancy::CircleGrid::make(kRegion, 50.0, 4, 4);
  CHECK_THROWS_AS(occupancy::residence_time({}, grid), std::invalid_argument);

  auto seg = straight_track(grid, 5, 0.5, 3600.0, 10);
  auto rt = occupancy::residence_time({seg}, grid);
  bool some_missing = false;
  for (const auto& v : rt) some_missing |= !v.has_value();
  CHECK(some_missing);
}

TEST_CASE("mass flux: definitional arithmetic on an interior circle") {
  auto grid = occupancy::CircleGrid::make(kRegion, 50.0, 20, 25);
  int mid = 12 * 20 + 10;
  // Three separate segments crossing the circle.
  std::vector<traj::TrajectorySegment> segs;
  for (int k = 0; k < 3; ++k) {
    auto s = straight_track(grid, mid, 0.5, 3600.0, 300);
    s.segment_id = "s#" + std::to_string(k);
    segs.push_back(s);
  }
  auto flux = occupancy::mass_flux(segs, grid, 24.0);
  const double full = M_PI * 50.0 * 50.0;
  CHECK(flux[mid] == doctest::Approx(3.0 / (24.0 * full)).epsilon(1e-3));

  auto flux2 = occupancy::mass_flux(segs, grid, 48.0);
  CHECK(flux2[mid] == doctest::Approx(flux[mid] / 2));

  // A circle nowhere near the track sees zero flux.
  CHECK(flux[0] == 0.0);
}

TEST_CASE("mass flux: monotone when segments are added") {
  auto grid = occupancy::CircleGrid::make(kRegion, 50.0, 10, 10);
  auto s1 = straight_track(grid, 55, 0.5, 3600.0, 200);
  auto s2 = straight_track(grid, 44, 0.5, 3600.0, 200);
  s2.segment_id = "s#1";
  auto f1 = occupancy::mass_flux({s1}, grid, 24.0);
  auto f12 = occupancy::mass_flux({s1, s2}, grid, 24.0);
  for (int i = 0; i < grid.size(); ++i) CHECK(f12[i] >= f1[i] - 1e-15);
}

TEST_CASE("drifter density: hours per km2 and mass conservation") {
  auto grid = occupancy::CellGrid::make(kRegion, 0.25, 0.25);
  std::vector<traj::Fix> fixes;
  for (int i = 0; i < 10; ++i)
    fixes.push_back({"d", i * 3600.0, -35.01, -54.01, std::nullopt, std::nullopt});
  auto dens = occupancy::drifter_density(fixes, grid, 3600.0);
  int idx = grid.cell_index(-35.01, -54.01);
  REQUIRE(idx >= 0);
  CHECK(dens[idx] == doctest::Approx(10.0 / grid.cell_area_km2(idx)));

  // total density * area == delta hours * fix count
  double mass = 0;
  for (int i = 0; i < grid.size(); ++i) mass += dens[i] * grid.cell_area_km2(i);
  CHECK(mass == doctest::Approx(10.0));

  // no fixes -> all-zero grid
  auto empty = occupancy::drifter_density({}, grid, 3600.0);
  for (double v : empty) CHECK(v == 0.0);
}

TEST_CASE("drifter density: cell areas depend on latitude") {
  auto grid = occupancy::CellGrid::make(kRegion, 0.25, 0.25);
  // Row 0 sits at higher |latitude| (further poleward), so its cells are smaller.
  CHECK(grid.cell_area_km2(0) < grid.cell_area_km2(grid.size() - 1));
  for (int i = 0; i < grid.size(); ++i) CHECK(grid.cell_area_km2(i) > 0);
}

TEST_CASE("surface speed samples: month filter and 3-4-5 speed") {
  traj::TrajectorySegment seg{"d#0", {}, 3600};
  // July fix (filtered out with DJF) and January fix (kept).
  auto t_jul = traj::parse_time("2010-07-10T00:00:00Z");
  auto t_jan = traj::parse_time("2010-01-10T00:00:00Z");
  traj::Fix a{"d", t_jul, -35.0, -54.0, 3.0, 4.0};
  traj::Fix b{"d", t_jul + 3600, -35.0, -54.0, 3.0, 4.0};
  traj::Fix c{"d", t_jan, -35.2, -54.2, 3.0, 4.0};
  traj::Fix e{"d", t_jan + 3600, -35.2, -54.2, 3.0, 4.0};
  seg.fixes = {a, b};
  traj::TrajectorySegment seg2{"d#1", {c, e}, 3600};

  auto djf = occupancy::surface_speed_samples({seg, seg2});
  REQUIRE(djf.size() == 2);
  CHECK(djf[0].speed_ms == doctest::Approx(5.0));

  auto all = occupancy::surface_speed_samples({seg, seg2}, {});
  CHECK(all.size() == 4);
}
