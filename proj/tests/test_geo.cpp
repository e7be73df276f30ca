#include <doctest.h>

#include <cmath>
#include <initializer_list>
#include <stdexcept>

#include "driftcov/geo.hpp"

using namespace driftcov;

TEST_CASE("projection maps the origin to the origin") {
  geo::Projection proj(-38.0, -54.0);
  auto p = proj.project(-38.0, -54.0);
  CHECK(p.x == doctest::Approx(0.0));
  CHECK(p.y == doctest::Approx(0.0));
}

TEST_CASE("one degree of longitude at the equator is the arc length") {
  geo::Projection proj(0.0, 0.0);
  auto p = proj.project(1.0, 0.0);
  CHECK(p.x == doctest::Approx(6371.0 * M_PI / 180.0).epsilon(1e-12));
  CHECK(p.y == doctest::Approx(0.0));
}

TEST_CASE("projection round-trips within 1 m hundreds of km from the origin") {
  geo::Projection proj(-38.0, -54.0);
  for (double dlon : {-6.0, -1.5, 0.3, 4.0}) {
    for (double dlat : {-4.0, -0.7, 2.0, 4.4}) {
      auto p = proj.project(-38.0 + dlon, -54.0 + dlat);
      double lon, lat;
      proj.unproject(p, lon, lat);
      auto q = proj.project(lon, lat);
      CHECK(geo::distance(p, q) < 1e-3);  // km
      CHECK(lon == doctest::Approx(-38.0 + dlon).epsilon(1e-12));
      CHECK(lat == doctest::Approx(-54.0 + dlat).epsilon(1e-12));
    }
  }
}

TEST_CASE("projection is isometric along meridians") {
  geo::Projection proj(10.0, 45.0);
  auto a = proj.project(10.0, 45.0);
  auto b = proj.project(10.0, 46.0);
  CHECK(geo::distance(a, b) == doctest::Approx(6371.0 * M_PI / 180.0).epsilon(1e-12));
}

TEST_CASE("project rejects non-finite input") {
  geo::Projection proj(0.0, 0.0);
  CHECK_THROWS_AS(proj.project(std::nan(""), 0.0), std::invalid_argument);
}

TEST_CASE("region validation") {
  CHECK_THROWS_AS((geo::Region{1, 0, 0, 1}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((geo::Region{0, 1, -95, 1}.validate()), std::invalid_argument);
  CHECK_NOTHROW((geo::Region{-40, -30, -56, -50}.validate()));
}

TEST_CASE("clipped circle area") {
  const double r = 50.0;
  const double full = M_PI * r * r;
  geo::LocalRect rect{-500, 500, -400, 400};

  SUBCASE("interior circle keeps the full area") {
    double a = geo::clipped_circle_area({{0, 0}, r}, rect);
    CHECK(a == doctest::Approx(full).epsilon(1e-4));
  }
  SUBCASE("centre on an edge leaves half the disc") {
    double a = geo::clipped_circle_area({{-500, 0}, r}, rect);
    CHECK(a == doctest::Approx(full / 2).epsilon(1e-4));
  }
  SUBCASE("centre at a corner leaves a quarter disc") {
    double a = geo::clipped_circle_area({{-500, -400}, r}, rect);
    CHECK(a == doctest::Approx(full / 4).epsilon(1e-4));
  }
  SUBCASE("circle entirely outside the rectangle") {
    CHECK(geo::clipped_circle_area({{-700, 0}, r}, rect) == 0.0);
  }
  SUBCASE("area never exceeds the full disc and grows with the rectangle") {
    double prev = 0.0;
    for (double half : {20.0, 40.0, 60.0, 100.0}) {
      double a = geo::clipped_circle_area({{0, 0}, r}, {-half, half, -half, half});
      CHECK(a <= full * (1 + 1e-12));
      CHECK(a >= prev - 1e-12);
      prev = a;
    }
  }
  SUBCASE("exact circular-segment oracle for a single straight cut") {
    // Circle centred 20 km inside one edge: area = full - segment(d = 20).
    double d = 20.0;
    double segment = r * r * std::acos(d / r) - d * std::sqrt(r * r - d * d);
    double a = geo::clipped_circle_area({{-500 + d, 0}, r}, rect);
    CHECK(a == doctest::Approx(full - segment).epsilon(1e-4));
  }
}
