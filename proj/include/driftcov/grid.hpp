#pragma once

#include <string>
#include <vector>

#include "driftcov/geo.hpp"

namespace driftcov {

/// Regular lon/lat raster of one scalar covariate; NaN marks missing cells.
/// Values are row-major with latitude rows ascending and longitude ascending
/// within each row; entries sit at cell centres.
struct GridField {
  geo::Region region;
  double res_lon{}, res_lat{};
  int n_lon{}, n_lat{};
  std::vector<double> values;
  std::string variable;
  std::string units;

  static GridField create(const geo::Region& region, double res_lon, double res_lat,
                          std::string variable, std::string units);
  double lon_at(int col) const { return region.lon_min + (col + 0.5) * res_lon; }
  double lat_at(int row) const { return region.lat_min + (row + 0.5) * res_lat; }
  double& at(int row, int col) { return values[static_cast<std::size_t>(row) * n_lon + col]; }
  double at(int row, int col) const { return values[static_cast<std::size_t>(row) * n_lon + col]; }
};

/// Writes `lon,lat,value` rows (NA for missing) plus a `<path>.json` sidecar
/// carrying the grid metadata and the provenance fields.
void write_grid_csv(const GridField& grid, const std::string& path, const std::string& command,
                    const std::string& params, const std::string& input_sha256);

/// Reads a grid written by write_grid_csv (requires its sidecar).
GridField read_grid_csv(const std::string& path);

struct Sample {
  double lon{}, lat{}, value{};
};

void write_samples_csv(const std::vector<Sample>& samples, const std::string& path,
                       const std::string& variable, const std::string& units,
                       const std::string& command, const std::string& params,
                       const std::string& input_sha256);

std::vector<Sample> read_samples_csv(const std::string& path);

/// Hex SHA-256 of a file's bytes; empty-string hash for a missing path.
std::string sha256_file(const std::string& path);
std::string sha256_bytes(const void* data, std::size_t len);

/// Shortest decimal form that round-trips a double exactly ("NA" for NaN).
std::string format_value(double v);

}  // namespace driftcov
