#include "driftcov/grid.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "driftcov/errors.hpp"

namespace driftcov {

GridField GridField::create(const geo::Region& region, double res_lon, double res_lat,
                            std::string variable, std::string units) {
  region.validate();
  if (!(res_lon > 0) || !(res_lat > 0)) throw std::invalid_argument("GridField: resolution must be > 0");
  GridField g;
  g.region = region;
  g.res_lon = res_lon;
  g.res_lat = res_lat;
  g.n_lon = std::max(1, static_cast<int>(std::ceil((region.lon_max - region.lon_min) / res_lon - 1e-9)));
  g.n_lat = std::max(1, static_cast<int>(std::ceil((region.lat_max - region.lat_min) / res_lat - 1e-9)));
  g.values.assign(static_cast<std::size_t>(g.n_lon) * g.n_lat,
                  std::numeric_limits<double>::quiet_NaN());
  g.variable = std::move(variable);
  g.units = std::move(units);
  return g;
}

std::string format_value(double v) {
  if (std::isnan(v)) return "NA";
  std::array<char, 32> buf;
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), ptr);
}

namespace {

nlohmann::json region_json(const geo::Region& r) {
  return {{"lon_min", r.lon_min}, {"lon_max", r.lon_max}, {"lat_min", r.lat_min}, {"lat_max", r.lat_max}};
}

geo::Region region_from_json(const nlohmann::json& j) {
  return {j.at("lon_min"), j.at("lon_max"), j.at("lat_min"), j.at("lat_max")};
}

void write_sidecar(const std::string& csv_path, nlohmann::json extra, const std::string& variable,
                   const std::string& units, const std::string& command, const std::string& params,
                   const std::string& input_sha256) {
  extra["variable"] = variable;
  extra["units"] = units;
  extra["command"] = command;
  extra["params"] = params;
  extra["input_sha256"] = input_sha256;
  std::ofstream out(csv_path + ".json");
  if (!out) throw std::runtime_error("cannot write sidecar for " + csv_path);
  out << extra.dump(2) << "\n";
}

double parse_value(const std::string& s, long line) {
  if (s == "NA") return std::numeric_limits<double>::quiet_NaN();
  try {
    return std::stod(s);
  } catch (const std::exception&) {
    throw parse_error("cannot parse value '" + s + "'", line);
  }
}

}  // namespace

void write_grid_csv(const GridField& grid, const std::string& path, const std::string& command,
                    const std::string& params, const std::string& input_sha256) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "lon,lat,value\n";
  for (int row = 0; row < grid.n_lat; ++row)
    for (int col = 0; col < grid.n_lon; ++col)
      out << format_value(grid.lon_at(col)) << ',' << format_value(grid.lat_at(row)) << ','
          << format_value(grid.at(row, col)) << '\n';

  nlohmann::json meta{{"region", region_json(grid.region)},
                      {"res", {{"lon", grid.res_lon}, {"lat", grid.res_lat}}},
                      {"kind", "grid"}};
  write_sidecar(path, std::move(meta), grid.variable, grid.units, command, params, input_sha256);
}

GridField read_grid_csv(const std::string& path) {
  std::ifstream meta_in(path + ".json");
  if (!meta_in) throw std::runtime_error("missing sidecar " + path + ".json");
  nlohmann::json meta = nlohmann::json::parse(meta_in);

  GridField g = GridField::create(region_from_json(meta.at("region")), meta.at("res").at("lon"),
                                  meta.at("res").at("lat"), meta.value("variable", ""),
                                  meta.value("units", ""));

  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::string line;
  std::getline(in, line);  // header
  long lineno = 1;
  std::size_t k = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto c1 = line.find(','), c2 = line.find(',', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos)
      throw parse_error("expected lon,lat,value", lineno);
    if (k >= g.values.size()) throw parse_error("more rows than grid cells", lineno);
    g.values[k++] = parse_value(line.substr(c2 + 1), lineno);
  }
  if (k != g.values.size()) throw data_error("grid CSV has fewer rows than grid cells");
  return g;
}

void write_samples_csv(const std::vector<Sample>& samples, const std::string& path,
                       const std::string& variable, const std::string& units,
                       const std::string& command, const std::string& params,
                       const std::string& input_sha256) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "lon,lat,value\n";
  for (const auto& s : samples)
    out << format_value(s.lon) << ',' << format_value(s.lat) << ',' << format_value(s.value)
        << '\n';
  write_sidecar(path, nlohmann::json{{"kind", "samples"}}, variable, units, command, params,
                input_sha256);
}

std::vector<Sample> read_samples_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::string line;
  if (!std::getline(in, line)) throw parse_error("missing header", 1);
  std::vector<Sample> out;
  long lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto c1 = line.find(','), c2 = line.find(',', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos)
      throw parse_error("expected lon,lat,value", lineno);
    Sample s;
    s.lon = parse_value(line.substr(0, c1), lineno);
    s.lat = parse_value(line.substr(c1 + 1, c2 - c1 - 1), lineno);
    s.value = parse_value(line.substr(c2 + 1), lineno);
    out.push_back(s);
  }
  return out;
}

// ---------------------------------------------------------------------------
// SHA-256 (FIPS 180-4), for provenance sidecars
// ---------------------------------------------------------------------------

namespace {

struct Sha256 {
  std::array<std::uint32_t, 8> h{0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a,
                                 0x510e527f, 0x9b05688c, 0x1f83d9ab, 0x5be0cd19};
  std::array<std::uint8_t, 64> block{};
  std::uint64_t total = 0;
  std::size_t fill = 0;

  static constexpr std::array<std::uint32_t, 64> k{
      0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1, 0x923f82a4,
      0xab1c5ed5, 0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3, 0x72be5d74, 0x80deb1fe,
      0x9bdc06a7, 0xc19bf174, 0xe49b69c1, 0xefbe4786, 0x0fc19dc6, 0x240ca1cc, 0x2de92c6f,
      0x4a7484aa, 0x5cb0a9dc, 0x76f988da, 0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7,
      0xc6e00bf3, 0xd5a79147, 0x06ca6351, 0x14292967, 0x27b70a85, 0x2e1b2138, 0x4d2c6dfc,
      0x53380d13, 0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85, 0xa2bfe8a1, 0xa81a664b,
      0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070, 0x19a4c116,
      0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a, 0x5b9cca4f, 0x682e6ff3,
      0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208, 0x90befffa, 0xa4506ceb, 0xbef9a3f7,
      0xc67178f2};

  static std::uint32_t rotr(std::uint32_t x, int n) { return (x >> n) | (x << (32 - n)); }

  void compress() {
    std::uint32_t w[64];
    for (int i = 0; i < 16; ++i)
      w[i] = (block[4 * i] << 24) | (block[4 * i + 1] << 16) | (block[4 * i + 2] << 8) |
             block[4 * i + 3];
    for (int i = 16; i < 64; ++i) {
      std::uint32_t s0 = rotr(w[i - 15], 7) ^ rotr(w[i - 15], 18) ^ (w[i - 15] >> 3);
      std::uint32_t s1 = rotr(w[i - 2], 17) ^ rotr(w[i - 2], 19) ^ (w[i - 2] >> 10);
      w[i] = w[i - 16] + s0 + w[i - 7] + s1;
    }
    auto [a, b, c, d, e, f, g, hh] = h;
    for (int i = 0; i < 64; ++i) {
      std::uint32_t s1 = rotr(e, 6) ^ rotr(e, 11) ^ rotr(e, 25);
      std::uint32_t ch = (e & f) ^ (~e & g);
      std::uint32_t t1 = hh + s1 + ch + k[i] + w[i];
      std::uint32_t s0 = rotr(a, 2) ^ rotr(a, 13) ^ rotr(a, 22);
      std::uint32_t maj = (a & b) ^ (a & c) ^ (b & c);
      std::uint32_t t2 = s0 + maj;
      hh = g; g = f; f = e; e = d + t1; d = c; c = b; b = a; a = t1 + t2;
    }
    h[0] += a; h[1] += b; h[2] += c; h[3] += d;
    h[4] += e; h[5] += f; h[6] += g; h[7] += hh;
  }

  void update(const std::uint8_t* data, std::size_t len) {
    total += len;
    while (len > 0) {
      std::size_t take = std::min(len, block.size() - fill);
      std::memcpy(block.data() + fill, data, take);
      fill += take;
      data += take;
      len -= take;
      if (fill == block.size()) {
        compress();
        fill = 0;
      }
    }
  }

  std::string finish() {
    std::uint64_t bits = total * 8;
    std::uint8_t pad = 0x80;
    update(&pad, 1);
    std::uint8_t zero = 0;
    while (fill != 56) update(&zero, 1);
    for (int i = 7; i >= 0; --i) {
      std::uint8_t b = static_cast<std::uint8_t>(bits >> (8 * i));
      update(&b, 1);
    }
    std::ostringstream hex;
    hex << std::hex;
    for (std::uint32_t v : h)
      for (int i = 3; i >= 0; --i) {
        hex.width(2);
        hex.fill('0');
        hex << ((v >> (8 * i)) & 0xff);
      }
    return hex.str();
  }
};

}  // namespace

std::string sha256_bytes(const void* data, std::size_t len) {
  Sha256 s;
  s.update(static_cast<const std::uint8_t*>(data), len);
  return s.finish();
}

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return sha256_bytes("", 0);
  Sha256 s;
  std::array<char, 65536> buf;
  while (in.read(buf.data(), buf.size()) || in.gcount() > 0)
    s.update(reinterpret_cast<const std::uint8_t*>(buf.data()), static_cast<std::size_t>(in.gcount()));
  return s.finish();
}

}  // namespace driftcov
