#include "driftcov/trajectory.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <map>
#include <sstream>
#include <unordered_map>

#include "driftcov/errors.hpp"

namespace driftcov::traj {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& s, const char* what, long line) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw parse_error(std::string("cannot parse ") + what + " value '" + s + "'", line);
  }
}

// Days from civil date, Howard Hinnant's algorithm; avoids timezone machinery.
long long days_from_civil(int y, int m, int d) {
  y -= m <= 2;
  const long long era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153u * (m + (m > 2 ? -3 : 9)) + 2u) / 5u + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<long long>(doe) - 719468;
}

void civil_from_days(long long z, int& y, unsigned& m, unsigned& d) {
  z += 719468;
  const long long era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  y = static_cast<int>(yoe) + static_cast<int>(era) * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = doy - (153 * mp + 2) / 5 + 1;
  m = mp + (mp < 10 ? 3 : -9);
  y += (m <= 2);
}

}  // namespace

double parse_time(const std::string& raw) {
  std::string s = trim(raw);
  if (s.empty()) throw std::invalid_argument("empty time field");
  // ISO-8601 "YYYY-MM-DDTHH:MM:SS" with optional trailing 'Z'
  if (s.size() >= 19 && s[4] == '-' && s[7] == '-' && (s[10] == 'T' || s[10] == ' ')) {
    int y, mo, d, h, mi;
    double sec;
    if (std::sscanf(s.c_str(), "%d-%d-%d%*c%d:%d:%lf", &y, &mo, &d, &h, &mi, &sec) != 6)
      throw std::invalid_argument("unparseable ISO-8601 time '" + s + "'");
    if (mo < 1 || mo > 12 || d < 1 || d > 31 || h < 0 || h > 23 || mi < 0 || mi > 59 || sec < 0 || sec >= 61)
      throw std::invalid_argument("out-of-range ISO-8601 time '" + s + "'");
    return static_cast<double>(days_from_civil(y, mo, d)) * 86400.0 + h * 3600.0 + mi * 60.0 + sec;
  }
  std::size_t pos = 0;
  double v = std::stod(s, &pos);
  if (pos != s.size()) throw std::invalid_argument("unparseable time '" + s + "'");
  return v;
}

int utc_month(double time_s) {
  long long days = static_cast<long long>(std::floor(time_s / 86400.0));
  int y;
  unsigned m, d;
  civil_from_days(days, y, m, d);
  return static_cast<int>(m);
}

std::vector<DrifterRecord> ingest(std::istream& csv, double delta_s) {
  if (!(delta_s > 0)) throw std::invalid_argument("ingest: delta must be > 0");

  std::string line;
  if (!std::getline(csv, line)) throw parse_error("missing header line", 1);
  auto header = split_csv_line(line);
  for (auto& h : header) h = trim(h);
  bool has_uv = false;
  if (header.size() >= 6 && header[4] == "u" && header[5] == "v")
    has_uv = true;
  else if (header.size() < 4 || header[0] != "id" || header[1] != "time" || header[2] != "lon" ||
           header[3] != "lat")
    throw parse_error("expected header id,time,lon,lat[,u,v]", 1);

  std::vector<DrifterRecord> records;
  std::unordered_map<std::string, std::size_t> index;

  long lineno = 1;
  while (std::getline(csv, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() < 4 || (has_uv && cells.size() < 6))
      throw parse_error("too few columns", lineno);

    Fix fix;
    fix.drifter_id = trim(cells[0]);
    if (fix.drifter_id.empty()) throw parse_error("empty id", lineno);
    try {
      fix.time_s = parse_time(cells[1]);
    } catch (const std::exception& e) {
      throw parse_error(e.what(), lineno);
    }
    fix.lon = parse_double(trim(cells[2]), "lon", lineno);
    fix.lat = parse_double(trim(cells[3]), "lat", lineno);
    if (std::fabs(fix.lat) > 90.0) throw parse_error("latitude out of range [-90, 90]", lineno);
    if (has_uv) {
      std::string us = trim(cells[4]), vs = trim(cells[5]);
      if (!us.empty() && !vs.empty()) {
        fix.u = parse_double(us, "u", lineno);
        fix.v = parse_double(vs, "v", lineno);
      }
    }

    auto [it, inserted] = index.try_emplace(fix.drifter_id, records.size());
    if (inserted) records.push_back(DrifterRecord{fix.drifter_id, {}});
    records[it->second].fixes.push_back(std::move(fix));
  }

  for (auto& rec : records) {
    std::stable_sort(rec.fixes.begin(), rec.fixes.end(),
                     [](const Fix& a, const Fix& b) { return a.time_s < b.time_s; });
    for (std::size_t i = 1; i < rec.fixes.size(); ++i)
      if (rec.fixes[i].time_s == rec.fixes[i - 1].time_s)
        throw data_error("duplicate timestamp for drifter '" + rec.id + "' at t=" +
                         std::to_string(rec.fixes[i].time_s));
  }
  return records;
}

std::vector<TrajectorySegment> segment(const DrifterRecord& rec, const geo::Region& region,
                                       double delta_s, SegmentationReport* report) {
  region.validate();
  if (!(delta_s > 0)) throw std::invalid_argument("segment: delta must be > 0");

  std::vector<TrajectorySegment> out;
  std::vector<Fix> current;
  std::size_t seg_index = 0;

  auto flush = [&] {
    if (current.size() >= 2) {
      out.push_back({rec.id + "#" + std::to_string(seg_index++), std::move(current), delta_s});
    } else if (report) {
      report->dropped_short += current.size();
    }
    current.clear();
  };

  for (const Fix& fix : rec.fixes) {
    if (report) ++report->total_fixes;
    if (!region.contains(fix.lon, fix.lat)) {
      if (report) ++report->dropped_outside;
      flush();
      continue;
    }
    if (!current.empty() && fix.time_s - current.back().time_s > 1.5 * delta_s) flush();
    current.push_back(fix);
  }
  flush();

  if (report) {
    report->n_segments += out.size();
    for (const auto& s : out) report->retained_fixes += s.fixes.size();
  }
  return out;
}

std::vector<TrajectorySegment> segment(const std::vector<DrifterRecord>& recs,
                                       const geo::Region& region, double delta_s,
                                       SegmentationReport* report) {
  std::vector<TrajectorySegment> out;
  for (const auto& rec : recs) {
    auto segs = segment(rec, region, delta_s, report);
    out.insert(out.end(), std::make_move_iterator(segs.begin()), std::make_move_iterator(segs.end()));
  }
  return out;
}

std::vector<std::complex<double>> velocities(const TrajectorySegment& seg) {
  const auto& f = seg.fixes;
  const std::size_t n = f.size();
  if (n < 2) throw std::invalid_argument("velocities: segment must hold at least 2 fixes");

  bool all_uv = std::all_of(f.begin(), f.end(), [](const Fix& x) { return x.u && x.v; });
  std::vector<std::complex<double>> z(n);
  if (all_uv) {
    for (std::size_t j = 0; j < n; ++j) z[j] = {*f[j].u, *f[j].v};
    return z;
  }

  // Finite differences of tangent-plane displacements, metres. Each difference
  // is projected about its own centre fix so the east-west metric uses the
  // local latitude.
  auto diff_ms = [&](std::size_t a, std::size_t b, std::size_t at) {
    double dt = f[b].time_s - f[a].time_s;
    double cos_lat = std::cos(f[at].lat * geo::kDegToRad);
    double dx_m = geo::kEarthRadiusKm * 1000.0 * cos_lat * (f[b].lon - f[a].lon) * geo::kDegToRad;
    double dy_m = geo::kEarthRadiusKm * 1000.0 * (f[b].lat - f[a].lat) * geo::kDegToRad;
    return std::complex<double>{dx_m / dt, dy_m / dt};
  };

  z[0] = diff_ms(0, 1, 0);
  for (std::size_t j = 1; j + 1 < n; ++j) z[j] = diff_ms(j - 1, j + 1, j);
  z[n - 1] = diff_ms(n - 2, n - 1, n - 1);
  return z;
}

}  // namespace driftcov::traj
