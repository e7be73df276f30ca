#pragma once

#include <complex>
#include <istream>
#include <optional>
#include <string>
#include <vector>

#include "driftcov/geo.hpp"

namespace driftcov::traj {

/// One timestamped position fix, with optional instrument-supplied velocity.
struct Fix {
  std::string drifter_id;
  double time_s{};  // epoch seconds, UTC
  double lon{};
  double lat{};
  std::optional<double> u;  // m/s east
  std::optional<double> v;  // m/s north
};

/// All fixes of one drifter, time-sorted.
struct DrifterRecord {
  std::string id;
  std::vector<Fix> fixes;
};

/// Maximal in-region, gap-free run of fixes for one drifter.
struct TrajectorySegment {
  std::string segment_id;
  std::vector<Fix> fixes;
  double delta_s{};
};

struct SegmentationReport {
  std::size_t total_fixes = 0;
  std::size_t retained_fixes = 0;
  std::size_t dropped_outside = 0;
  std::size_t dropped_short = 0;
  std::size_t n_segments = 0;
};

/// Parses trajectory CSV (header id,time,lon,lat[,u,v]; time as epoch seconds
/// or ISO-8601 UTC). Fixes are grouped by drifter id in first-appearance order
/// and sorted by time. Throws parse_error naming the offending line, or
/// data_error on duplicate (id, time) pairs.
std::vector<DrifterRecord> ingest(std::istream& csv, double delta_s);

/// Splits a record into segments at out-of-region fixes and at time gaps
/// exceeding 1.5 * delta. Segments shorter than 2 fixes are dropped (counted
/// in the report). Segment ids are "<drifter_id>#<k>" with k a running index.
std::vector<TrajectorySegment> segment(const DrifterRecord& rec, const geo::Region& region,
                                       double delta_s, SegmentationReport* report = nullptr);

std::vector<TrajectorySegment> segment(const std::vector<DrifterRecord>& recs,
                                       const geo::Region& region, double delta_s,
                                       SegmentationReport* report = nullptr);

/// Complex velocity u + iv in m/s per fix. Instrument velocities pass through
/// when present on every fix; otherwise central differences of locally
/// projected positions (one-sided at the endpoints).
std::vector<std::complex<double>> velocities(const TrajectorySegment& seg);

/// Parses "YYYY-MM-DDTHH:MM:SS[Z]" or a plain number as epoch seconds.
double parse_time(const std::string& text);

/// Calendar month (1-12) of an epoch-seconds instant, UTC.
int utc_month(double time_s);

}  // namespace driftcov::traj
