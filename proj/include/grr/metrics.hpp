#pragma once

#include "grr/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

namespace grr {

/// Median; mean of the two middle order statistics for even counts, NaN when
/// empty.
inline double median(std::span<const double> values) {
  if (values.empty()) return std::nan("");
  std::vector<double> v(values.begin(), values.end());
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

/// Median pose errors over a set of frames. Translation is in scene units
/// times unit_scale (e.g. 100 for meters -> cm).
struct MetricsSummary {
  double median_translation = 0.0;
  double median_rotation_deg = 0.0;
  std::size_t frame_count = 0;
  std::size_t failure_count = 0;
};

inline double rotation_error_deg(const Rotation& est, const Rotation& gt) {
  return geodesic_distance(est, gt) * kRadToDeg;
}

/// Camera-center distance.
inline double translation_error(const Vec3& est, const Vec3& gt) { return (est - gt).norm(); }

/// Failed frames are marked with NaN errors and excluded from the medians.
inline MetricsSummary summarize(std::span<const double> rot_err_deg, std::span<const double> trans_err,
                                double unit_scale = 1.0) {
  MetricsSummary m;
  m.frame_count = rot_err_deg.size();
  std::vector<double> r;
  std::vector<double> t;
  for (std::size_t i = 0; i < rot_err_deg.size(); ++i) {
    if (std::isnan(rot_err_deg[i]) || std::isnan(trans_err[i])) {
      ++m.failure_count;
      continue;
    }
    r.push_back(rot_err_deg[i]);
    t.push_back(trans_err[i] * unit_scale);
  }
  m.median_rotation_deg = median(r);
  m.median_translation = median(t);
  return m;
}

}  // namespace grr
