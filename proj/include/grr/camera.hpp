#pragma once

// Pinhole camera tessellated into an n x n patch grid, and the canonical
// (camera-frame) ray bundle and unit-distance pointmap derived from it.
//
// Camera frame: +z forward, +x right, +y down. Patches are ordered row-major
// (patch index = row * n + col, row along image v, col along image u).

#include "grr/geometry.hpp"

#include <istream>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace grr {

struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.5;
  double cy = 0.5;
  int width = 1;
  int height = 1;

  void validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw std::invalid_argument("intrinsics: focal lengths must be > 0");
    if (width < 1 || height < 1) throw std::invalid_argument("intrinsics: image size must be >= 1");
    if (!(cx >= 0.0 && cx <= width) || !(cy >= 0.0 && cy <= height)) {
      throw std::invalid_argument("intrinsics: principal point outside image");
    }
  }
};

struct PatchGrid {
  int n = 1;
  Intrinsics intrinsics;

  std::size_t size() const { return static_cast<std::size_t>(n) * static_cast<std::size_t>(n); }

  void validate() const {
    intrinsics.validate();
    if (n < 1) throw std::invalid_argument("patch grid: n must be >= 1");
  }

  /// Pixel range [begin, end) of patch k along an axis of `extent` pixels.
  static std::pair<int, int> span_of(int k, int n, int extent) {
    const auto edge = [&](int i) {
      return static_cast<int>((static_cast<long long>(i) * extent) / n);
    };
    return {edge(k), edge(k + 1)};
  }
};

/// Per-patch viewing directions. Ground-truth bundles are unit-norm; bundles
/// that hold predictions may drift off the sphere.
struct RayBundle {
  std::vector<Vec3> dirs;

  std::size_t size() const { return dirs.size(); }
  bool is_unit(double tol = 1e-9) const {
    for (const Vec3& d : dirs)
      if (std::abs(d.norm() - 1.0) > tol) return false;
    return true;
  }
};

struct PointMap {
  std::vector<Vec3> pts;

  std::size_t size() const { return pts.size(); }
};

/// Raised when a patch of the grid would contain no pixels.
class EmptyPatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class RayAveraging {
  kMeanOfPixelRays,  ///< mean of the normalized pixel rays, renormalized
  kPatchCenter,      ///< single ray through the geometric patch center
};

inline Vec3 pixel_ray(const Intrinsics& k, double u, double v) {
  return Vec3((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0).normalized();
}

inline RayBundle canonical_rays(const PatchGrid& grid,
                                RayAveraging mode = RayAveraging::kMeanOfPixelRays) {
  grid.validate();
  const Intrinsics& k = grid.intrinsics;
  if (grid.n > std::min(k.width, k.height)) {
    throw EmptyPatch("patch grid: n = " + std::to_string(grid.n) +
                     " exceeds image size; some patches would be empty");
  }
  RayBundle out;
  out.dirs.reserve(grid.size());
  for (int row = 0; row < grid.n; ++row) {
    const auto [v0, v1] = PatchGrid::span_of(row, grid.n, k.height);
    for (int col = 0; col < grid.n; ++col) {
      const auto [u0, u1] = PatchGrid::span_of(col, grid.n, k.width);
      if (mode == RayAveraging::kPatchCenter) {
        out.dirs.push_back(pixel_ray(k, 0.5 * (u0 + u1), 0.5 * (v0 + v1)));
        continue;
      }
      Vec3 sum = Vec3::Zero();
      for (int v = v0; v < v1; ++v)
        for (int u = u0; u < u1; ++u) sum += pixel_ray(k, u + 0.5, v + 0.5);
      out.dirs.push_back(sum.normalized());
    }
  }
  return out;
}

/// Unit-distance points along each camera-frame ray: p_i = d_i.
inline PointMap canonical_points(const RayBundle& rays) {
  PointMap out;
  out.pts.reserve(rays.size());
  for (const Vec3& d : rays.dirs) out.pts.push_back(d);
  return out;
}

inline RayBundle world_rays(const Pose& pose, const RayBundle& rays_cam) {
  RayBundle out;
  out.dirs.reserve(rays_cam.size());
  for (const Vec3& d : rays_cam.dirs) out.dirs.push_back(pose.r * d);
  return out;
}

inline PointMap world_points(const Pose& pose, const PointMap& pts_cam) {
  PointMap out;
  out.pts.reserve(pts_cam.size());
  for (const Vec3& p : pts_cam.pts) out.pts.push_back(pose.apply(p));
  return out;
}

// ---------------------------------------------------------------------------
// CSV: header "i,x,y,z", one row per patch in row-major order.

namespace detail {
inline void write_vec_csv(std::ostream& os, std::span<const Vec3> v) {
  std::ostringstream s;
  s << std::setprecision(17) << "i,x,y,z\n";
  for (std::size_t i = 0; i < v.size(); ++i) {
    s << i << ',' << v[i].x() << ',' << v[i].y() << ',' << v[i].z() << '\n';
  }
  os << s.str();
}

inline std::vector<Vec3> read_vec_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("csv: empty input");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "i,x,y,z") throw std::runtime_error("csv: expected header 'i,x,y,z'");
  std::vector<Vec3> out;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::size_t idx = 0;
    double x = 0, y = 0, z = 0;
    char c1 = 0, c2 = 0, c3 = 0;
    if (!(ls >> idx >> c1 >> x >> c2 >> y >> c3 >> z) || c1 != ',' || c2 != ',' || c3 != ',') {
      throw std::runtime_error("csv line " + std::to_string(lineno) + ": malformed row");
    }
    if (idx != out.size()) {
      throw std::runtime_error("csv line " + std::to_string(lineno) + ": rows out of order");
    }
    out.emplace_back(x, y, z);
  }
  return out;
}
}  // namespace detail

inline void write_csv(std::ostream& os, const RayBundle& r) { detail::write_vec_csv(os, r.dirs); }
inline void write_csv(std::ostream& os, const PointMap& p) { detail::write_vec_csv(os, p.pts); }
inline RayBundle read_ray_csv(std::istream& is) { return RayBundle{detail::read_vec_csv(is)}; }
inline PointMap read_point_csv(std::istream& is) { return PointMap{detail::read_vec_csv(is)}; }

}  // namespace grr
