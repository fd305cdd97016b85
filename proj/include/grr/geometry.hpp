#pragma once

// Rotation / pose value types, SO(3) metrics and seeded random sampling.

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <istream>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace grr {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kRadToDeg = 180.0 / kPi;

struct Seed {
  std::uint64_t value = 0;
};

/// Proper rotation matrix. Construction through from_matrix() checks
/// orthonormality and det = +1 to 1e-9.
class Rotation {
 public:
  Rotation() : m_(Mat3::Identity()) {}

  static Rotation identity() { return Rotation(); }

  static Rotation from_matrix(const Mat3& m, double tol = 1e-9) {
    if (!is_rotation(m, tol)) {
      throw std::invalid_argument("matrix is not a proper rotation");
    }
    return Rotation(m, Unchecked{});
  }

  /// Right-handed rotation of `angle` radians about `axis` (need not be unit).
  static Rotation axis_angle(const Vec3& axis, double angle) {
    const double len = axis.norm();
    if (!(len > 0.0)) {
      throw std::invalid_argument("axis_angle: zero axis");
    }
    return Rotation(Eigen::AngleAxisd(angle, axis / len).toRotationMatrix(),
                    Unchecked{});
  }

  static Rotation from_quaternion(const Eigen::Quaterniond& q) {
    return Rotation(q.normalized().toRotationMatrix(), Unchecked{});
  }

  Eigen::Quaterniond to_quaternion() const { return Eigen::Quaterniond(m_); }

  static bool is_rotation(const Mat3& m, double tol = 1e-9) {
    if (!m.allFinite()) return false;
    const Mat3 e = m.transpose() * m - Mat3::Identity();
    return e.cwiseAbs().maxCoeff() <= tol && std::abs(m.determinant() - 1.0) <= tol;
  }

  const Mat3& matrix() const { return m_; }

  Rotation inverse() const { return Rotation(m_.transpose(), Unchecked{}); }

  Vec3 operator*(const Vec3& v) const { return m_ * v; }
  Rotation operator*(const Rotation& o) const { return Rotation(m_ * o.m_, Unchecked{}); }

  // Skips validation; used by solvers whose output is a rotation by
  // construction.
  struct Unchecked {};
  Rotation(const Mat3& m, Unchecked) : m_(m) {}

 private:
  Mat3 m_;
};

/// Camera-to-world transform: x_world = r * x_cam + t, t is the camera center.
struct Pose {
  Rotation r;
  Vec3 t = Vec3::Zero();

  static Pose identity() { return Pose{}; }

  Pose inverse() const {
    const Rotation ri = r.inverse();
    return Pose{ri, -(ri * t)};
  }

  Vec3 apply(const Vec3& x) const { return r * x + t; }

  Eigen::Matrix4d homogeneous() const {
    Eigen::Matrix4d h = Eigen::Matrix4d::Identity();
    h.topLeftCorner<3, 3>() = r.matrix();
    h.topRightCorner<3, 1>() = t;
    return h;
  }
};

inline Pose compose(const Pose& p, const Pose& q) {
  return Pose{p.r * q.r, p.r * q.t + p.t};
}

inline Pose inverse(const Pose& p) { return p.inverse(); }

/// Angle of the relative rotation a^T b, in [0, pi].
///
/// Evaluated as atan2(sin, cos) from the skew and trace parts of a^T b. This
/// equals arccos(clamp((tr(a^T b) - 1) / 2)) but keeps full precision near 0
/// and pi, where arccos loses half the significant digits.
inline double geodesic_distance(const Mat3& a, const Mat3& b) {
  const Mat3 rel = a.transpose() * b;
  const double cos_part = std::clamp((rel.trace() - 1.0) * 0.5, -1.0, 1.0);
  const Vec3 skew(rel(2, 1) - rel(1, 2), rel(0, 2) - rel(2, 0), rel(1, 0) - rel(0, 1));
  const double sin_part = std::min(1.0, 0.5 * skew.norm());
  return std::atan2(sin_part, cos_part);
}

inline double geodesic_distance(const Rotation& a, const Rotation& b) {
  return geodesic_distance(a.matrix(), b.matrix());
}

// ---------------------------------------------------------------------------
// Randomness

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
}  // namespace detail

/// Seeded generator. Independent streams are derived by hashing the seed with
/// a stream key (e.g. a frame index), so results do not depend on the order
/// or thread in which streams are consumed.
class Rng {
 public:
  explicit Rng(Seed seed) : engine_(detail::splitmix64(seed.value)) {}

  Rng(Seed seed, std::uint64_t stream)
      : engine_(detail::splitmix64(detail::splitmix64(seed.value) ^
                                   detail::splitmix64(stream + 0x632be59bd9b4e019ULL))) {}

  Rng(Seed seed, std::uint64_t stream, std::uint64_t substream)
      : Rng(Seed{detail::splitmix64(seed.value) ^ detail::splitmix64(stream)},
            substream) {}

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }

  Vec3 normal3() {
    const double x = normal();
    const double y = normal();
    const double z = normal();
    return {x, y, z};
  }

  Vec3 unit_vector() {
    for (;;) {
      const Vec3 v = normal3();
      const double n = v.norm();
      if (n > 1e-12) return v / n;
    }
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

/// Uniform (Haar) rotation: normalized quaternion of four standard normals.
inline Rotation random_rotation(Rng& rng) {
  for (;;) {
    const double w = rng.normal();
    const double x = rng.normal();
    const double y = rng.normal();
    const double z = rng.normal();
    const Eigen::Quaterniond q(w, x, y, z);
    if (q.norm() > 1e-12) return Rotation::from_quaternion(q);
  }
}

inline Rotation random_rotation(Seed seed) {
  Rng rng(seed);
  return random_rotation(rng);
}

inline Pose random_pose(Rng& rng, double translation_scale = 1.0) {
  Rotation r = random_rotation(rng);
  return Pose{r, translation_scale * rng.normal3()};
}

inline Pose random_pose(Seed seed, double translation_scale = 1.0) {
  Rng rng(seed);
  return random_pose(rng, translation_scale);
}

// ---------------------------------------------------------------------------
// Pose text format: one pose per line, 12 numbers, row-major R then t.

inline void write_pose_line(std::ostream& os, const Pose& p) {
  std::ostringstream line;
  line << std::setprecision(17);
  const Mat3& m = p.r.matrix();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) line << m(i, j) << ' ';
  line << p.t.x() << ' ' << p.t.y() << ' ' << p.t.z() << '\n';
  os << line.str();
}

inline void write_poses(std::ostream& os, const std::vector<Pose>& poses) {
  for (const Pose& p : poses) write_pose_line(os, p);
}

/// Parses the 12-number line format. Blank lines and lines starting with '#'
/// are skipped. Rotations are checked to 1e-6 since files may carry
/// truncated digits; they are then re-orthonormalized.
inline std::vector<Pose> read_poses(std::istream& is) {
  std::vector<Pose> poses;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    double v[12];
    for (double& x : v) {
      if (!(ls >> x)) {
        throw std::runtime_error("pose file line " + std::to_string(lineno) +
                                 ": expected 12 numbers");
      }
    }
    std::string rest;
    if (ls >> rest) {
      throw std::runtime_error("pose file line " + std::to_string(lineno) +
                               ": trailing data");
    }
    Mat3 m;
    m << v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8];
    if (!Rotation::is_rotation(m, 1e-6)) {
      throw std::runtime_error("pose file line " + std::to_string(lineno) +
                               ": rotation block is not in SO(3)");
    }
    if (!Rotation::is_rotation(m, 1e-12)) {
      m = Eigen::Quaterniond(m).normalized().toRotationMatrix();
    }
    const Vec3 t(v[9], v[10], v[11]);
    if (!t.allFinite()) {
      throw std::runtime_error("pose file line " + std::to_string(lineno) +
                               ": non-finite translation");
    }
    poses.push_back(Pose{Rotation(m, Rotation::Unchecked{}), t});
  }
  return poses;
}

}  // namespace grr
