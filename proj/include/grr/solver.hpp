#pragma once

// Closed-form pose recovery: rotation-only Procrustes on rays, rigid
// registration on points, and the decoupled combination (rotation from rays,
// translation from points).

#include "grr/camera.hpp"
#include "grr/geometry.hpp"

#include <Eigen/SVD>

#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace grr {

/// Correspondences source_i (camera frame) -> target_i (world frame).
struct AlignmentProblem {
  std::vector<Vec3> source;
  std::vector<Vec3> target;
  std::vector<double> weights;  // empty = uniform

  std::size_t size() const { return source.size(); }

  double weight(std::size_t i) const { return weights.empty() ? 1.0 : weights[i]; }

  double total_weight() const {
    if (weights.empty()) return static_cast<double>(source.size());
    double s = 0.0;
    for (double w : weights) s += w;
    return s;
  }

  void validate() const {
    if (source.size() != target.size()) {
      throw std::invalid_argument("alignment: source/target length mismatch");
    }
    if (source.size() < 3) throw std::invalid_argument("alignment: need at least 3 correspondences");
    if (!weights.empty()) {
      if (weights.size() != source.size()) {
        throw std::invalid_argument("alignment: weights length mismatch");
      }
      for (double w : weights) {
        if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("alignment: weights must be finite and >= 0");
      }
      if (!(total_weight() > 0.0)) throw std::invalid_argument("alignment: weights sum to zero");
    }
  }
};

struct SolveDiagnostics {
  Vec3 singular_values = Vec3::Zero();  // descending
  bool reflection_corrected = false;
  double condition = std::numeric_limits<double>::infinity();  // sigma1 / sigma3
};

/// Raised when the rotation is not observable (sigma2 / sigma1 < 1e-9), e.g.
/// all rays collinear or all points on a line.
class DegenerateConfiguration : public std::runtime_error {
 public:
  explicit DegenerateConfiguration(const std::string& what, std::string branch = {})
      : std::runtime_error(branch.empty() ? what : branch + ": " + what),
        branch_(std::move(branch)) {}

  const std::string& branch() const { return branch_; }

 private:
  std::string branch_;
};

inline constexpr double kDegeneracyRatio = 1e-9;

namespace detail {

/// SVD of a 3x3 covariance with the Kabsch sign fix folded in:
/// R = U diag(1, 1, d) V^T, d = sign(det(U V^T)).
struct KabschFactors {
  Mat3 u;
  Mat3 v;
  Vec3 sigma;
  double d = 1.0;
  Mat3 r;
};

inline KabschFactors factor_covariance(const Mat3& h) {
  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  KabschFactors f;
  f.u = svd.matrixU();
  f.v = svd.matrixV();
  f.sigma = svd.singularValues();
  f.d = (f.u * f.v.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  Mat3 dmat = Mat3::Identity();
  dmat(2, 2) = f.d;
  f.r = f.u * dmat * f.v.transpose();
  return f;
}

inline SolveDiagnostics diagnostics_of(const KabschFactors& f) {
  SolveDiagnostics diag;
  diag.singular_values = f.sigma;
  diag.reflection_corrected = f.d < 0.0;
  diag.condition = f.sigma(2) > 0.0 ? f.sigma(0) / f.sigma(2)
                                    : std::numeric_limits<double>::infinity();
  return diag;
}

inline void check_observable(const Vec3& sigma, const std::string& branch) {
  if (!(sigma(0) > 0.0) || sigma(1) / sigma(0) < kDegeneracyRatio) {
    throw DegenerateConfiguration(
        "rotation unobservable (sigma2/sigma1 below " + std::to_string(kDegeneracyRatio) + ")",
        branch);
  }
}

inline std::vector<Vec3> normalized(std::span<const Vec3> v) {
  std::vector<Vec3> out;
  out.reserve(v.size());
  for (const Vec3& x : v) {
    const double n = x.norm();
    if (!(n > 0.0)) throw std::invalid_argument("alignment: zero-length direction");
    out.push_back(x / n);
  }
  return out;
}

inline Vec3 weighted_centroid(const AlignmentProblem& p, std::span<const Vec3> v) {
  Vec3 c = Vec3::Zero();
  for (std::size_t i = 0; i < v.size(); ++i) c += p.weight(i) * v[i];
  return c / p.total_weight();
}

}  // namespace detail

struct KabschOptions {
  /// Renormalize source and target vectors before forming the covariance.
  /// Used for ray bundles, where predictions may drift off the unit sphere.
  bool normalize_inputs = false;
};

/// Covariance H = sum_i w_i target_i source_i^T of a (possibly normalized)
/// problem.
inline Mat3 alignment_covariance(const AlignmentProblem& prob, const KabschOptions& opts = {}) {
  std::vector<Vec3> src = prob.source;
  std::vector<Vec3> tgt = prob.target;
  if (opts.normalize_inputs) {
    src = detail::normalized(src);
    tgt = detail::normalized(tgt);
  }
  Mat3 h = Mat3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) h += prob.weight(i) * tgt[i] * src[i].transpose();
  return h;
}

struct RotationSolution {
  Rotation rotation;
  SolveDiagnostics diagnostics;
};

struct RigidSolution {
  Pose pose;
  SolveDiagnostics diagnostics;
};

/// Rotation R minimizing sum_i w_i |R source_i - target_i|^2.
inline RotationSolution kabsch_rotation(const AlignmentProblem& prob,
                                        const KabschOptions& opts = {}) {
  prob.validate();
  const detail::KabschFactors f = detail::factor_covariance(alignment_covariance(prob, opts));
  detail::check_observable(f.sigma, {});
  return {Rotation(f.r, Rotation::Unchecked{}), detail::diagnostics_of(f)};
}

/// Rigid (R, t) minimizing sum_i w_i |R source_i + t - target_i|^2, no scale.
inline RigidSolution rigid_align(const AlignmentProblem& prob) {
  prob.validate();
  const Vec3 cs = detail::weighted_centroid(prob, prob.source);
  const Vec3 ct = detail::weighted_centroid(prob, prob.target);
  Mat3 h = Mat3::Zero();
  for (std::size_t i = 0; i < prob.size(); ++i) {
    h += prob.weight(i) * (prob.target[i] - ct) * (prob.source[i] - cs).transpose();
  }
  const detail::KabschFactors f = detail::factor_covariance(h);
  detail::check_observable(f.sigma, {});
  Rotation r(f.r, Rotation::Unchecked{});
  return {Pose{r, ct - r * cs}, detail::diagnostics_of(f)};
}

/// Weighted least-squares residual of a rigid hypothesis.
inline double alignment_cost(const AlignmentProblem& prob, const Mat3& r,
                             const Vec3& t = Vec3::Zero()) {
  double c = 0.0;
  for (std::size_t i = 0; i < prob.size(); ++i) {
    c += prob.weight(i) * (r * prob.source[i] + t - prob.target[i]).squaredNorm();
  }
  return c;
}

struct PoseRecovery {
  Pose pose;                      // rotation from rays, translation from points
  Rotation rotation_from_points;  // point-branch rotation, not used in `pose`
  SolveDiagnostics ray_diagnostics;
  SolveDiagnostics point_diagnostics;
};

inline constexpr const char* kRayBranch = "ray branch";
inline constexpr const char* kPointBranch = "point branch";

/// Decoupled recovery: Kabsch on (normalized) rays for rotation, rigid
/// registration on points for translation. Degeneracies are rethrown tagged
/// with the failing branch.
inline PoseRecovery recover_pose(const RayBundle& rays_cam, const PointMap& pts_cam,
                                 const RayBundle& rays_pred, const PointMap& pts_pred) {
  const std::size_t n = rays_cam.size();
  if (pts_cam.size() != n || rays_pred.size() != n || pts_pred.size() != n) {
    throw std::invalid_argument("recover_pose: representation lengths differ");
  }
  RotationSolution rs;
  try {
    rs = kabsch_rotation(AlignmentProblem{rays_cam.dirs, rays_pred.dirs, {}},
                         KabschOptions{.normalize_inputs = true});
  } catch (const DegenerateConfiguration& e) {
    throw DegenerateConfiguration(e.what(), kRayBranch);
  }
  RigidSolution ps;
  try {
    ps = rigid_align(AlignmentProblem{pts_cam.pts, pts_pred.pts, {}});
  } catch (const DegenerateConfiguration& e) {
    throw DegenerateConfiguration(e.what(), kPointBranch);
  }
  return PoseRecovery{Pose{rs.rotation, ps.pose.t}, ps.pose.r, rs.diagnostics, ps.diagnostics};
}

}  // namespace grr
