#pragma once

// Training objective over geometric representations: pose, geometry,
// regularization and domain terms, their weighted total, and analytic
// gradients of the per-frame loss w.r.t. the predicted representations
// (through the pose solvers).

#include "grr/camera.hpp"
#include "grr/solver.hpp"
#include "grr/solver_grad.hpp"

#include <cmath>
#include <set>
#include <stdexcept>
#include <utility>
#include <vector>

namespace grr {

/// Defaults are all 1 with w_domain = 0.1. These are not published values.
struct LossWeights {
  double w_pose_r = 1.0;
  double w_pose_p = 1.0;
  double w_geo_r = 1.0;
  double w_geo_p = 1.0;
  double w_reg_r = 1.0;
  double w_reg_p = 1.0;
  double w_syn = 1.0;
  double w_real = 1.0;
  double w_domain = 0.1;

  void validate() const {
    for (double w : {w_pose_r, w_pose_p, w_geo_r, w_geo_p, w_reg_r, w_reg_p, w_syn, w_real, w_domain}) {
      if (!std::isfinite(w) || w < 0.0) throw std::invalid_argument("loss weights must be finite and >= 0");
    }
  }
};

enum class NormOrder : int { kL1 = 1, kL2 = 2 };

inline int order(NormOrder p) { return static_cast<int>(p); }

/// p = 1 during warmup, 2 afterwards.
struct NormSchedule {
  std::size_t warmup_steps = 0;
  std::size_t current_step = 0;

  NormOrder p() const { return p_at(current_step); }
  NormOrder p_at(std::size_t step) const { return step < warmup_steps ? NormOrder::kL1 : NormOrder::kL2; }
};

/// How |t_hat - t_gt|_p is read when p = 2.
enum class TranslationPenalty {
  kNorm,         ///< Euclidean norm
  kSquaredNorm,  ///< squared Euclidean norm
};

class EmptyNeighborSet : public std::invalid_argument {
 public:
  EmptyNeighborSet() : std::invalid_argument("regularization: neighbor set is empty") {}
};

struct NeighborSet {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;

  std::size_t size() const { return pairs.size(); }

  void validate(std::size_t patch_count) const {
    std::set<std::pair<std::size_t, std::size_t>> seen;
    for (auto [i, j] : pairs) {
      if (i >= patch_count || j >= patch_count) throw std::invalid_argument("neighbor index out of range");
      if (i == j) throw std::invalid_argument("neighbor pair with i == j");
      if (!seen.insert(std::minmax(i, j)).second) throw std::invalid_argument("duplicate neighbor pair");
    }
  }

  /// Horizontal and vertical neighbors on an n x n grid.
  static NeighborSet four_connected(int n) { return grid(n, false); }
  /// Adds both diagonals.
  static NeighborSet eight_connected(int n) { return grid(n, true); }

 private:
  static NeighborSet grid(int n, bool diagonals) {
    NeighborSet s;
    const auto idx = [n](int r, int c) { return static_cast<std::size_t>(r * n + c); };
    for (int r = 0; r < n; ++r) {
      for (int c = 0; c < n; ++c) {
        if (c + 1 < n) s.pairs.emplace_back(idx(r, c), idx(r, c + 1));
        if (r + 1 < n) s.pairs.emplace_back(idx(r, c), idx(r + 1, c));
        if (diagonals && r + 1 < n) {
          if (c + 1 < n) s.pairs.emplace_back(idx(r, c), idx(r + 1, c + 1));
          if (c > 0) s.pairs.emplace_back(idx(r, c), idx(r + 1, c - 1));
        }
      }
    }
    return s;
  }
};

namespace detail {

inline double vec_norm(const Vec3& e, NormOrder p) {
  return p == NormOrder::kL1 ? e.cwiseAbs().sum() : e.norm();
}

// Subgradient 0 at the kinks.
inline Vec3 vec_norm_grad(const Vec3& e, NormOrder p) {
  if (p == NormOrder::kL1) {
    return e.unaryExpr([](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
  }
  const double n = e.norm();
  return n > 0.0 ? Vec3(e / n) : Vec3::Zero();
}

inline double scalar_pow(double x, NormOrder p) { return p == NormOrder::kL1 ? std::abs(x) : x * x; }

inline double scalar_pow_grad(double x, NormOrder p) {
  if (p == NormOrder::kL1) return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
  return 2.0 * x;
}

inline void require_same_length(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw std::invalid_argument(std::string(what) + ": length mismatch");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Pose loss: w_pose_r d_g(R_hat, R_gt)^p + w_pose_p |t_hat - t_gt|_p

inline double pose_loss(const Rotation& r_hat, const Vec3& t_hat, const Pose& gt,
                        const LossWeights& w, NormOrder p,
                        TranslationPenalty pen = TranslationPenalty::kNorm) {
  const double theta = geodesic_distance(r_hat, gt.r);
  const Vec3 e = t_hat - gt.t;
  const double trans = (p == NormOrder::kL2 && pen == TranslationPenalty::kSquaredNorm)
                           ? e.squaredNorm()
                           : detail::vec_norm(e, p);
  return w.w_pose_r * std::pow(theta, order(p)) + w.w_pose_p * trans;
}

struct PoseLossGrad {
  Mat3 rotation = Mat3::Zero();  // ambient gradient w.r.t. the 9 entries of R_hat
  Vec3 translation = Vec3::Zero();
};

/// Gradient of pose_loss. The rotation part differentiates
/// theta = arccos((tr(R_gt^T R) - 1) / 2); only its tangent component at
/// R_hat is meaningful, which is all the solver VJP consumes.
inline PoseLossGrad pose_loss_grad(const Rotation& r_hat, const Vec3& t_hat, const Pose& gt,
                                   const LossWeights& w, NormOrder p,
                                   TranslationPenalty pen = TranslationPenalty::kNorm) {
  PoseLossGrad g;
  const double theta = geodesic_distance(r_hat, gt.r);
  const double s = std::sin(theta);
  // d theta / dR = -R_gt / (2 sin theta)
  double coeff = 0.0;
  if (p == NormOrder::kL1) {
    coeff = s > 0.0 ? -0.5 / s : 0.0;
  } else {
    coeff = s > 0.0 ? -theta / s : -1.0;  // 2 theta * (-1 / (2 sin theta))
  }
  g.rotation = w.w_pose_r * coeff * gt.r.matrix();
  const Vec3 e = t_hat - gt.t;
  if (p == NormOrder::kL2 && pen == TranslationPenalty::kSquaredNorm) {
    g.translation = w.w_pose_p * 2.0 * e;
  } else {
    g.translation = w.w_pose_p * detail::vec_norm_grad(e, p);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Geometry loss: w_geo_r mean_i(1 - cos(d_hat_i, d_gt_i))
//              + w_geo_p mean_i |p_hat_i - p_gt_i|_p

inline double geometry_loss(const RayBundle& d_hat, const RayBundle& d_gt, const PointMap& p_hat,
                            const PointMap& p_gt, const LossWeights& w, NormOrder p) {
  detail::require_same_length(d_hat.size(), d_gt.size(), "geometry_loss rays");
  detail::require_same_length(p_hat.size(), p_gt.size(), "geometry_loss points");
  double ray = 0.0;
  for (std::size_t i = 0; i < d_hat.size(); ++i) {
    // 1 - cos(a, b) = |a/|a| - b/|b||^2 / 2, which stays >= 0 and is exactly 0 for a == b.
    ray += 0.5 * (d_hat.dirs[i].normalized() - d_gt.dirs[i].normalized()).squaredNorm();
  }
  double pt = 0.0;
  for (std::size_t i = 0; i < p_hat.size(); ++i) pt += detail::vec_norm(p_hat.pts[i] - p_gt.pts[i], p);
  const double ray_mean = d_hat.size() ? ray / static_cast<double>(d_hat.size()) : 0.0;
  const double pt_mean = p_hat.size() ? pt / static_cast<double>(p_hat.size()) : 0.0;
  return w.w_geo_r * ray_mean + w.w_geo_p * pt_mean;
}

/// Cotangents on predicted rays and points.
struct RepresentationGrad {
  std::vector<Vec3> rays;
  std::vector<Vec3> points;

  RepresentationGrad() = default;
  RepresentationGrad(std::size_t nr, std::size_t np)
      : rays(nr, Vec3::Zero()), points(np, Vec3::Zero()) {}

  RepresentationGrad& operator+=(const RepresentationGrad& o) {
    for (std::size_t i = 0; i < rays.size(); ++i) rays[i] += o.rays[i];
    for (std::size_t i = 0; i < points.size(); ++i) points[i] += o.points[i];
    return *this;
  }
};

inline RepresentationGrad geometry_loss_grad(const RayBundle& d_hat, const RayBundle& d_gt,
                                             const PointMap& p_hat, const PointMap& p_gt,
                                             const LossWeights& w, NormOrder p) {
  RepresentationGrad g(d_hat.size(), p_hat.size());
  const double nr = static_cast<double>(d_hat.size());
  for (std::size_t i = 0; i < d_hat.size(); ++i) {
    const double len = d_hat.dirs[i].norm();
    const Vec3 dn = d_hat.dirs[i] / len;
    const Vec3 gn = d_gt.dirs[i].normalized();
    g.rays[i] = -(w.w_geo_r / nr) * (gn - dn * dn.dot(gn)) / len;
  }
  const double np = static_cast<double>(p_hat.size());
  for (std::size_t i = 0; i < p_hat.size(); ++i) {
    g.points[i] = (w.w_geo_p / np) * detail::vec_norm_grad(p_hat.pts[i] - p_gt.pts[i], p);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Regularization: mean over neighbor pairs of
//   w_reg_r |d_hat_i . d_hat_j - d_cam_i . d_cam_j|^p
// + w_reg_p | |p_hat_i - p_hat_j| - |p_gt_i - p_gt_j| |^p
// The ray term compares against camera-frame dot products, so it is blind to
// any global rotation of the predictions.

inline double regularization_loss(const RayBundle& d_hat, const PointMap& p_hat,
                                  const RayBundle& d_cam, const PointMap& p_gt,
                                  const NeighborSet& nbrs, const LossWeights& w, NormOrder p) {
  if (nbrs.size() == 0) throw EmptyNeighborSet();
  detail::require_same_length(d_hat.size(), d_cam.size(), "regularization_loss rays");
  detail::require_same_length(p_hat.size(), p_gt.size(), "regularization_loss points");
  double sum = 0.0;
  for (auto [i, j] : nbrs.pairs) {
    const double a = d_hat.dirs[i].dot(d_hat.dirs[j]) - d_cam.dirs[i].dot(d_cam.dirs[j]);
    const double b = (p_hat.pts[i] - p_hat.pts[j]).norm() - (p_gt.pts[i] - p_gt.pts[j]).norm();
    sum += w.w_reg_r * detail::scalar_pow(a, p) + w.w_reg_p * detail::scalar_pow(b, p);
  }
  return sum / static_cast<double>(nbrs.size());
}

inline RepresentationGrad regularization_loss_grad(const RayBundle& d_hat, const PointMap& p_hat,
                                                   const RayBundle& d_cam, const PointMap& p_gt,
                                                   const NeighborSet& nbrs, const LossWeights& w,
                                                   NormOrder p) {
  if (nbrs.size() == 0) throw EmptyNeighborSet();
  RepresentationGrad g(d_hat.size(), p_hat.size());
  const double inv = 1.0 / static_cast<double>(nbrs.size());
  for (auto [i, j] : nbrs.pairs) {
    const double a = d_hat.dirs[i].dot(d_hat.dirs[j]) - d_cam.dirs[i].dot(d_cam.dirs[j]);
    const double ga = inv * w.w_reg_r * detail::scalar_pow_grad(a, p);
    g.rays[i] += ga * d_hat.dirs[j];
    g.rays[j] += ga * d_hat.dirs[i];

    const Vec3 diff = p_hat.pts[i] - p_hat.pts[j];
    const double len = diff.norm();
    const double b = len - (p_gt.pts[i] - p_gt.pts[j]).norm();
    if (len > 0.0) {
      const Vec3 gb = inv * w.w_reg_p * detail::scalar_pow_grad(b, p) * diff / len;
      g.points[i] += gb;
      g.points[j] -= gb;
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Domain classifier BCE on a logit; label 0 = synthetic, 1 = real.

enum class DomainLabel : int { kSynthetic = 0, kReal = 1 };

/// softplus(z) - y z, evaluated without overflow.
inline double domain_bce(double logit, DomainLabel label) {
  const double y = static_cast<double>(static_cast<int>(label));
  return std::max(logit, 0.0) - y * logit + std::log1p(std::exp(-std::abs(logit)));
}

inline double domain_bce_grad(double logit, DomainLabel label) {
  const double y = static_cast<double>(static_cast<int>(label));
  const double sig = logit >= 0.0 ? 1.0 / (1.0 + std::exp(-logit))
                                  : std::exp(logit) / (1.0 + std::exp(logit));
  return sig - y;
}

// ---------------------------------------------------------------------------
// Total

struct LossComponents {
  double pose = 0.0;
  double geo = 0.0;
  double reg = 0.0;

  double sum() const { return pose + geo + reg; }
};

inline double total_loss(const LossComponents& syn, const LossComponents& real,
                         double syn_domain, double real_domain, const LossWeights& w) {
  return w.w_syn * syn.sum() + w.w_real * real.sum() + w.w_domain * (syn_domain + real_domain);
}

// ---------------------------------------------------------------------------
// Per-frame loss through the solver

/// Everything needed to score one frame's predictions.
struct FrameLossInput {
  RayBundle rays_cam;
  PointMap points_cam;
  RayBundle rays_gt;    // world frame
  PointMap points_gt;   // world frame
  Pose pose_gt;
  NeighborSet neighbors;
  RayBundle rays_pred;
  PointMap points_pred;

  /// Builds GT world representations for `pose` on `grid`, with predictions
  /// initialized to GT.
  static FrameLossInput from_ground_truth(const PatchGrid& grid, const Pose& pose) {
    FrameLossInput in;
    in.rays_cam = canonical_rays(grid);
    in.points_cam = canonical_points(in.rays_cam);
    in.rays_gt = world_rays(pose, in.rays_cam);
    in.points_gt = world_points(pose, in.points_cam);
    in.pose_gt = pose;
    in.neighbors = NeighborSet::four_connected(grid.n);
    in.rays_pred = in.rays_gt;
    in.points_pred = in.points_gt;
    return in;
  }
};

struct FrameLossOptions {
  NormOrder p = NormOrder::kL2;
  TranslationPenalty translation = TranslationPenalty::kNorm;
};

/// Pose + geometry + regularization for one frame. The pose term scores the
/// decoupled recovery (rotation from rays, translation from points).
inline LossComponents frame_loss(const FrameLossInput& in, const LossWeights& w,
                                 const FrameLossOptions& opt = {}) {
  const PoseRecovery rec = recover_pose(in.rays_cam, in.points_cam, in.rays_pred, in.points_pred);
  LossComponents c;
  c.pose = pose_loss(rec.pose.r, rec.pose.t, in.pose_gt, w, opt.p, opt.translation);
  c.geo = geometry_loss(in.rays_pred, in.rays_gt, in.points_pred, in.points_gt, w, opt.p);
  c.reg = regularization_loss(in.rays_pred, in.points_pred, in.rays_cam, in.points_gt, in.neighbors, w, opt.p);
  return c;
}

/// Gradient of frame_loss(...).sum() w.r.t. rays_pred and points_pred.
inline RepresentationGrad frame_loss_grad(const FrameLossInput& in, const LossWeights& w,
                                          const FrameLossOptions& opt = {}) {
  const PoseRecovery rec = recover_pose(in.rays_cam, in.points_cam, in.rays_pred, in.points_pred);
  const PoseLossGrad pg = pose_loss_grad(rec.pose.r, rec.pose.t, in.pose_gt, w, opt.p, opt.translation);

  RepresentationGrad g = geometry_loss_grad(in.rays_pred, in.rays_gt, in.points_pred, in.points_gt, w, opt.p);
  g += regularization_loss_grad(in.rays_pred, in.points_pred, in.rays_cam, in.points_gt, in.neighbors, w, opt.p);

  const AlignmentGradient ray_vjp =
      kabsch_rotation_vjp(VjpRequest{AlignmentProblem{in.rays_cam.dirs, in.rays_pred.dirs, {}}, pg.rotation, {}},
                          KabschOptions{.normalize_inputs = true});
  const AlignmentGradient pt_vjp = rigid_align_vjp(
      VjpRequest{AlignmentProblem{in.points_cam.pts, in.points_pred.pts, {}}, Mat3::Zero(), pg.translation});
  for (std::size_t i = 0; i < g.rays.size(); ++i) g.rays[i] += ray_vjp.target[i];
  for (std::size_t i = 0; i < g.points.size(); ++i) g.points[i] += pt_vjp.target[i];
  return g;
}

}  // namespace grr
