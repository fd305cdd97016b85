#pragma once

// Vector-Jacobian products through the SVD-based solvers.
//
// With H = U S V^T and d = sign(det(U V^T)), write U' = U diag(1,1,d) and
// s' = (s1, s2, d*s3) so that H = U' diag(s') V^T and R = U' V^T. For a
// perturbation dH, U'^T dR V is antisymmetric with entries
//
//   X_ij = (P_ij - P_ji) / (s'_i + s'_j),   P = U'^T dH V,
//
// so for an upstream cotangent G on R the cotangent on H is
//
//   dL/dH = U' K V^T,   K_ij = (Gh_ij - Gh_ji) / (s'_i + s'_j),  Gh = U'^T G V.
//
// The sign d is held constant (it is piecewise constant in H). Only sums
// s'_i + s'_j appear; when d = -1 the pairs involving the third axis reduce to
// differences s_i - s3, which is where reflective configurations get close to
// a singular Jacobian.

#include "grr/solver.hpp"

#include <stdexcept>
#include <string>
#include <vector>

namespace grr {

/// Raised when a required s'_i + s'_j falls below kJacobianGuard; the solver
/// is not differentiable (or badly conditioned) there.
class NearSingularJacobian : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kJacobianGuard = 1e-8;

struct VjpRequest {
  AlignmentProblem problem;
  Mat3 rotation_grad = Mat3::Zero();
  Vec3 translation_grad = Vec3::Zero();  // rigid case only
};

/// Cotangents on the inputs of an alignment problem.
struct AlignmentGradient {
  std::vector<Vec3> target;
  std::vector<Vec3> source;
};

namespace detail {

inline Mat3 covariance_cotangent(const KabschFactors& f, const Mat3& g) {
  Mat3 dsign = Mat3::Identity();
  dsign(2, 2) = f.d;
  const Mat3 u = f.u * dsign;
  const Vec3 s(f.sigma(0), f.sigma(1), f.d * f.sigma(2));
  const Mat3 gh = u.transpose() * g * f.v;
  Mat3 k = Mat3::Zero();
  for (int i = 0; i < 3; ++i) {
    for (int j = i + 1; j < 3; ++j) {
      const double denom = s(i) + s(j);
      if (std::abs(denom) < kJacobianGuard) {
        throw NearSingularJacobian("SVD differential: s'_" + std::to_string(i + 1) + " + s'_" +
                                   std::to_string(j + 1) + " = " + std::to_string(denom) +
                                   " below guard");
      }
      const double a = (gh(i, j) - gh(j, i)) / denom;
      k(i, j) = a;
      k(j, i) = -a;
    }
  }
  return u * k * f.v.transpose();
}

// Pulls a cotangent on x/|x| back to x.
inline Vec3 normalize_cotangent(const Vec3& x, const Vec3& g) {
  const double n = x.norm();
  const Vec3 xn = x / n;
  return (g - xn * xn.dot(g)) / n;
}

}  // namespace detail

/// Gradients of L w.r.t. targets and sources of the rotation-only problem,
/// where dL/dR = req.rotation_grad. translation_grad is ignored.
inline AlignmentGradient kabsch_rotation_vjp(const VjpRequest& req, const KabschOptions& opts = {}) {
  const AlignmentProblem& prob = req.problem;
  prob.validate();
  std::vector<Vec3> src = prob.source;
  std::vector<Vec3> tgt = prob.target;
  if (opts.normalize_inputs) {
    src = detail::normalized(src);
    tgt = detail::normalized(tgt);
  }
  Mat3 h = Mat3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) h += prob.weight(i) * tgt[i] * src[i].transpose();
  const detail::KabschFactors f = detail::factor_covariance(h);
  const Mat3 gh = detail::covariance_cotangent(f, req.rotation_grad);

  AlignmentGradient out;
  out.target.resize(src.size());
  out.source.resize(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    const double w = prob.weight(i);
    Vec3 gt = w * (gh * src[i]);
    Vec3 gs = w * (gh.transpose() * tgt[i]);
    if (opts.normalize_inputs) {
      gt = detail::normalize_cotangent(prob.target[i], gt);
      gs = detail::normalize_cotangent(prob.source[i], gs);
    }
    out.target[i] = gt;
    out.source[i] = gs;
  }
  return out;
}

/// Gradients through rigid_align for simultaneous cotangents on R and t.
/// t = c_target - R c_source, so the rotation cotangent picks up
/// -g_t c_source^T; centroid terms of the covariance cancel because centered
/// vectors sum to zero.
inline AlignmentGradient rigid_align_vjp(const VjpRequest& req) {
  const AlignmentProblem& prob = req.problem;
  prob.validate();
  const double wsum = prob.total_weight();
  const Vec3 cs = detail::weighted_centroid(prob, prob.source);
  const Vec3 ct = detail::weighted_centroid(prob, prob.target);
  Mat3 h = Mat3::Zero();
  for (std::size_t i = 0; i < prob.size(); ++i) {
    h += prob.weight(i) * (prob.target[i] - ct) * (prob.source[i] - cs).transpose();
  }
  const detail::KabschFactors f = detail::factor_covariance(h);
  const Vec3& gt = req.translation_grad;
  const Mat3 g_rot = req.rotation_grad - gt * cs.transpose();
  const Mat3 gh = detail::covariance_cotangent(f, g_rot);
  const Vec3 rt_gt = f.r.transpose() * gt;

  AlignmentGradient out;
  out.target.resize(prob.size());
  out.source.resize(prob.size());
  for (std::size_t i = 0; i < prob.size(); ++i) {
    const double w = prob.weight(i);
    out.target[i] = w * (gh * (prob.source[i] - cs)) + (w / wsum) * gt;
    out.source[i] = w * (gh.transpose() * (prob.target[i] - ct)) - (w / wsum) * rt_gt;
  }
  return out;
}

}  // namespace grr
