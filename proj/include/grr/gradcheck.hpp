#pragma once

// Finite-difference verification of the analytic VJPs, plus generators for
// the random instances the checks run on.

#include "grr/losses.hpp"
#include "grr/solver.hpp"
#include "grr/solver_grad.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace grr {

enum class GradOp { kRotation, kRigid, kLossTotal };

inline const char* to_string(GradOp op) {
  switch (op) {
    case GradOp::kRotation: return "rotation";
    case GradOp::kRigid: return "rigid";
    case GradOp::kLossTotal: return "loss_total";
  }
  return "?";
}

inline GradOp parse_grad_op(const std::string& s) {
  if (s == "rotation") return GradOp::kRotation;
  if (s == "rigid") return GradOp::kRigid;
  if (s == "loss_total") return GradOp::kLossTotal;
  throw std::invalid_argument("unknown gradcheck op '" + s + "'");
}

/// Scalar the check differentiates.
enum class Probe {
  kRandomLinear,  ///< <G, R> + <g, t> with G, g drawn from the probe seed
  kResidualCost,  ///< sum_i w_i |R s_i + t - target_i|^2 at the solver output
};

struct GradReport {
  GradOp op = GradOp::kRotation;
  std::vector<double> analytic;
  std::vector<double> numeric;
  double max_rel_err = 0.0;  // max_k |a_k - n_k| / max(|a|_inf, |n|_inf)
  double max_abs_err = 0.0;
  std::string flag;          // "NearSingularJacobian" / "DegenerateConfiguration" when not computed

  std::size_t n_params() const { return analytic.size(); }
  bool ok() const { return flag.empty(); }
};

namespace detail {

inline void fill_errors(GradReport& r) {
  double scale = 0.0;
  double abs_err = 0.0;
  for (std::size_t k = 0; k < r.analytic.size(); ++k) {
    scale = std::max({scale, std::abs(r.analytic[k]), std::abs(r.numeric[k])});
    abs_err = std::max(abs_err, std::abs(r.analytic[k] - r.numeric[k]));
  }
  r.max_abs_err = abs_err;
  r.max_rel_err = scale > 0.0 ? abs_err / scale : (abs_err > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
}

inline void check_step(double h) {
  if (!(h >= 1e-8 && h <= 1e-3)) throw std::invalid_argument("finite difference step must be in [1e-8, 1e-3]");
}

// Central differences of f over params, perturbed in place.
inline std::vector<double> central_differences(std::vector<double*> params, double h,
                                               const std::function<double()>& f) {
  std::vector<double> out(params.size());
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double x0 = *params[k];
    *params[k] = x0 + h;
    const double fp = f();
    *params[k] = x0 - h;
    const double fm = f();
    *params[k] = x0;
    out[k] = (fp - fm) / (2.0 * h);
  }
  return out;
}

inline void append(std::vector<double>& flat, const std::vector<Vec3>& v) {
  for (const Vec3& x : v) flat.insert(flat.end(), {x.x(), x.y(), x.z()});
}

inline void collect(std::vector<double*>& params, std::vector<Vec3>& v) {
  for (Vec3& x : v) params.insert(params.end(), {&x.x(), &x.y(), &x.z()});
}

}  // namespace detail

struct AlignmentCheckOptions {
  Probe probe = Probe::kRandomLinear;
  Seed probe_seed{0};
  bool normalize_inputs = false;  // rotation op only
  bool include_source = true;
};

/// Compares the analytic VJP of kabsch_rotation (op = kRotation) or
/// rigid_align (op = kRigid) with central differences of a scalar probe,
/// over all target (and optionally source) coordinates. Non-differentiable
/// instances are reported through `flag` rather than thrown.
inline GradReport finite_diff_check(GradOp op, const AlignmentProblem& instance, double h,
                                    const AlignmentCheckOptions& opt = {}) {
  detail::check_step(h);
  if (op == GradOp::kLossTotal) throw std::invalid_argument("loss_total check takes a TotalLossInstance");
  GradReport rep;
  rep.op = op;

  Rng rng(opt.probe_seed, 0x9a7c);
  Mat3 gr;
  for (int k = 0; k < 9; ++k) gr(k / 3, k % 3) = rng.normal();
  const Vec3 gt = op == GradOp::kRigid ? rng.normal3() : Vec3::Zero();
  const KabschOptions kopts{.normalize_inputs = opt.normalize_inputs};

  AlignmentProblem prob = instance;
  auto solve = [&](const AlignmentProblem& p) -> std::pair<Mat3, Vec3> {
    if (op == GradOp::kRotation) return {kabsch_rotation(p, kopts).rotation.matrix(), Vec3::Zero()};
    const RigidSolution s = rigid_align(p);
    return {s.pose.r.matrix(), s.pose.t};
  };
  auto probe_value = [&]() {
    const auto [r, t] = solve(prob);
    if (opt.probe == Probe::kResidualCost) return alignment_cost(prob, r, t);
    return (gr.array() * r.array()).sum() + gt.dot(t);
  };

  try {
    AlignmentGradient a;
    if (opt.probe == Probe::kResidualCost) {
      // dC = explicit partials + solver VJP of (dC/dR, dC/dt).
      const auto [r, t] = solve(prob);
      Mat3 dcdr = Mat3::Zero();
      Vec3 dcdt = Vec3::Zero();
      std::vector<Vec3> res(prob.size());
      for (std::size_t i = 0; i < prob.size(); ++i) {
        res[i] = r * prob.source[i] + t - prob.target[i];
        dcdr += 2.0 * prob.weight(i) * res[i] * prob.source[i].transpose();
        dcdt += 2.0 * prob.weight(i) * res[i];
      }
      a = op == GradOp::kRotation ? kabsch_rotation_vjp(VjpRequest{prob, dcdr, {}}, kopts)
                                  : rigid_align_vjp(VjpRequest{prob, dcdr, dcdt});
      for (std::size_t i = 0; i < prob.size(); ++i) {
        a.target[i] += -2.0 * prob.weight(i) * res[i];
        a.source[i] += 2.0 * prob.weight(i) * (r.transpose() * res[i]);
      }
    } else {
      a = op == GradOp::kRotation ? kabsch_rotation_vjp(VjpRequest{prob, gr, {}}, kopts)
                                  : rigid_align_vjp(VjpRequest{prob, gr, gt});
    }
    detail::append(rep.analytic, a.target);
    if (opt.include_source) detail::append(rep.analytic, a.source);

    std::vector<double*> params;
    detail::collect(params, prob.target);
    if (opt.include_source) detail::collect(params, prob.source);
    rep.numeric = detail::central_differences(params, h, probe_value);
  } catch (const NearSingularJacobian&) {
    rep = GradReport{op, {}, {}, std::numeric_limits<double>::infinity(),
                     std::numeric_limits<double>::infinity(), "NearSingularJacobian"};
    return rep;
  } catch (const DegenerateConfiguration&) {
    rep = GradReport{op, {}, {}, std::numeric_limits<double>::infinity(),
                     std::numeric_limits<double>::infinity(), "DegenerateConfiguration"};
    return rep;
  }
  detail::fill_errors(rep);
  return rep;
}

// ---------------------------------------------------------------------------
// Total loss over one synthetic and one real frame

struct TotalLossInstance {
  FrameLossInput syn;
  FrameLossInput real;
  double syn_ray_logit = 0.0;
  double syn_point_logit = 0.0;
  double real_ray_logit = 0.0;
  double real_point_logit = 0.0;
  LossWeights weights;
  FrameLossOptions options;
};

inline double total_loss_value(const TotalLossInstance& in) {
  const LossComponents syn = frame_loss(in.syn, in.weights, in.options);
  const LossComponents real = frame_loss(in.real, in.weights, in.options);
  const double dsyn = domain_bce(in.syn_ray_logit, DomainLabel::kSynthetic) +
                      domain_bce(in.syn_point_logit, DomainLabel::kSynthetic);
  const double dreal = domain_bce(in.real_ray_logit, DomainLabel::kReal) +
                       domain_bce(in.real_point_logit, DomainLabel::kReal);
  return total_loss(syn, real, dsyn, dreal, in.weights);
}

/// Flattened gradient: syn rays, syn points, real rays, real points, then the
/// four logits (syn ray, syn point, real ray, real point).
inline std::vector<double> total_loss_grad(const TotalLossInstance& in) {
  const LossWeights& w = in.weights;
  RepresentationGrad gs = frame_loss_grad(in.syn, w, in.options);
  RepresentationGrad gr = frame_loss_grad(in.real, w, in.options);
  std::vector<double> flat;
  auto scaled = [](std::vector<Vec3> v, double s) {
    for (Vec3& x : v) x *= s;
    return v;
  };
  detail::append(flat, scaled(gs.rays, w.w_syn));
  detail::append(flat, scaled(gs.points, w.w_syn));
  detail::append(flat, scaled(gr.rays, w.w_real));
  detail::append(flat, scaled(gr.points, w.w_real));
  flat.push_back(w.w_domain * domain_bce_grad(in.syn_ray_logit, DomainLabel::kSynthetic));
  flat.push_back(w.w_domain * domain_bce_grad(in.syn_point_logit, DomainLabel::kSynthetic));
  flat.push_back(w.w_domain * domain_bce_grad(in.real_ray_logit, DomainLabel::kReal));
  flat.push_back(w.w_domain * domain_bce_grad(in.real_point_logit, DomainLabel::kReal));
  return flat;
}

inline GradReport finite_diff_check(const TotalLossInstance& instance, double h) {
  detail::check_step(h);
  GradReport rep;
  rep.op = GradOp::kLossTotal;
  TotalLossInstance in = instance;
  try {
    rep.analytic = total_loss_grad(in);
    std::vector<double*> params;
    detail::collect(params, in.syn.rays_pred.dirs);
    detail::collect(params, in.syn.points_pred.pts);
    detail::collect(params, in.real.rays_pred.dirs);
    detail::collect(params, in.real.points_pred.pts);
    params.insert(params.end(), {&in.syn_ray_logit, &in.syn_point_logit, &in.real_ray_logit, &in.real_point_logit});
    rep.numeric = detail::central_differences(params, h, [&] { return total_loss_value(in); });
  } catch (const NearSingularJacobian&) {
    return GradReport{GradOp::kLossTotal, {}, {}, std::numeric_limits<double>::infinity(),
                      std::numeric_limits<double>::infinity(), "NearSingularJacobian"};
  } catch (const DegenerateConfiguration&) {
    return GradReport{GradOp::kLossTotal, {}, {}, std::numeric_limits<double>::infinity(),
                      std::numeric_limits<double>::infinity(), "DegenerateConfiguration"};
  }
  detail::fill_errors(rep);
  return rep;
}

// ---------------------------------------------------------------------------
// Instance generators

/// Unit rays in a forward cone, targets = R rays + angular-ish noise.
inline AlignmentProblem random_ray_instance(Seed seed, std::size_t count, double noise = 0.05) {
  Rng rng(seed, 0x7261);
  const Rotation r = random_rotation(rng);
  AlignmentProblem p;
  for (std::size_t i = 0; i < count; ++i) {
    const Vec3 s = (Vec3(0.6 * rng.normal(), 0.6 * rng.normal(), 1.0)).normalized();
    p.source.push_back(s);
    p.target.push_back((r * s + noise * rng.normal3()).normalized());
  }
  return p;
}

inline AlignmentProblem random_point_instance(Seed seed, std::size_t count, double noise = 0.05) {
  Rng rng(seed, 0x706f);
  const Pose pose = random_pose(rng, 2.0);
  AlignmentProblem p;
  for (std::size_t i = 0; i < count; ++i) {
    const Vec3 s = rng.normal3();
    p.source.push_back(s);
    p.target.push_back(pose.apply(s) + noise * rng.normal3());
  }
  return p;
}

/// All sources and targets on a single line: rotation about it is unobservable.
inline AlignmentProblem collinear_instance(std::size_t count = 12) {
  AlignmentProblem p;
  const Vec3 axis = Vec3(1.0, 2.0, 2.0) / 3.0;
  const Rotation r = Rotation::axis_angle(Vec3(0.0, 0.0, 1.0), 0.4);
  for (std::size_t i = 0; i < count; ++i) {
    const double s = (i % 2 ? 1.0 : -1.0) * (1.0 + 0.1 * static_cast<double>(i));
    p.source.push_back(s * axis);
    p.target.push_back(r * (s * axis));
  }
  return p;
}

/// Random GT pose on an n x n grid with Gaussian-perturbed predictions and
/// random logits.
inline TotalLossInstance random_loss_instance(Seed seed, int n = 4, double noise = 0.05,
                                              NormOrder p = NormOrder::kL2) {
  PatchGrid grid{n, Intrinsics{2.0 * n, 2.0 * n, 2.0 * n, 2.0 * n, 4 * n, 4 * n}};
  Rng rng(seed, 0x6c6f);
  TotalLossInstance in;
  auto frame = [&] {
    FrameLossInput f = FrameLossInput::from_ground_truth(grid, random_pose(rng, 2.0));
    for (Vec3& d : f.rays_pred.dirs) d = (d + noise * rng.normal3()).normalized();
    for (Vec3& x : f.points_pred.pts) x += noise * rng.normal3();
    return f;
  };
  in.syn = frame();
  in.real = frame();
  in.syn_ray_logit = rng.normal();
  in.syn_point_logit = rng.normal();
  in.real_ray_logit = rng.normal();
  in.real_point_logit = rng.normal();
  in.options.p = p;
  return in;
}

}  // namespace grr
