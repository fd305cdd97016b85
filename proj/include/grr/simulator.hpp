#pragma once

// Synthetic ground truth and noisy "predictions" for exercising the solvers
// without a network: pose perturbation sampling, representation noise, and a
// per-frame trial that compares the ray-branch and point-branch rotations.

#include "grr/camera.hpp"
#include "grr/metrics.hpp"
#include "grr/parallel.hpp"
#include "grr/solver.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace grr {

struct PosePerturbSpec {
  double sigma_t = 0.0;  // scene units
  double sigma_r = 0.0;  // radians
  std::size_t count = 1;
  Seed seed{0};

  void validate() const {
    if (!(sigma_t >= 0.0) || !(sigma_r >= 0.0)) throw std::invalid_argument("perturb: sigmas must be >= 0");
    if (count < 1) throw std::invalid_argument("perturb: count must be >= 1");
  }
};

enum class NoiseMode {
  kIidGaussian,
  kPerPatchScaled,  ///< sigmas multiplied by patch_scales[i] for patch i
};

inline const char* to_string(NoiseMode m) {
  return m == NoiseMode::kIidGaussian ? "iid_gaussian" : "per_patch_scaled";
}

inline NoiseMode parse_noise_mode(const std::string& s) {
  if (s == "iid_gaussian") return NoiseMode::kIidGaussian;
  if (s == "per_patch_scaled") return NoiseMode::kPerPatchScaled;
  throw std::invalid_argument("unknown noise mode '" + s + "'");
}

struct NoiseSpec {
  double ray_sigma = 0.0;    // radians
  double point_sigma = 0.0;  // scene units
  Vec3 point_bias = Vec3::Zero();
  NoiseMode mode = NoiseMode::kIidGaussian;
  std::vector<double> patch_scales;
  Seed seed{0};

  void validate(std::size_t patch_count) const {
    if (!(ray_sigma >= 0.0) || !(point_sigma >= 0.0)) throw std::invalid_argument("noise: sigmas must be >= 0");
    if (!point_bias.allFinite()) throw std::invalid_argument("noise: point_bias must be finite");
    if (mode == NoiseMode::kPerPatchScaled) {
      if (patch_scales.size() != patch_count) {
        throw std::invalid_argument("noise: per_patch_scaled needs one scale per patch");
      }
      for (double s : patch_scales)
        if (!(s >= 0.0)) throw std::invalid_argument("noise: patch scales must be >= 0");
    }
  }
};

/// Perturbs each base pose `count` times: t += N(0, sigma_t^2 I), and
/// R <- R * Exp(angle * axis) with angle = |N(0, sigma_r^2)| about a uniform
/// axis. Draws for (base i, sample k) come from their own stream.
inline std::vector<Pose> sample_poses(const std::vector<Pose>& base, const PosePerturbSpec& spec) {
  if (base.empty()) throw std::invalid_argument("sample_poses: no base poses");
  spec.validate();
  std::vector<Pose> out;
  out.reserve(base.size() * spec.count);
  for (std::size_t i = 0; i < base.size(); ++i) {
    for (std::size_t k = 0; k < spec.count; ++k) {
      Rng rng(spec.seed, i, k);
      const Vec3 offset = rng.normal3();
      const double angle = std::abs(rng.normal());
      const Vec3 axis = rng.unit_vector();
      Pose p = base[i];
      if (spec.sigma_t > 0.0) p.t += spec.sigma_t * offset;
      if (spec.sigma_r > 0.0) p.r = p.r * Rotation::axis_angle(axis, spec.sigma_r * angle);
      out.push_back(p);
    }
  }
  return out;
}

/// Rays: rotated by |N(0, sigma^2)| about a random axis orthogonal to the ray.
/// Points: offset by N(0, sigma^2 I) + point_bias.
inline std::pair<RayBundle, PointMap> perturb_representations(const RayBundle& d_gt, const PointMap& p_gt,
                                                              const NoiseSpec& spec, Rng& rng) {
  spec.validate(d_gt.size());
  const bool scaled = spec.mode == NoiseMode::kPerPatchScaled;
  RayBundle d = d_gt;
  if (spec.ray_sigma > 0.0) {
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double sigma = spec.ray_sigma * (scaled ? spec.patch_scales[i] : 1.0);
      const double angle = sigma * std::abs(rng.normal());
      const Vec3 dir = d.dirs[i].normalized();
      Vec3 ortho;
      do {
        const Vec3 u = rng.unit_vector();
        ortho = u - dir * dir.dot(u);
      } while (ortho.norm() < 1e-6);
      ortho.normalize();
      d.dirs[i] = (std::cos(angle) * dir + std::sin(angle) * ortho).normalized();
    }
  }
  PointMap p = p_gt;
  if (spec.point_sigma > 0.0) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double sigma = spec.point_sigma * (scaled ? spec.patch_scales[i] : 1.0);
      p.pts[i] += sigma * rng.normal3();
    }
  }
  if (!spec.point_bias.isZero(0.0)) {
    for (Vec3& x : p.pts) x += spec.point_bias;
  }
  return {std::move(d), std::move(p)};
}

inline std::pair<RayBundle, PointMap> perturb_representations(const RayBundle& d_gt, const PointMap& p_gt,
                                                              const NoiseSpec& spec) {
  Rng rng(spec.seed);
  return perturb_representations(d_gt, p_gt, spec, rng);
}

struct FrameRecord {
  double rot_err_rays_deg = 0.0;
  double rot_err_points_deg = 0.0;
  double trans_err = 0.0;
  std::string status = "ok";

  bool ok() const { return status == "ok"; }
};

struct TrialReport {
  std::vector<FrameRecord> frames;
  double median_rot_err_rays_deg = 0.0;
  double median_rot_err_points_deg = 0.0;
  double median_trans_err = 0.0;
  std::size_t failures = 0;

  /// Recomputes the medians over successful frames.
  void summarize() {
    std::vector<double> rr, rp, tt;
    failures = 0;
    for (const FrameRecord& f : frames) {
      if (!f.ok()) {
        ++failures;
        continue;
      }
      rr.push_back(f.rot_err_rays_deg);
      rp.push_back(f.rot_err_points_deg);
      tt.push_back(f.trans_err);
    }
    median_rot_err_rays_deg = median(rr);
    median_rot_err_points_deg = median(rp);
    median_trans_err = median(tt);
  }
};

/// Per frame: GT world representations under poses[f], noise drawn from the
/// stream (noise.seed, f), decoupled recovery, errors. Solver degeneracy
/// marks the frame as failed and the trial continues.
inline TrialReport run_trial(const PatchGrid& grid, const std::vector<Pose>& poses, const NoiseSpec& noise,
                             std::size_t threads = 1) {
  const RayBundle rays_cam = canonical_rays(grid);
  const PointMap pts_cam = canonical_points(rays_cam);
  noise.validate(rays_cam.size());
  TrialReport rep;
  rep.frames.resize(poses.size());
  parallel_for(poses.size(), threads, [&](std::size_t f) {
    const Pose& gt = poses[f];
    Rng rng(noise.seed, f);
    const auto [d, p] = perturb_representations(world_rays(gt, rays_cam), world_points(gt, pts_cam), noise, rng);
    FrameRecord rec;
    try {
      const PoseRecovery r = recover_pose(rays_cam, pts_cam, d, p);
      rec.rot_err_rays_deg = rotation_error_deg(r.pose.r, gt.r);
      rec.rot_err_points_deg = rotation_error_deg(r.rotation_from_points, gt.r);
      rec.trans_err = translation_error(r.pose.t, gt.t);
    } catch (const DegenerateConfiguration& e) {
      const double nan = std::numeric_limits<double>::quiet_NaN();
      rec = FrameRecord{nan, nan, nan, e.branch() == kRayBranch ? "degenerate_rays" : "degenerate_points"};
    }
    rep.frames[f] = rec;
  });
  rep.summarize();
  return rep;
}

inline std::vector<TrialReport> ablation_sweep(const PatchGrid& grid, const std::vector<Pose>& poses,
                                               const std::vector<NoiseSpec>& noise_grid,
                                               std::size_t threads = 1) {
  if (noise_grid.empty()) throw std::invalid_argument("ablation_sweep: empty noise grid");
  std::vector<TrialReport> out;
  out.reserve(noise_grid.size());
  for (const NoiseSpec& spec : noise_grid) out.push_back(run_trial(grid, poses, spec, threads));
  return out;
}

// ---------------------------------------------------------------------------
// CSV

inline void write_trial_csv(std::ostream& os, const TrialReport& rep) {
  std::ostringstream s;
  s << std::setprecision(17) << "frame,rot_err_rays_deg,rot_err_points_deg,trans_err,status\n";
  for (std::size_t f = 0; f < rep.frames.size(); ++f) {
    const FrameRecord& r = rep.frames[f];
    s << f << ',' << r.rot_err_rays_deg << ',' << r.rot_err_points_deg << ',' << r.trans_err << ',' << r.status
      << '\n';
  }
  os << s.str();
}

inline void write_sweep_csv(std::ostream& os, const std::vector<NoiseSpec>& specs,
                            const std::vector<TrialReport>& reports) {
  std::ostringstream s;
  s << std::setprecision(17)
    << "cell,mode,ray_sigma,point_sigma,bias_x,bias_y,bias_z,frames,failures,"
       "median_rot_err_rays_deg,median_rot_err_points_deg,median_trans_err\n";
  for (std::size_t c = 0; c < reports.size(); ++c) {
    const NoiseSpec& n = specs[c];
    const TrialReport& r = reports[c];
    s << c << ',' << to_string(n.mode) << ',' << n.ray_sigma << ',' << n.point_sigma << ',' << n.point_bias.x()
      << ',' << n.point_bias.y() << ',' << n.point_bias.z() << ',' << r.frames.size() << ',' << r.failures << ','
      << r.median_rot_err_rays_deg << ',' << r.median_rot_err_points_deg << ',' << r.median_trans_err << '\n';
  }
  os << s.str();
}

}  // namespace grr
