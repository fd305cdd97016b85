#pragma once

// Subcommands of the `grr` tool. Each returns a process exit code:
//   0 success, 1 check failed, 2 degenerate input, 3 config error, 4 I/O error.

#include "grr/config.hpp"
#include "grr/metrics.hpp"

#include <json.hpp>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace grr {

enum ExitCode : int {
  kExitOk = 0,
  kExitCheckFailed = 1,
  kExitDegenerate = 2,
  kExitConfig = 3,
  kExitIo = 4,
};

/// Common flags.
struct CliOptions {
  fs::path config;
  std::optional<std::uint64_t> seed;
  fs::path out = ".";
  std::optional<std::size_t> threads;
};

namespace detail {

inline RunConfig load_run_config(const CliOptions& opt) {
  RunConfig c = opt.config.empty() ? parse_config(nlohmann::json::object()) : load_config(opt.config);
  if (opt.seed) {
    // Re-derive seeded defaults so --seed behaves like editing the config.
    const Seed s{*opt.seed};
    if (c.perturb) c.perturb->seed = s;
    for (NoiseSpec& n : c.noise) n.seed = s;
    if (c.gen_noise) c.gen_noise->seed = s;
    c.seed = s;
  }
  if (opt.threads) c.threads = *opt.threads;
  return c;
}

inline std::string frame_name(std::size_t f, const char* kind) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "frame_%04zu_%s.csv", f, kind);
  return buf;
}

template <typename Writer>
void write_file(const fs::path& path, Writer&& w) {
  std::ostringstream s;
  w(s);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write '" + path.string() + "'");
  f << s.str();
  if (!f) throw IoError("write failed for '" + path.string() + "'");
}

template <typename Reader>
auto read_file(const fs::path& path, Reader&& r) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  return r(f);
}

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory '" + dir.string() + "'");
}

/// Base poses from poses_file, or random poses from the seed; then the
/// optional perturbation sampling.
inline std::vector<Pose> experiment_poses(const RunConfig& c) {
  std::vector<Pose> poses;
  if (c.poses_file) {
    poses = read_file(c.resolve(*c.poses_file), [](std::istream& is) { return read_poses(is); });
    if (poses.empty()) throw ConfigError("poses file is empty");
  } else {
    Rng rng(c.seed, 0x706f736573ULL);
    for (std::size_t i = 0; i < c.random_poses.count; ++i) poses.push_back(random_pose(rng, c.random_poses.translation_scale));
  }
  if (c.perturb) poses = sample_poses(poses, *c.perturb);
  return poses;
}

inline RayBundle canonical_for(const RunConfig& c) {
  try {
    return canonical_rays(c.grid, c.averaging);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

inline nlohmann::json number_or_null(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

inline nlohmann::ordered_json metrics_json(const MetricsSummary& m, double unit_scale) {
  nlohmann::ordered_json j;
  j["frame_count"] = m.frame_count;
  j["failure_count"] = m.failure_count;
  j["median_translation"] = number_or_null(m.median_translation);
  j["median_rotation_deg"] = number_or_null(m.median_rotation_deg);
  j["unit_scale"] = unit_scale;
  return j;
}

template <typename Fn>
int guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    spdlog::error("config: {}", e.what());
    return kExitConfig;
  } catch (const IoError& e) {
    spdlog::error("io: {}", e.what());
    return kExitIo;
  } catch (const nlohmann::json::exception& e) {
    spdlog::error("config: {}", e.what());
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    spdlog::error("invalid input: {}", e.what());
    return kExitConfig;
  } catch (const std::runtime_error& e) {
    spdlog::error("io: {}", e.what());
    return kExitIo;
  }
}

}  // namespace detail

/// Writes canonical rays/points, GT poses, and per-frame world
/// representations (perturbed by gen.noise if configured).
inline int cmd_gen(const CliOptions& opt, std::ostream& out) {
  return detail::guarded([&]() -> int {
    const RunConfig c = detail::load_run_config(opt);
    const RayBundle rays_cam = detail::canonical_for(c);
    const PointMap pts_cam = canonical_points(rays_cam);
    const std::vector<Pose> poses = detail::experiment_poses(c);
    if (c.gen_noise) c.gen_noise->validate(rays_cam.size());
    detail::ensure_dir(opt.out);

    detail::write_file(opt.out / "canonical_rays.csv", [&](std::ostream& s) { write_csv(s, rays_cam); });
    detail::write_file(opt.out / "canonical_points.csv", [&](std::ostream& s) { write_csv(s, pts_cam); });
    detail::write_file(opt.out / "gt_poses.txt", [&](std::ostream& s) { write_poses(s, poses); });
    for (std::size_t f = 0; f < poses.size(); ++f) {
      RayBundle d = world_rays(poses[f], rays_cam);
      PointMap p = world_points(poses[f], pts_cam);
      if (c.gen_noise) {
        Rng rng(c.gen_noise->seed, f);
        std::tie(d, p) = perturb_representations(d, p, *c.gen_noise, rng);
      }
      detail::write_file(opt.out / detail::frame_name(f, "rays"), [&](std::ostream& s) { write_csv(s, d); });
      detail::write_file(opt.out / detail::frame_name(f, "points"), [&](std::ostream& s) { write_csv(s, p); });
    }
    spdlog::info("gen: {} patches, {} frames -> {}", rays_cam.size(), poses.size(), opt.out.string());
    nlohmann::ordered_json j;
    j["patches"] = rays_cam.size();
    j["frames"] = poses.size();
    out << j.dump() << '\n';
    return kExitOk;
  });
}

/// Recovers one pose per frame_NNNN_{rays,points}.csv in solve.input_dir.
/// Writes recovered_poses.txt and solve_frames.csv; prints metrics JSON when
/// GT poses are available.
inline int cmd_solve(const CliOptions& opt, std::ostream& out) {
  return detail::guarded([&]() -> int {
    const RunConfig c = detail::load_run_config(opt);
    if (c.solve.input_dir.empty()) throw ConfigError("solve.input_dir is required");
    const fs::path in_dir = c.resolve(c.solve.input_dir);
    const RayBundle rays_cam = detail::canonical_for(c);
    const PointMap pts_cam = canonical_points(rays_cam);

    std::vector<RayBundle> rays;
    std::vector<PointMap> pts;
    for (std::size_t f = 0;; ++f) {
      const fs::path rp = in_dir / detail::frame_name(f, "rays");
      const fs::path pp = in_dir / detail::frame_name(f, "points");
      if (!fs::exists(rp) && !fs::exists(pp)) break;
      try {
        rays.push_back(detail::read_file(rp, [](std::istream& is) { return read_ray_csv(is); }));
        pts.push_back(detail::read_file(pp, [](std::istream& is) { return read_point_csv(is); }));
      } catch (const std::runtime_error& e) {
        if (dynamic_cast<const IoError*>(&e)) throw;
        throw IoError(e.what());
      }
      if (rays.back().size() != rays_cam.size() || pts.back().size() != rays_cam.size()) {
        throw ConfigError("frame " + std::to_string(f) + ": representation length does not match the grid");
      }
    }
    if (rays.empty()) throw IoError("no frame_0000_rays.csv in '" + in_dir.string() + "'");

    std::optional<std::vector<Pose>> gt;
    fs::path gt_path = c.solve.gt_poses_file ? c.resolve(*c.solve.gt_poses_file) : in_dir / "gt_poses.txt";
    if (c.solve.gt_poses_file || fs::exists(gt_path)) {
      gt = detail::read_file(gt_path, [](std::istream& is) { return read_poses(is); });
      if (gt->size() != rays.size()) throw ConfigError("gt poses count does not match frame count");
    }

    const double nan = std::numeric_limits<double>::quiet_NaN();
    std::vector<Pose> recovered(rays.size());
    std::vector<std::string> status(rays.size(), "ok");
    std::vector<double> rot_err(rays.size(), nan), trans_err(rays.size(), nan);
    parallel_for(rays.size(), c.threads, [&](std::size_t f) {
      try {
        const PoseRecovery r = recover_pose(rays_cam, pts_cam, rays[f], pts[f]);
        recovered[f] = r.pose;
        if (gt) {
          rot_err[f] = rotation_error_deg(r.pose.r, (*gt)[f].r);
          trans_err[f] = translation_error(r.pose.t, (*gt)[f].t);
        }
      } catch (const DegenerateConfiguration& e) {
        status[f] = e.branch() == kRayBranch ? "degenerate_rays" : "degenerate_points";
        recovered[f] = Pose::identity();
      }
    });

    detail::ensure_dir(opt.out);
    detail::write_file(opt.out / "recovered_poses.txt", [&](std::ostream& s) { write_poses(s, recovered); });
    detail::write_file(opt.out / "solve_frames.csv", [&](std::ostream& s) {
      s << std::setprecision(17) << "frame,rot_err_deg,trans_err,status\n";
      for (std::size_t f = 0; f < rays.size(); ++f) {
        s << f << ',' << rot_err[f] << ',' << trans_err[f] << ',' << status[f] << '\n';
      }
    });

    // Failed frames carry NaN errors and are excluded from the medians.
    for (std::size_t f = 0; f < rays.size(); ++f) {
      if (status[f] != "ok") rot_err[f] = trans_err[f] = nan;
    }
    nlohmann::ordered_json j;
    if (gt) {
      j = detail::metrics_json(summarize(rot_err, trans_err, c.unit_scale), c.unit_scale);
    } else {
      std::size_t failures = 0;
      for (const auto& s : status) failures += s != "ok";
      j["frame_count"] = rays.size();
      j["failure_count"] = failures;
      j["median_translation"] = nullptr;
      j["median_rotation_deg"] = nullptr;
      j["unit_scale"] = c.unit_scale;
    }
    out << j.dump() << '\n';
    return kExitOk;
  });
}

inline nlohmann::ordered_json grad_report_json(const GradReport& r) {
  nlohmann::ordered_json j;
  j["op"] = to_string(r.op);
  j["max_rel_err"] = detail::number_or_null(r.max_rel_err);
  j["max_abs_err"] = detail::number_or_null(r.max_abs_err);
  j["n_params"] = r.n_params();
  if (!r.flag.empty()) j["flag"] = r.flag;
  return j;
}

/// Exit 0 iff max_rel_err < threshold, 1 on breach, 2 on a near-singular or
/// degenerate instance.
inline int cmd_gradcheck(const CliOptions& opt, std::ostream& out,
                         std::optional<GradOp> op_override = std::nullopt) {
  return detail::guarded([&]() -> int {
    RunConfig c = detail::load_run_config(opt);
    if (op_override) c.gradcheck.op = *op_override;
    const GradcheckConfig& g = c.gradcheck;
    const bool collinear = g.instance == "collinear";
    GradReport rep;
    try {
      switch (g.op) {
        case GradOp::kRotation: {
          const std::size_t n = g.size ? g.size : 12;
          const AlignmentProblem p = collinear ? collinear_instance(n) : random_ray_instance(c.seed, n);
          rep = finite_diff_check(GradOp::kRotation, p, g.h,
                                  AlignmentCheckOptions{.probe_seed = c.seed, .normalize_inputs = true});
          break;
        }
        case GradOp::kRigid: {
          const std::size_t n = g.size ? g.size : 16;
          const AlignmentProblem p = collinear ? collinear_instance(n) : random_point_instance(c.seed, n);
          rep = finite_diff_check(GradOp::kRigid, p, g.h, AlignmentCheckOptions{.probe_seed = c.seed});
          break;
        }
        case GradOp::kLossTotal: {
          if (collinear) throw ConfigError("collinear instance is only defined for rotation/rigid");
          const int n = g.size ? static_cast<int>(g.size) : 4;
          TotalLossInstance inst = random_loss_instance(c.seed, n, 0.05, c.schedule.p());
          inst.weights = c.weights;
          inst.options = c.loss_options();
          rep = finite_diff_check(inst, g.h);
          break;
        }
      }
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    out << grad_report_json(rep).dump() << '\n';
    if (!rep.ok()) {
      spdlog::warn("gradcheck: {}", rep.flag);
      return kExitDegenerate;
    }
    return rep.max_rel_err < g.threshold ? kExitOk : kExitCheckFailed;
  });
}

/// One trial per noise spec; writes sweep.csv and cell_NNN_frames.csv.
inline int cmd_ablate(const CliOptions& opt, std::ostream& out) {
  return detail::guarded([&]() -> int {
    const RunConfig c = detail::load_run_config(opt);
    if (c.noise.empty()) throw ConfigError("ablate needs at least one noise spec");
    detail::canonical_for(c);
    const std::vector<Pose> poses = detail::experiment_poses(c);
    std::vector<TrialReport> reports;
    try {
      reports = ablation_sweep(c.grid, poses, c.noise, c.threads);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    detail::ensure_dir(opt.out);
    detail::write_file(opt.out / "sweep.csv", [&](std::ostream& s) { write_sweep_csv(s, c.noise, reports); });
    for (std::size_t k = 0; k < reports.size(); ++k) {
      char name[64];
      std::snprintf(name, sizeof name, "cell_%03zu_frames.csv", k);
      detail::write_file(opt.out / name, [&](std::ostream& s) { write_trial_csv(s, reports[k]); });
    }
    spdlog::info("ablate: {} cells x {} frames -> {}", reports.size(), poses.size(), opt.out.string());
    nlohmann::ordered_json j;
    j["cells"] = reports.size();
    j["frames_per_cell"] = poses.size();
    out << j.dump() << '\n';
    return kExitOk;
  });
}

namespace detail {

inline std::vector<Vec3> read_vectors(const RunConfig& c, const nlohmann::json& j, const char* what) {
  if (j.is_string()) {
    return read_file(c.resolve(j.get<std::string>()), [](std::istream& is) { return detail::read_vec_csv(is); });
  }
  if (!j.is_array()) throw ConfigError(std::string(what) + ": expected CSV path or [[x,y,z],...]");
  std::vector<Vec3> v;
  for (const auto& e : j) v.push_back(read_vec3(e, what));
  return v;
}

inline Pose read_pose12(const nlohmann::json& j, const char* what) {
  if (!j.is_array() || j.size() != 12) throw ConfigError(std::string(what) + ": expected 12 numbers");
  std::ostringstream s;
  s << std::setprecision(17);
  for (const auto& x : j) s << x.get<double>() << ' ';
  std::istringstream is(s.str());
  try {
    return read_poses(is).at(0);
  } catch (const std::runtime_error& e) {
    throw ConfigError(std::string(what) + ": " + e.what());
  }
}

struct LossFrameResult {
  LossComponents parts;
  bool reg_defined = true;
  std::optional<double> domain;
};

inline LossFrameResult score_loss_frame(const RunConfig& c, const RayBundle& rays_cam, const PointMap& pts_cam,
                                        const nlohmann::json& fj, DomainLabel label) {
  if (!fj.contains("pose_gt")) throw ConfigError("loss frame: missing pose_gt");
  const Pose gt = read_pose12(fj.at("pose_gt"), "pose_gt");
  const RayBundle d_gt = world_rays(gt, rays_cam);
  const PointMap p_gt = world_points(gt, pts_cam);
  const RayBundle d_hat = fj.contains("rays_pred") ? RayBundle{read_vectors(c, fj.at("rays_pred"), "rays_pred")} : d_gt;
  const PointMap p_hat = fj.contains("points_pred") ? PointMap{read_vectors(c, fj.at("points_pred"), "points_pred")} : p_gt;
  if (d_hat.size() != rays_cam.size() || p_hat.size() != rays_cam.size()) {
    throw ConfigError("loss frame: prediction length does not match the grid");
  }
  const FrameLossOptions lo = c.loss_options();
  LossFrameResult res;
  Pose est;
  if (fj.contains("pose_pred")) {
    est = read_pose12(fj.at("pose_pred"), "pose_pred");
  } else {
    est = recover_pose(rays_cam, pts_cam, d_hat, p_hat).pose;
  }
  res.parts.pose = pose_loss(est.r, est.t, gt, c.weights, lo.p, lo.translation);
  res.parts.geo = geometry_loss(d_hat, d_gt, p_hat, p_gt, c.weights, lo.p);
  const NeighborSet nbrs = c.neighbors();
  if (nbrs.size() == 0) {
    res.reg_defined = false;
  } else {
    res.parts.reg = regularization_loss(d_hat, p_hat, rays_cam, p_gt, nbrs, c.weights, lo.p);
  }
  if (fj.contains("logits")) {
    const auto& lj = fj.at("logits");
    double dom = 0.0;
    for (const char* b : {"ray", "point"}) {
      if (lj.contains(b)) dom += domain_bce(lj.at(b).get<double>(), label);
    }
    res.domain = dom;
  }
  return res;
}

}  // namespace detail

/// Scores predictions against GT for "syn" and "real" frame lists and prints
/// per-frame components plus the weighted total. Per-domain terms are batch
/// means over that domain's frames.
inline int cmd_loss(const CliOptions& opt, std::ostream& out) {
  return detail::guarded([&]() -> int {
    const RunConfig c = detail::load_run_config(opt);
    if (!c.loss.is_object()) throw ConfigError("loss section is required");
    const RayBundle rays_cam = detail::canonical_for(c);
    const PointMap pts_cam = canonical_points(rays_cam);
    const FrameLossOptions lo = c.loss_options();

    nlohmann::ordered_json j;
    j["p"] = order(lo.p);
    j["frames"] = nlohmann::ordered_json::array();
    LossComponents batch[2];
    double domain[2] = {0.0, 0.0};
    const char* names[2] = {"syn", "real"};
    const DomainLabel labels[2] = {DomainLabel::kSynthetic, DomainLabel::kReal};
    for (int k = 0; k < 2; ++k) {
      const nlohmann::json frames = c.loss.contains(names[k]) ? c.loss.at(names[k]) : nlohmann::json::array();
      if (!frames.is_array()) throw ConfigError(std::string("loss.") + names[k] + " must be an array");
      std::size_t i = 0;
      for (const auto& fj : frames) {
        detail::LossFrameResult r;
        try {
          r = detail::score_loss_frame(c, rays_cam, pts_cam, fj, labels[k]);
        } catch (const DegenerateConfiguration& e) {
          spdlog::error("loss: {} frame {}: {}", names[k], i, e.what());
          return kExitDegenerate;
        }
        nlohmann::ordered_json fr;
        fr["domain"] = names[k];
        fr["index"] = i;
        fr["pose"] = r.parts.pose;
        fr["geo"] = r.parts.geo;
        fr["reg"] = r.reg_defined ? nlohmann::ordered_json(r.parts.reg) : nlohmann::ordered_json(nullptr);
        fr["domain_bce"] = r.domain ? nlohmann::ordered_json(*r.domain) : nlohmann::ordered_json(nullptr);
        j["frames"].push_back(fr);
        batch[k].pose += r.parts.pose;
        batch[k].geo += r.parts.geo;
        batch[k].reg += r.parts.reg;
        domain[k] += r.domain.value_or(0.0);
        ++i;
      }
      if (i > 0) {
        const double n = static_cast<double>(i);
        batch[k].pose /= n;
        batch[k].geo /= n;
        batch[k].reg /= n;
        domain[k] /= n;
      }
      nlohmann::ordered_json agg;
      agg["frames"] = i;
      agg["pose"] = batch[k].pose;
      agg["geo"] = batch[k].geo;
      agg["reg"] = batch[k].reg;
      agg["sum"] = batch[k].sum();
      agg["domain"] = domain[k];
      j[names[k]] = agg;
    }
    j["total"] = total_loss(batch[0], batch[1], domain[0], domain[1], c.weights);
    const std::string text = j.dump(2);
    out << text << '\n';
    if (!opt.out.empty() && opt.out != ".") {
      detail::ensure_dir(opt.out);
      detail::write_file(opt.out / "loss.json", [&](std::ostream& s) { s << text << '\n'; });
    }
    return kExitOk;
  });
}

}  // namespace grr
