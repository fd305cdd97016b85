#pragma once

// JSON run configuration shared by the CLI subcommands. Every key is
// optional unless a subcommand needs it; relative paths resolve against the
// directory holding the config file.

#include "grr/camera.hpp"
#include "grr/gradcheck.hpp"
#include "grr/losses.hpp"
#include "grr/simulator.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace grr {

namespace fs = std::filesystem;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RandomPosesConfig {
  std::size_t count = 100;
  double translation_scale = 2.0;
};

struct SolveConfig {
  fs::path input_dir;
  std::optional<fs::path> gt_poses_file;
};

struct GradcheckConfig {
  GradOp op = GradOp::kRotation;
  double h = 1e-5;
  double threshold = 1e-4;
  std::string instance = "random";  // or "collinear"
  std::size_t size = 0;             // 0 = per-op default
};

struct RunConfig {
  fs::path base_dir = ".";
  PatchGrid grid{16, Intrinsics{256.0, 256.0, 128.0, 128.0, 256, 256}};
  RayAveraging averaging = RayAveraging::kMeanOfPixelRays;
  std::optional<fs::path> poses_file;
  RandomPosesConfig random_poses;
  std::optional<PosePerturbSpec> perturb;
  std::vector<NoiseSpec> noise;
  std::optional<NoiseSpec> gen_noise;
  Seed seed{0};
  double unit_scale = 1.0;
  std::size_t threads = 1;
  LossWeights weights;
  NormSchedule schedule;
  bool squared_translation = false;
  bool eight_connected = false;
  SolveConfig solve;
  GradcheckConfig gradcheck;
  nlohmann::json loss;  // raw; parsed by the loss subcommand

  fs::path resolve(const fs::path& p) const { return p.is_absolute() ? p : base_dir / p; }

  NeighborSet neighbors() const {
    return eight_connected ? NeighborSet::eight_connected(grid.n) : NeighborSet::four_connected(grid.n);
  }

  FrameLossOptions loss_options() const {
    return FrameLossOptions{schedule.p(),
                            squared_translation ? TranslationPenalty::kSquaredNorm : TranslationPenalty::kNorm};
  }
};

namespace detail {

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

inline Vec3 read_vec3(const nlohmann::json& j, const char* what) {
  if (!j.is_array() || j.size() != 3) throw ConfigError(std::string(what) + ": expected [x, y, z]");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

inline NoiseSpec parse_noise(const nlohmann::json& j, Seed default_seed) {
  if (!j.is_object()) throw ConfigError("noise entry must be an object");
  NoiseSpec n;
  read_opt(j, "ray_sigma", n.ray_sigma);
  read_opt(j, "point_sigma", n.point_sigma);
  if (j.contains("point_bias")) n.point_bias = read_vec3(j.at("point_bias"), "point_bias");
  if (j.contains("mode")) {
    try {
      n.mode = parse_noise_mode(j.at("mode").get<std::string>());
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
  read_opt(j, "patch_scales", n.patch_scales);
  n.seed = default_seed;
  if (j.contains("seed")) n.seed = Seed{j.at("seed").get<std::uint64_t>()};
  return n;
}

}  // namespace detail

/// Intrinsics + grid object: {"fx","fy","cx","cy","width","height","n"}.
inline PatchGrid parse_grid(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("grid must be an object");
  PatchGrid g;
  for (const char* key : {"fx", "fy", "cx", "cy", "width", "height", "n"}) {
    if (!j.contains(key)) throw ConfigError(std::string("grid: missing key '") + key + "'");
  }
  detail::read_opt(j, "fx", g.intrinsics.fx);
  detail::read_opt(j, "fy", g.intrinsics.fy);
  detail::read_opt(j, "cx", g.intrinsics.cx);
  detail::read_opt(j, "cy", g.intrinsics.cy);
  detail::read_opt(j, "width", g.intrinsics.width);
  detail::read_opt(j, "height", g.intrinsics.height);
  detail::read_opt(j, "n", g.n);
  try {
    g.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return g;
}

inline LossWeights parse_weights(const nlohmann::json& j) {
  LossWeights w;
  detail::read_opt(j, "w_pose_r", w.w_pose_r);
  detail::read_opt(j, "w_pose_p", w.w_pose_p);
  detail::read_opt(j, "w_geo_r", w.w_geo_r);
  detail::read_opt(j, "w_geo_p", w.w_geo_p);
  detail::read_opt(j, "w_reg_r", w.w_reg_r);
  detail::read_opt(j, "w_reg_p", w.w_reg_p);
  detail::read_opt(j, "w_syn", w.w_syn);
  detail::read_opt(j, "w_real", w.w_real);
  detail::read_opt(j, "w_domain", w.w_domain);
  try {
    w.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return w;
}

inline RunConfig parse_config(const nlohmann::json& j, const fs::path& base_dir = ".") {
  if (!j.is_object()) throw ConfigError("config root must be an object");
  RunConfig c;
  c.base_dir = base_dir;
  if (j.contains("seed")) c.seed = Seed{j.at("seed").get<std::uint64_t>()};
  if (j.contains("grid")) {
    c.grid = parse_grid(j.at("grid"));
    const auto& g = j.at("grid");
    if (g.contains("ray_averaging")) {
      const auto mode = g.at("ray_averaging").get<std::string>();
      if (mode == "mean") c.averaging = RayAveraging::kMeanOfPixelRays;
      else if (mode == "center") c.averaging = RayAveraging::kPatchCenter;
      else throw ConfigError("grid.ray_averaging must be 'mean' or 'center'");
    }
  }
  if (j.contains("poses_file")) c.poses_file = j.at("poses_file").get<std::string>();
  if (j.contains("random_poses")) {
    detail::read_opt(j.at("random_poses"), "count", c.random_poses.count);
    detail::read_opt(j.at("random_poses"), "translation_scale", c.random_poses.translation_scale);
  }
  if (j.contains("perturb")) {
    PosePerturbSpec p;
    const auto& pj = j.at("perturb");
    detail::read_opt(pj, "sigma_t", p.sigma_t);
    detail::read_opt(pj, "sigma_r", p.sigma_r);
    detail::read_opt(pj, "count", p.count);
    p.seed = c.seed;
    if (pj.contains("seed")) p.seed = Seed{pj.at("seed").get<std::uint64_t>()};
    try {
      p.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    c.perturb = p;
  }
  if (j.contains("noise")) {
    const auto& nj = j.at("noise");
    if (nj.is_object()) {
      c.noise.push_back(detail::parse_noise(nj, c.seed));
    } else if (nj.is_array()) {
      for (const auto& e : nj) c.noise.push_back(detail::parse_noise(e, c.seed));
    } else {
      throw ConfigError("noise must be an object or an array of objects");
    }
  }
  detail::read_opt(j, "unit_scale", c.unit_scale);
  if (!(c.unit_scale > 0.0)) throw ConfigError("unit_scale must be > 0");
  detail::read_opt(j, "threads", c.threads);
  if (j.contains("weights")) c.weights = parse_weights(j.at("weights"));
  if (j.contains("schedule")) {
    detail::read_opt(j.at("schedule"), "warmup_steps", c.schedule.warmup_steps);
    detail::read_opt(j.at("schedule"), "current_step", c.schedule.current_step);
  }
  detail::read_opt(j, "squared_translation", c.squared_translation);
  if (j.contains("neighbors")) {
    const int k = j.at("neighbors").get<int>();
    if (k != 4 && k != 8) throw ConfigError("neighbors must be 4 or 8");
    c.eight_connected = k == 8;
  }
  if (j.contains("gen")) {
    const auto& gj = j.at("gen");
    if (gj.contains("noise")) c.gen_noise = detail::parse_noise(gj.at("noise"), c.seed);
  }
  if (j.contains("solve")) {
    const auto& sj = j.at("solve");
    if (sj.contains("input_dir")) c.solve.input_dir = sj.at("input_dir").get<std::string>();
    if (sj.contains("gt_poses_file")) c.solve.gt_poses_file = sj.at("gt_poses_file").get<std::string>();
  }
  if (j.contains("gradcheck")) {
    const auto& gj = j.at("gradcheck");
    if (gj.contains("op")) {
      try {
        c.gradcheck.op = parse_grad_op(gj.at("op").get<std::string>());
      } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
      }
    }
    detail::read_opt(gj, "h", c.gradcheck.h);
    detail::read_opt(gj, "threshold", c.gradcheck.threshold);
    detail::read_opt(gj, "instance", c.gradcheck.instance);
    detail::read_opt(gj, "size", c.gradcheck.size);
    if (c.gradcheck.instance != "random" && c.gradcheck.instance != "collinear") {
      throw ConfigError("gradcheck.instance must be 'random' or 'collinear'");
    }
  }
  if (j.contains("loss")) c.loss = j.at("loss");
  return c;
}

inline RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config '" + path.string() + "': " + e.what());
  }
  try {
    return parse_config(j, path.has_parent_path() ? path.parent_path() : fs::path("."));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config '" + path.string() + "': " + e.what());
  }
}

}  // namespace grr
