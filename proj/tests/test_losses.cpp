#include "grr/gradcheck.hpp"
#include "grr/losses.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace grr;

namespace {

LossWeights only(double LossWeights::*field, double value = 1.0) {
  LossWeights w{0, 0, 0, 0, 0, 0, 0, 0, 0};
  w.*field = value;
  return w;
}

Mat3 hat(const Vec3& w) {
  Mat3 k;
  k << 0, -w.z(), w.y(), w.z(), 0, -w.x(), -w.y(), w.x(), 0;
  return k;
}

template <class F>
std::vector<Vec3> central_grad(std::vector<Vec3> x, F f, double h = 1e-6) {
  std::vector<Vec3> g(x.size(), Vec3::Zero());
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (int k = 0; k < 3; ++k) {
      const double x0 = x[i](k);
      x[i](k) = x0 + h;
      const double fp = f(x);
      x[i](k) = x0 - h;
      const double fm = f(x);
      x[i](k) = x0;
      g[i](k) = (fp - fm) / (2 * h);
    }
  }
  return g;
}

double max_diff(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, (a[i] - b[i]).cwiseAbs().maxCoeff());
  return m;
}

}  // namespace

TEST(PoseLoss, ZeroAtGroundTruth) {
  Rng rng(Seed{1});
  for (int k = 0; k < 20; ++k) {
    const Pose gt = random_pose(rng, 3.0);
    for (NormOrder p : {NormOrder::kL1, NormOrder::kL2}) EXPECT_EQ(pose_loss(gt.r, gt.t, gt, {}, p), 0.0);
  }
}

TEST(PoseLoss, AntipodalRotationIsPi) {
  const Pose gt = Pose::identity();
  const Rotation flip = Rotation::axis_angle(Vec3(0, 1, 0), kPi);
  EXPECT_NEAR(pose_loss(flip, gt.t, gt, only(&LossWeights::w_pose_r), NormOrder::kL1), kPi, 1e-12);
}

TEST(PoseLoss, TranslationNormAndSquaredVariant) {
  const Pose gt{Rotation::identity(), Vec3(1, 1, 1)};
  const Vec3 t = gt.t + Vec3(3, 4, 0);
  const LossWeights w = only(&LossWeights::w_pose_p);
  EXPECT_DOUBLE_EQ(pose_loss(gt.r, t, gt, w, NormOrder::kL2), 5.0);
  EXPECT_DOUBLE_EQ(pose_loss(gt.r, t, gt, w, NormOrder::kL2, TranslationPenalty::kSquaredNorm), 25.0);
  EXPECT_DOUBLE_EQ(pose_loss(gt.r, t, gt, w, NormOrder::kL1), 7.0);
}

TEST(PoseLoss, RotationTermIsBiInvariant) {
  Rng rng(Seed{2});
  const LossWeights w = only(&LossWeights::w_pose_r);
  for (int k = 0; k < 100; ++k) {
    const Rotation a = random_rotation(rng), b = random_rotation(rng), q = random_rotation(rng);
    for (NormOrder p : {NormOrder::kL1, NormOrder::kL2}) {
      const double base = pose_loss(a, Vec3::Zero(), Pose{b, Vec3::Zero()}, w, p);
      EXPECT_NEAR(pose_loss(a * q, Vec3::Zero(), Pose{b * q, Vec3::Zero()}, w, p), base, 1e-9);
      EXPECT_NEAR(pose_loss(q * a, Vec3::Zero(), Pose{q * b, Vec3::Zero()}, w, p), base, 1e-9);
    }
  }
}

TEST(PoseLoss, GradientAlongTangentDirections) {
  Rng rng(Seed{3});
  for (int k = 0; k < 20; ++k) {
    const Pose gt = random_pose(rng, 2.0);
    const Rotation r = random_rotation(rng);
    const Vec3 t = rng.normal3();
    for (NormOrder p : {NormOrder::kL1, NormOrder::kL2}) {
      const PoseLossGrad g = pose_loss_grad(r, t, gt, {}, p);
      for (int axis = 0; axis < 3; ++axis) {
        const Vec3 om = Vec3::Unit(axis);
        const double h = 1e-6;
        const auto at = [&](double s) {
          return pose_loss(r * Rotation::axis_angle(om, s), t, gt, {}, p);
        };
        const double numeric = (at(h) - at(-h)) / (2 * h);
        const double analytic = (g.rotation.array() * (r.matrix() * hat(om)).array()).sum();
        EXPECT_NEAR(analytic, numeric, 1e-6);
      }
      const std::vector<Vec3> nt = central_grad({t}, [&](const std::vector<Vec3>& x) {
        return pose_loss(r, x[0], gt, {}, p);
      });
      EXPECT_LT((nt[0] - g.translation).cwiseAbs().maxCoeff(), 1e-6);
    }
  }
}

TEST(GeometryLoss, ZeroAtGroundTruth) {
  const RayBundle d = canonical_rays(test::paper_grid());
  const PointMap pts = world_points(random_pose(Seed{4}), canonical_points(d));
  const RayBundle rays = world_rays(random_pose(Seed{4}), d);
  for (NormOrder p : {NormOrder::kL1, NormOrder::kL2}) EXPECT_EQ(geometry_loss(rays, rays, pts, pts, {}, p), 0.0);
}

TEST(GeometryLoss, OrthogonalRaysGiveOne) {
  const RayBundle gt{{Vec3(0, 0, 1), Vec3(1, 0, 0), Vec3(0, 1, 0)}};
  const RayBundle pred{{Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1)}};
  const PointMap none;
  EXPECT_NEAR(geometry_loss(pred, gt, none, none, only(&LossWeights::w_geo_r), NormOrder::kL2), 1.0, 1e-15);
}

TEST(GeometryLoss, SinglePointL1) {
  const PointMap gt{{Vec3(0, 0, 1)}};
  const PointMap pred{{Vec3(1, 1, 2)}};
  const RayBundle ray{{Vec3(0, 0, 1)}};
  EXPECT_DOUBLE_EQ(geometry_loss(ray, ray, pred, gt, only(&LossWeights::w_geo_p), NormOrder::kL1), 3.0);
}

TEST(GeometryLoss, GradientMatchesDifferences) {
  const TotalLossInstance in = random_loss_instance(Seed{5}, 3, 0.1);
  const FrameLossInput& f = in.syn;
  for (NormOrder p : {NormOrder::kL1, NormOrder::kL2}) {
    const RepresentationGrad g = geometry_loss_grad(f.rays_pred, f.rays_gt, f.points_pred, f.points_gt, {}, p);
    const auto nr = central_grad(f.rays_pred.dirs, [&](const std::vector<Vec3>& x) {
      return geometry_loss(RayBundle{x}, f.rays_gt, f.points_pred, f.points_gt, {}, p);
    });
    const auto np = central_grad(f.points_pred.pts, [&](const std::vector<Vec3>& x) {
      return geometry_loss(f.rays_pred, f.rays_gt, PointMap{x}, f.points_gt, {}, p);
    });
    EXPECT_LT(max_diff(g.rays, nr), 1e-7);
    EXPECT_LT(max_diff(g.points, np), 1e-7);
  }
}

TEST(Regularization, ZeroUnderIsometries) {
  const PatchGrid grid = test::paper_grid();
  const NeighborSet nbrs = NeighborSet::eight_connected(grid.n);
  Rng rng(Seed{6});
  for (int k = 0; k < 10; ++k) {
    const Pose gt = random_pose(rng, 2.0);
    const FrameLossInput f = FrameLossInput::from_ground_truth(grid, gt);
    const Pose motion = random_pose(rng, 5.0);
    const RayBundle rays = world_rays(Pose{random_rotation(rng), Vec3::Zero()}, f.rays_cam);
    PointMap pts = f.points_gt;
    for (Vec3& x : pts.pts) x = motion.apply(x);
    for (NormOrder p : {NormOrder::kL1, NormOrder::kL2}) {
      EXPECT_EQ(regularization_loss(f.rays_cam, f.points_gt, f.rays_cam, f.points_gt, nbrs, {}, p), 0.0);
      EXPECT_LE(regularization_loss(rays, pts, f.rays_cam, f.points_gt, nbrs, {}, p), 1e-9);
    }
  }
}

TEST(Regularization, InvariantUnderGlobalMotionOfNoisyPredictions) {
  const TotalLossInstance in = random_loss_instance(Seed{7}, 4, 0.1);
  const FrameLossInput& f = in.syn;
  Rng rng(Seed{8});
  for (int k = 0; k < 10; ++k) {
    const Rotation q = random_rotation(rng);
    const Pose motion = random_pose(rng, 5.0);
    RayBundle rays = f.rays_pred;
    for (Vec3& d : rays.dirs) d = q * d;
    PointMap pts = f.points_pred;
    for (Vec3& x : pts.pts) x = motion.apply(x);
    for (NormOrder p : {NormOrder::kL1, NormOrder::kL2}) {
      const double base = regularization_loss(f.rays_pred, f.points_pred, f.rays_cam, f.points_gt, f.neighbors, {}, p);
      EXPECT_GT(base, 0.0);
      EXPECT_NEAR(regularization_loss(rays, pts, f.rays_cam, f.points_gt, f.neighbors, {}, p), base, 1e-9);
    }
  }
}

TEST(Regularization, HandComputedPair) {
  // Predicted dot 0.5 vs canonical 0.8.
  const RayBundle cam{{Vec3(1, 0, 0), Vec3(0.8, 0.6, 0)}};
  const RayBundle pred{{Vec3(1, 0, 0), Vec3(0.5, std::sqrt(0.75), 0)}};
  const PointMap pts{{Vec3(0, 0, 0), Vec3(1, 0, 0)}};
  const NeighborSet one{{{0, 1}}};
  EXPECT_NEAR(regularization_loss(pred, pts, cam, pts, one, only(&LossWeights::w_reg_r), NormOrder::kL1), 0.3,
              1e-15);

  PointMap doubled = pts;
  for (Vec3& x : doubled.pts) x *= 2.0;
  EXPECT_DOUBLE_EQ(regularization_loss(cam, doubled, cam, pts, one, only(&LossWeights::w_reg_p), NormOrder::kL1),
                   1.0);
}

TEST(Regularization, DoubledPointsGiveUnitPerPairTerm) {
  PointMap gt;
  for (int i = 0; i < 5; ++i) gt.pts.push_back(Vec3(i, 0, 0));
  PointMap pred = gt;
  for (Vec3& x : pred.pts) x *= 2.0;
  const RayBundle rays{std::vector<Vec3>(5, Vec3(0, 0, 1))};
  const NeighborSet chain{{{0, 1}, {1, 2}, {2, 3}, {3, 4}}};
  EXPECT_DOUBLE_EQ(regularization_loss(rays, pred, rays, gt, chain, only(&LossWeights::w_reg_p), NormOrder::kL1),
                   1.0);
}

TEST(Regularization, EmptyNeighborSetThrows) {
  const RayBundle r{{Vec3(0, 0, 1)}};
  const PointMap p{{Vec3(0, 0, 1)}};
  EXPECT_THROW(regularization_loss(r, p, r, p, NeighborSet{}, {}, NormOrder::kL2), EmptyNeighborSet);
  EXPECT_THROW(regularization_loss_grad(r, p, r, p, NeighborSet{}, {}, NormOrder::kL2), EmptyNeighborSet);
}

TEST(Regularization, GradientMatchesDifferences) {
  const TotalLossInstance in = random_loss_instance(Seed{9}, 3, 0.1);
  const FrameLossInput& f = in.real;
  for (NormOrder p : {NormOrder::kL1, NormOrder::kL2}) {
    const RepresentationGrad g =
        regularization_loss_grad(f.rays_pred, f.points_pred, f.rays_cam, f.points_gt, f.neighbors, {}, p);
    const auto nr = central_grad(f.rays_pred.dirs, [&](const std::vector<Vec3>& x) {
      return regularization_loss(RayBundle{x}, f.points_pred, f.rays_cam, f.points_gt, f.neighbors, {}, p);
    });
    const auto np = central_grad(f.points_pred.pts, [&](const std::vector<Vec3>& x) {
      return regularization_loss(f.rays_pred, PointMap{x}, f.rays_cam, f.points_gt, f.neighbors, {}, p);
    });
    EXPECT_LT(max_diff(g.rays, nr), 1e-7);
    EXPECT_LT(max_diff(g.points, np), 1e-7);
  }
}

TEST(NeighborSets, CountsAndValidation) {
  EXPECT_EQ(NeighborSet::four_connected(1).size(), 0u);
  EXPECT_EQ(NeighborSet::four_connected(2).size(), 4u);
  EXPECT_EQ(NeighborSet::four_connected(16).size(), 2u * 16 * 15);
  EXPECT_EQ(NeighborSet::eight_connected(16).size(), 2u * 16 * 15 + 2u * 15 * 15);
  EXPECT_NO_THROW(NeighborSet::eight_connected(4).validate(16));
  EXPECT_THROW((NeighborSet{{{0, 0}}}.validate(4)), std::invalid_argument);
  EXPECT_THROW((NeighborSet{{{0, 4}}}.validate(4)), std::invalid_argument);
  EXPECT_THROW((NeighborSet{{{0, 1}, {1, 0}}}.validate(4)), std::invalid_argument);
}

TEST(DomainBce, ReferenceValues) {
  EXPECT_NEAR(domain_bce(0.0, DomainLabel::kSynthetic), std::log(2.0), 1e-15);
  EXPECT_NEAR(domain_bce(0.0, DomainLabel::kReal), 0.6931, 1e-4);
  EXPECT_LT(domain_bce(20.0, DomainLabel::kReal), 1e-8);
  EXPECT_NEAR(domain_bce(-3.0, DomainLabel::kReal), std::log(1.0 + std::exp(3.0)), 1e-14);
  EXPECT_NEAR(domain_bce(-3.0, DomainLabel::kReal), 3.0486, 1e-4);
}

TEST(DomainBce, StableAtExtremeLogits) {
  for (double z : {-800.0, -40.0, 40.0, 800.0}) {
    for (DomainLabel y : {DomainLabel::kSynthetic, DomainLabel::kReal}) {
      const double v = domain_bce(z, y);
      EXPECT_TRUE(std::isfinite(v));
      EXPECT_GE(v, 0.0);
      EXPECT_TRUE(std::isfinite(domain_bce_grad(z, y)));
    }
  }
  EXPECT_NEAR(domain_bce(800.0, DomainLabel::kSynthetic), 800.0, 1e-9);
}

TEST(DomainBce, MatchesDirectFormulaAndGradient) {
  for (double z = -5.0; z <= 5.0; z += 0.25) {
    const double s = 1.0 / (1.0 + std::exp(-z));
    EXPECT_NEAR(domain_bce(z, DomainLabel::kReal), -std::log(s), 1e-12);
    EXPECT_NEAR(domain_bce(z, DomainLabel::kSynthetic), -std::log(1.0 - s), 1e-12);
    for (DomainLabel y : {DomainLabel::kSynthetic, DomainLabel::kReal}) {
      const double h = 1e-6;
      EXPECT_NEAR(domain_bce_grad(z, y), (domain_bce(z + h, y) - domain_bce(z - h, y)) / (2 * h), 1e-8);
    }
  }
}

TEST(TotalLoss, Arithmetic) {
  EXPECT_EQ(total_loss({}, {}, 0.0, 0.0, {}), 0.0);
  const LossComponents one{1, 0, 0}, two{0, 2, 0};
  EXPECT_NEAR(total_loss(one, two, 0.5, 0.5, {}), 3.1, 1e-15);
  LossWeights w;
  w.w_domain = 0.0;
  EXPECT_EQ(total_loss(one, two, 0.5, 0.5, w), one.sum() + two.sum());
}

TEST(TotalLoss, LinearInEachWeight) {
  const TotalLossInstance base = random_loss_instance(Seed{10}, 4, 0.1);
  double LossWeights::*fields[] = {&LossWeights::w_pose_r, &LossWeights::w_pose_p, &LossWeights::w_geo_r,
                                   &LossWeights::w_geo_p,  &LossWeights::w_reg_r,  &LossWeights::w_reg_p,
                                   &LossWeights::w_syn,    &LossWeights::w_real,   &LossWeights::w_domain};
  for (auto f : fields) {
    TotalLossInstance in = base;
    const double h = 0.5;
    in.weights.*f = 1.0;
    const double l1 = total_loss_value(in);
    in.weights.*f = 1.0 + h;
    const double l2 = total_loss_value(in);
    in.weights.*f = 1.0 + 2 * h;
    const double l3 = total_loss_value(in);
    in.weights.*f = 0.0;
    const double l0 = total_loss_value(in);
    // Slope equals the weight's own contribution at weight 1.
    EXPECT_NEAR((l2 - l1) / h, l1 - l0, 1e-10);
    EXPECT_NEAR((l3 - l2) / h, (l2 - l1) / h, 1e-10);
  }
}

TEST(TotalLoss, GradientMatchesDifferences) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    for (NormOrder p : {NormOrder::kL1, NormOrder::kL2}) {
      const GradReport r = finite_diff_check(random_loss_instance(Seed{s}, 4, 0.05, p), 1e-5);
      ASSERT_TRUE(r.ok());
      EXPECT_LT(r.max_rel_err, 1e-4) << "seed " << s << " p " << order(p);
    }
  }
}

TEST(FrameLoss, ZeroAtGroundTruth) {
  const FrameLossInput f = FrameLossInput::from_ground_truth(test::paper_grid(), random_pose(Seed{11}));
  const LossComponents c = frame_loss(f, {});
  EXPECT_LT(c.pose, 1e-12);
  EXPECT_EQ(c.geo, 0.0);
  // Rotated rays match camera dot products up to rounding only.
  EXPECT_LT(c.reg, 1e-15);

  const FrameLossInput g = FrameLossInput::from_ground_truth(test::paper_grid(), Pose{Rotation::identity(), Vec3(1, 2, 3)});
  EXPECT_EQ(frame_loss(g, {}).reg, 0.0);
}

TEST(Schedule, SwitchesExactlyAtWarmup) {
  const NormSchedule s{100, 0};
  EXPECT_EQ(s.p_at(0), NormOrder::kL1);
  EXPECT_EQ(s.p_at(99), NormOrder::kL1);
  EXPECT_EQ(s.p_at(100), NormOrder::kL2);
  EXPECT_EQ(s.p_at(101), NormOrder::kL2);
  EXPECT_EQ((NormSchedule{0, 0}.p()), NormOrder::kL2);

  const TotalLossInstance in = random_loss_instance(Seed{12}, 3, 0.1);
  auto value_at = [&](std::size_t step) {
    TotalLossInstance x = in;
    x.options.p = s.p_at(step);
    return total_loss_value(x);
  };
  EXPECT_TRUE(std::isfinite(value_at(99)));
  EXPECT_TRUE(std::isfinite(value_at(100)));
  EXPECT_EQ(value_at(0), value_at(99));
  EXPECT_NE(value_at(99), value_at(100));
  EXPECT_EQ(value_at(100), value_at(1000));
}

TEST(Weights, Validation) {
  EXPECT_NO_THROW(LossWeights{}.validate());
  LossWeights w;
  w.w_geo_p = -1.0;
  EXPECT_THROW(w.validate(), std::invalid_argument);
  w.w_geo_p = std::nan("");
  EXPECT_THROW(w.validate(), std::invalid_argument);
}
