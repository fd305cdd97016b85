#include "grr/camera.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace grr;

namespace {

PatchGrid paper_grid() { return PatchGrid{16, Intrinsics{256, 256, 128, 128, 256, 256}}; }

}  // namespace

TEST(CanonicalRays, SinglePixelOnAxis) {
  const RayBundle r = canonical_rays(PatchGrid{1, Intrinsics{1, 1, 0.5, 0.5, 1, 1}});
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r.dirs[0], Vec3(0, 0, 1));
}

TEST(CanonicalRays, SixteenBySixteenGridHas256UnitRays) {
  const RayBundle r = canonical_rays(paper_grid());
  EXPECT_EQ(r.size(), 256u);
  EXPECT_TRUE(r.is_unit(1e-12));
  for (const Vec3& d : r.dirs) EXPECT_GT(d.z(), 0.0);
}

TEST(CanonicalRays, PatchMeanMatchesPixelEnumeration) {
  // 4x4 image, 2x2 patches of 2x2 pixels each.
  const Intrinsics k{2, 2, 2, 2, 4, 4};
  const RayBundle r = canonical_rays(PatchGrid{2, k});
  ASSERT_EQ(r.size(), 4u);
  for (int pr = 0; pr < 2; ++pr) {
    for (int pc = 0; pc < 2; ++pc) {
      Vec3 sum = Vec3::Zero();
      for (int v = 2 * pr; v < 2 * pr + 2; ++v) {
        for (int u = 2 * pc; u < 2 * pc + 2; ++u) {
          const double x = (u + 0.5 - 2.0) / 2.0, y = (v + 0.5 - 2.0) / 2.0;
          const double n = std::sqrt(x * x + y * y + 1.0);
          sum += Vec3(x / n, y / n, 1.0 / n);
        }
      }
      const Vec3 expected = sum / sum.norm();
      EXPECT_LT((r.dirs[pr * 2 + pc] - expected).cwiseAbs().maxCoeff(), 1e-15);
    }
  }
  // Top-left patch looks up-left in image coordinates (+x right, +y down).
  EXPECT_LT(r.dirs[0].x(), 0.0);
  EXPECT_LT(r.dirs[0].y(), 0.0);
}

TEST(CanonicalRays, CenterModeDiffersSlightlyFromMean) {
  const PatchGrid g = paper_grid();
  const RayBundle mean = canonical_rays(g);
  const RayBundle center = canonical_rays(g, RayAveraging::kPatchCenter);
  ASSERT_EQ(center.size(), mean.size());
  double max_angle = 0.0;
  for (std::size_t i = 0; i < mean.size(); ++i) {
    max_angle = std::max(max_angle, std::acos(std::min(1.0, mean.dirs[i].dot(center.dirs[i]))));
  }
  EXPECT_GT(max_angle, 0.0);
  EXPECT_LT(max_angle, 1e-3);
}

TEST(CanonicalRays, MirrorSymmetry) {
  const PatchGrid g = paper_grid();
  const RayBundle r = canonical_rays(g);
  for (int row = 0; row < g.n; ++row) {
    for (int col = 0; col < g.n; ++col) {
      const Vec3& a = r.dirs[row * g.n + col];
      const Vec3& b = r.dirs[row * g.n + (g.n - 1 - col)];
      EXPECT_NEAR(a.x(), -b.x(), 1e-9);
      EXPECT_NEAR(a.y(), b.y(), 1e-9);
      const Vec3& c = r.dirs[(g.n - 1 - row) * g.n + col];
      EXPECT_NEAR(a.y(), -c.y(), 1e-9);
    }
  }
}

TEST(CanonicalRays, NonDivisibleImageUsesFloorBoundaries) {
  EXPECT_EQ(PatchGrid::span_of(0, 3, 10), std::make_pair(0, 3));
  EXPECT_EQ(PatchGrid::span_of(1, 3, 10), std::make_pair(3, 6));
  EXPECT_EQ(PatchGrid::span_of(2, 3, 10), std::make_pair(6, 10));
  const RayBundle r = canonical_rays(PatchGrid{3, Intrinsics{8, 8, 5, 5, 10, 10}});
  EXPECT_EQ(r.size(), 9u);
  EXPECT_TRUE(r.is_unit(1e-12));
}

TEST(CanonicalRays, FailsOnEmptyPatches) {
  EXPECT_THROW(canonical_rays(PatchGrid{5, Intrinsics{4, 4, 2, 2, 4, 4}}), EmptyPatch);
  EXPECT_THROW(canonical_rays(PatchGrid{0, Intrinsics{4, 4, 2, 2, 4, 4}}), std::invalid_argument);
  EXPECT_THROW(canonical_rays(PatchGrid{1, Intrinsics{-1, 4, 2, 2, 4, 4}}), std::invalid_argument);
  EXPECT_THROW(canonical_rays(PatchGrid{1, Intrinsics{4, 4, 9, 2, 4, 4}}), std::invalid_argument);
}

TEST(CanonicalPoints, EqualRayCoordinates) {
  const RayBundle single{{Vec3(0, 0, 1)}};
  EXPECT_EQ(canonical_points(single).pts[0], Vec3(0, 0, 1));
  const RayBundle r = canonical_rays(PatchGrid{2, Intrinsics{2, 2, 2, 2, 4, 4}});
  const PointMap p = canonical_points(r);
  ASSERT_EQ(p.size(), r.size());
  for (std::size_t i = 0; i < r.size(); ++i) {
    EXPECT_EQ(p.pts[i], r.dirs[i]);
    EXPECT_NEAR(p.pts[i].norm(), 1.0, 1e-15);
  }
}

TEST(WorldRays, IdentityAndAxisPermutation) {
  const RayBundle r = canonical_rays(paper_grid());
  const RayBundle same = world_rays(Pose::identity(), r);
  for (std::size_t i = 0; i < r.size(); ++i) EXPECT_EQ(same.dirs[i], r.dirs[i]);

  const Pose rz{Rotation::from_matrix(oracle::axis_rotation(2, kPi / 2), 1e-12), Vec3(5, 5, 5)};
  const RayBundle x{{Vec3(1, 0, 0)}};
  EXPECT_LT((world_rays(rz, x).dirs[0] - Vec3(0, 1, 0)).norm(), 1e-12);
}

TEST(WorldRays, PreservesPairwiseAngles) {
  Rng rng(Seed{4});
  const RayBundle r = canonical_rays(PatchGrid{6, Intrinsics{40, 40, 24, 24, 48, 48}});
  for (int trial = 0; trial < 10; ++trial) {
    const RayBundle w = world_rays(random_pose(rng), r);
    EXPECT_TRUE(w.is_unit(1e-12));
    for (std::size_t i = 0; i < r.size(); ++i)
      for (std::size_t j = 0; j < r.size(); ++j)
        EXPECT_NEAR(w.dirs[i].dot(w.dirs[j]), r.dirs[i].dot(r.dirs[j]), 1e-9);
  }
}

TEST(WorldPoints, TranslationAndUnitDistance) {
  const PointMap one{{Vec3(0, 0, 1)}};
  EXPECT_EQ(world_points(Pose{Rotation::identity(), Vec3(1, 2, 3)}, one).pts[0], Vec3(1, 2, 4));

  const PointMap cam = canonical_points(canonical_rays(paper_grid()));
  const PointMap same = world_points(Pose::identity(), cam);
  for (std::size_t i = 0; i < cam.size(); ++i) EXPECT_EQ(same.pts[i], cam.pts[i]);

  Rng rng(Seed{6});
  for (int trial = 0; trial < 20; ++trial) {
    const Pose p = random_pose(rng, 10.0);
    for (const Vec3& x : world_points(p, cam).pts) EXPECT_NEAR((x - p.t).norm(), 1.0, 1e-9);
  }
}

TEST(Csv, RoundTripAndHeader) {
  const RayBundle r = canonical_rays(PatchGrid{4, Intrinsics{16, 16, 8, 8, 16, 16}});
  std::stringstream ss;
  write_csv(ss, r);
  const std::string text = ss.str();
  EXPECT_EQ(text.substr(0, 8), "i,x,y,z\n");
  const RayBundle back = read_ray_csv(ss);
  ASSERT_EQ(back.size(), 16u);
  for (std::size_t i = 0; i < r.size(); ++i) EXPECT_EQ(back.dirs[i], r.dirs[i]);

  std::istringstream bad_header("a,b,c,d\n0,1,2,3\n");
  EXPECT_THROW(read_ray_csv(bad_header), std::runtime_error);
  std::istringstream out_of_order("i,x,y,z\n1,0,0,1\n");
  EXPECT_THROW(read_point_csv(out_of_order), std::runtime_error);
}
