#include <gtest/gtest.h>

#include <random>

#include "kpt3d/mono_pipeline.hpp"
#include "test_util.hpp"

using namespace kpt3d;
namespace kt = kpt3d::testing;

namespace {

Detection2D peak_at(int c, double x, double y)
{
  Detection2D d;
  d.type_index = c;
  d.position = {x, y};
  return d;
}

}  // namespace

TEST(ReadDepth, UniformDisk)
{
  const CategorySpec spec{"x", {"a"}, {false}};
  const std::vector<MapKeypoint> kps{{0, {20, 30}, 0, 0.62}};
  const std::vector<Vec2> centers{{20, 30}};
  TargetOptions opt;
  const auto t = render_targets(kps, centers, spec, opt);
  const auto r = read_depth(t.depth, t.heatmaps, peak_at(0, 20, 30));
  EXPECT_EQ(r.z_hat, static_cast<double>(0.62f));
  EXPECT_NEAR(r.z_hat, 0.62, 1e-7);
  EXPECT_EQ(r.support_px, 25);
}

TEST(ReadDepth, ZeroDepthThrows)
{
  FloatMaps depth(1, 64, 64), heat(1, 64, 64);
  heat(0, 10, 10) = 1;
  EXPECT_THROW(read_depth(depth, heat, peak_at(0, 10, 10)), NoDepth);
}

TEST(ReadDepth, RestrictedToNonzeroDepth)
{
  FloatMaps depth(1, 16, 16), heat(1, 16, 16);
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j)
      heat(0, i, j) = 0.5f;
  depth(0, 5, 5) = 1.0f;
  depth(0, 5, 6) = 2.0f;
  heat(0, 5, 6) = 1.5f;  // weights 0.5 and 1.5
  const auto r = read_depth(depth, heat, peak_at(0, 5.2, 4.9));
  EXPECT_EQ(r.support_px, 2);
  EXPECT_DOUBLE_EQ(r.z_hat, (0.5 * 1.0 + 1.5 * 2.0) / 2.0);
}

TEST(ReadDepth, ShapeMismatch)
{
  EXPECT_THROW(read_depth(FloatMaps(1, 8, 8), FloatMaps(2, 8, 8), peak_at(0, 1, 1)), ShapeMismatch);
}

TEST(LiftMono, PrincipalPoint)
{
  const CameraIntrinsics K(500, 500, 320, 240, 640, 480);
  EXPECT_LT((lift_mono(K, {320, 240}, 1.0, RigidTransform::identity()) - Vec3(0, 0, 1)).norm(), 1e-15);
  EXPECT_THROW(lift_mono(K, {320, 240}, 0.0, RigidTransform::identity()), InvalidDepth);
  EXPECT_THROW(lift_mono(K, {320, 240}, -1.0, RigidTransform::identity()), InvalidDepth);
}

TEST(LiftMono, InvertsProjection)
{
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto K = kt::random_intrinsics(rng);
    const RigidTransform T(kt::random_rotation(rng), kt::random_vec(rng, -2, 2));
    const Vec3 cam = kt::random_vec(rng, -0.3, 0.3) + Vec3(0, 0, 0.8);
    const Vec3 X = T * cam;
    const auto x = project(make_projection(K, T), X);
    ASSERT_TRUE(x);
    EXPECT_LT((lift_mono(K, *x, cam.z(), T) - X).norm(), 1e-9);
  }
}

TEST(RunMonoFrame, RenderedObject)
{
  const CategorySpec spec{"x", {"a", "b"}, {false, false}};
  const CameraIntrinsics K(700, 700, 640, 360, 1280, 720);
  const auto mapping = FrameMapping::center_crop(1280, 720);
  // Points on pixel centers of the output map so the readout is exact.
  const std::vector<Vec2> map_px{{30, 30}, {36, 30}, {33, 34}};
  const std::vector<double> z{0.6, 0.65, 0.62};
  std::vector<MapKeypoint> kps;
  for (int k = 0; k < 3; ++k)
    kps.push_back({k == 2 ? spec.center_channel() : k, map_px[static_cast<std::size_t>(k)], 0,
                   z[static_cast<std::size_t>(k)]});
  TargetOptions opt;
  const auto t = render_targets(kps, std::vector<Vec2>{map_px[2]}, spec, opt);
  const FrameMaps maps{t.heatmaps, t.center_field, t.depth, mapping};
  const auto report = run_mono_frame(maps, K, RigidTransform::identity(), spec.center_channel());
  ASSERT_EQ(report.objects.size(), 1u);
  const auto& o = report.objects[0];
  ASSERT_EQ(o.keypoints.size(), 2u);
  for (const auto& kp : o.keypoints) {
    const auto idx = static_cast<std::size_t>(kp.type_index);
    const Vec3 expect = lift_mono(K, mapping.to_image(map_px[idx]), z[idx], RigidTransform::identity());
    EXPECT_LT((kp.position - expect).norm(), 1e-6);
    EXPECT_EQ(kp.provenance, Provenance::kMono);
  }
}
