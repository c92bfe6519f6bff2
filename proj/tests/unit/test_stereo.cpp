#include <gtest/gtest.h>

#include <random>
#include <set>

#include "kpt3d/stereo_pipeline.hpp"
#include "test_util.hpp"

using namespace kpt3d;
using kpt3d::testing::look_at;
namespace kt = kpt3d::testing;

namespace {

StereoRig desk_rig()
{
  const CameraIntrinsics K(700, 700, 640, 360, 1280, 720);
  return {K, K, RigidTransform(Mat3::Identity(), Vec3(0.063, 0, 0))};
}

Detection2D det_at(int type, const Vec2& px)
{
  Detection2D d;
  d.type_index = type;
  d.image_position = px;
  d.score = 1;
  return d;
}

// Projects base-frame points into both cameras of a rig posed at `left_pose`.
struct TwoViews
{
  std::vector<Detection2D> left, right;
};

TwoViews project_both(const StereoRig& rig, const RigidTransform& left_pose, const std::vector<Vec3>& pts,
                      const std::vector<int>& types)
{
  const auto Pl = make_projection(rig.left, left_pose);
  const auto Pr = make_projection(rig.right, rig.right_pose(left_pose));
  TwoViews v;
  for (std::size_t k = 0; k < pts.size(); ++k) {
    v.left.push_back(det_at(types[k], *project(Pl, pts[k])));
    v.right.push_back(det_at(types[k], *project(Pr, pts[k])));
  }
  return v;
}

}  // namespace

TEST(DisparityShift, RectifiedRig)
{
  const auto rig = desk_rig();
  const auto s = disparity_shift(rig, 0.6);
  ASSERT_TRUE(s);
  EXPECT_NEAR(s->x(), -700 * 0.063 / 0.6, 1e-9);
  EXPECT_NEAR(s->y(), 0, 1e-9);
  // 1 mm in front lands far outside the right image
  EXPECT_FALSE(disparity_shift(rig, 0.001));
}

TEST(MatchLeftRight, NoiseFreeSceneAllMatched)
{
  std::mt19937_64 rng(5);
  const auto rig = desk_rig();
  const Mat3 F = fundamental_matrix(rig);
  for (int trial = 0; trial < 50; ++trial) {
    const auto pose = look_at(kt::random_vec(rng, -0.5, 0.5) + Vec3(0, -0.7, 0.4), Vec3::Zero());
    std::vector<Vec3> pts;
    std::vector<int> types;
    for (int k = 0; k < 4; ++k) {
      pts.push_back(kt::random_vec(rng, -0.15, 0.15));
      types.push_back(k);  // one instance per type
    }
    const auto v = project_both(rig, pose, pts, types);
    const auto m = match_left_right(v.left, v.right, F, rig);
    ASSERT_EQ(m.size(), pts.size());
    for (const auto& s : m) {
      EXPECT_EQ(s.left_index, s.right_index);
      EXPECT_LT(std::abs(s.epipolar_residual), 1e-6);
      EXPECT_EQ(s.left.type_index, s.right.type_index);
    }
  }
}

TEST(MatchLeftRight, ColinearDepthsResolvedByShift)
{
  // Two same-type points on one epipolar line (same image row in a
  // rectified rig), at 0.4 m and 0.9 m. Both right detections pass the
  // epipolar gate for both left detections.
  const auto rig = desk_rig();
  const Mat3 F = fundamental_matrix(rig);
  const RigidTransform pose = RigidTransform::identity();
  const auto Kinv = rig.left.inverse_matrix();
  const Vec3 near = Kinv * Vec3(600, 400, 1) * 0.4;
  const Vec3 far = Kinv * Vec3(640, 400, 1) * 0.9;
  const auto v = project_both(rig, pose, {near, far}, {0, 0});
  for (const auto& l : v.left)
    for (const auto& r : v.right)
      ASSERT_LT(std::abs(epipolar_residual(F, l.image_position, r.image_position)), 32.0);

  const auto m = match_left_right(v.left, v.right, F, rig);
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m[0].right_index, 0u);
  EXPECT_EQ(m[1].right_index, 1u);

  // Input order must not matter.
  std::vector<Detection2D> right_rev{v.right[1], v.right[0]};
  const auto m2 = match_left_right(v.left, right_rev, F, rig);
  ASSERT_EQ(m2.size(), 2u);
  EXPECT_EQ(m2[0].right_index, 1u);
  EXPECT_EQ(m2[1].right_index, 0u);
}

TEST(MatchLeftRight, EmptyRight)
{
  const auto rig = desk_rig();
  EXPECT_TRUE(match_left_right({det_at(0, {100, 100})}, {}, fundamental_matrix(rig), rig).empty());
}

TEST(MatchLeftRight, TypeAndCutoffGate)
{
  const auto rig = desk_rig();
  const Mat3 F = fundamental_matrix(rig);
  // Right detection 40 px off the epipolar line.
  EXPECT_TRUE(match_left_right({det_at(0, {640, 360})}, {det_at(0, {600, 400})}, F, rig).empty());
  // On the line but a different type.
  EXPECT_TRUE(match_left_right({det_at(0, {640, 360})}, {det_at(1, {600, 360})}, F, rig).empty());
  EXPECT_EQ(match_left_right({det_at(0, {640, 360})}, {det_at(0, {600, 370})}, F, rig).size(), 1u);
}

TEST(MatchLeftRight, OneToOneByResidual)
{
  const auto rig = desk_rig();
  const Mat3 F = fundamental_matrix(rig);
  // Two left detections competing for one right detection: the smaller
  // residual wins.
  const std::vector<Detection2D> left{det_at(0, {640, 365}), det_at(0, {700, 361})};
  const std::vector<Detection2D> right{det_at(0, {600, 360})};
  const auto m = match_left_right(left, right, F, rig);
  ASSERT_EQ(m.size(), 1u);
  EXPECT_EQ(m[0].left_index, 1u);
}

TEST(MatchLeftRight, SymmetricUnderSwap)
{
  std::mt19937_64 rng(17);
  const auto rig = desk_rig();
  const Mat3 F = fundamental_matrix(rig);
  const StereoRig swapped(rig.right, rig.left, rig.t_left_right.inverse());
  for (int trial = 0; trial < 100; ++trial) {
    const auto pose = look_at(kt::random_vec(rng, -0.3, 0.3) + Vec3(0, -0.6, 0.3), Vec3::Zero());
    std::vector<Vec3> pts;
    std::vector<int> types;
    for (int k = 0; k < 6; ++k) {
      pts.push_back(kt::random_vec(rng, -0.15, 0.15));
      types.push_back(k % 3);
    }
    const auto v = project_both(rig, pose, pts, types);
    std::set<std::pair<std::size_t, std::size_t>> forward, backward;
    for (const auto& s : match_left_right(v.left, v.right, F, rig))
      forward.insert({s.left_index, s.right_index});
    for (const auto& s : match_left_right(v.right, v.left, F.transpose(), swapped))
      backward.insert({s.right_index, s.left_index});
    EXPECT_EQ(forward, backward) << "trial " << trial;
  }
}

TEST(LiftStereo, RoundTripAndDegenerate)
{
  const auto rig = desk_rig();
  const auto pose = look_at(Vec3(0.1, -0.6, 0.2), Vec3::Zero());
  const Vec3 X(0.02, -0.03, 0.05);
  const auto v = project_both(rig, pose, {X}, {0});
  const Mat3 F = fundamental_matrix(rig);
  const auto Pl = make_projection(rig.left, pose);
  const auto Pr = make_projection(rig.right, rig.right_pose(pose));
  const auto m = match_left_right(v.left, v.right, F, rig);
  const auto pts = lift_stereo(m, Pl, Pr);
  ASSERT_EQ(pts.size(), 1u);
  ASSERT_TRUE(pts[0]);
  EXPECT_LT((*pts[0] - X).norm(), 1e-9);

  // Same camera twice: coincident centers.
  StereoMatch bogus = m[0];
  EXPECT_FALSE(lift_stereo({bogus}, Pl, Pl)[0]);
}

TEST(RunStereoFrame, EmptyMaps)
{
  const auto rig = desk_rig();
  FrameMaps maps{FloatMaps(3, 64, 64), FloatMaps(3, 64, 64, 2), {}, FrameMapping::center_crop(1280, 720)};
  StageTimings t;
  const auto report = run_stereo_frame(maps, maps, rig, RigidTransform::identity(),
                                       rig.right_pose(RigidTransform::identity()), 2, {}, &t);
  EXPECT_TRUE(report.objects.empty());
  EXPECT_EQ(report.orphan_keypoints, 0u);
  EXPECT_GE(t.total_ms(), 0.0);
}
