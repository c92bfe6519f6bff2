#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <vector>

#include <Eigen/Dense>

#include "kpt3d/errors.hpp"

namespace kpt3d {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;
using Mat34 = Eigen::Matrix<double, 3, 4>;

/// Undistorted pinhole intrinsics. Pixel coordinates put the center of
/// pixel (i, j) at (x = j, y = i).
struct CameraIntrinsics
{
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;

  CameraIntrinsics() = default;
  CameraIntrinsics(double fx_, double fy_, double cx_, double cy_, int width_, int height_)
    : fx(fx_), fy(fy_), cx(cx_), cy(cy_), width(width_), height(height_)
  {
    if (!(fx > 0 && fy > 0))
      throw Error("intrinsics: focal lengths must be positive");
    if (!(cx > 0 && cx < width && cy > 0 && cy < height))
      throw Error("intrinsics: principal point must lie inside the sensor");
  }

  Mat3 matrix() const
  {
    Mat3 K;
    K << fx, 0, cx, 0, fy, cy, 0, 0, 1;
    return K;
  }

  Mat3 inverse_matrix() const
  {
    Mat3 Kinv;
    Kinv << 1 / fx, 0, -cx / fx, 0, 1 / fy, -cy / fy, 0, 0, 1;
    return Kinv;
  }

  bool contains(const Vec2& x) const
  {
    return x.x() >= 0 && x.y() >= 0 && x.x() < width && x.y() < height;
  }
};

/// Proper rigid motion x -> R x + t.
class RigidTransform
{
public:
  RigidTransform() : rotation_(Mat3::Identity()), translation_(Vec3::Zero()) {}

  RigidTransform(const Mat3& rotation, const Vec3& translation)
    : rotation_(rotation), translation_(translation)
  {
    constexpr double tol = 1e-9;
    if ((rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff() > tol
        || std::abs(rotation.determinant() - 1.0) > tol)
      throw Error("rigid transform: rotation is not orthonormal with det +1");
    if (!translation.allFinite())
      throw Error("rigid transform: translation is not finite");
  }

  static RigidTransform identity() { return {}; }

  const Mat3& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }

  Vec3 operator*(const Vec3& x) const { return rotation_ * x + translation_; }

  RigidTransform operator*(const RigidTransform& rhs) const
  {
    RigidTransform out;
    out.rotation_ = rotation_ * rhs.rotation_;
    out.translation_ = rotation_ * rhs.translation_ + translation_;
    return out;
  }

  RigidTransform inverse() const
  {
    RigidTransform out;
    out.rotation_ = rotation_.transpose();
    out.translation_ = -(out.rotation_ * translation_);
    return out;
  }

  Eigen::Matrix4d matrix() const
  {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = rotation_;
    m.topRightCorner<3, 1>() = translation_;
    return m;
  }

private:
  Mat3 rotation_;
  Vec3 translation_;
};

inline RigidTransform compose(const RigidTransform& a, const RigidTransform& b) { return a * b; }

/// Stereo pair; `t_left_right` is the pose of the right camera expressed in
/// the left camera frame.
struct StereoRig
{
  CameraIntrinsics left;
  CameraIntrinsics right;
  RigidTransform t_left_right;

  StereoRig() = default;
  StereoRig(CameraIntrinsics l, CameraIntrinsics r, RigidTransform lr)
    : left(l), right(r), t_left_right(lr)
  {
    if (!(t_left_right.translation().norm() > 0))
      throw DegenerateGeometry("stereo rig: zero baseline");
  }

  double baseline() const { return t_left_right.translation().norm(); }

  /// Pose of the right camera in the base frame given the left one.
  RigidTransform right_pose(const RigidTransform& left_camera_in_base) const
  {
    return left_camera_in_base * t_left_right;
  }
};

/// 3x4 camera matrix mapping homogeneous base-frame points to pixels.
class ProjectionMatrix
{
public:
  explicit ProjectionMatrix(const Mat34& P) : P_(P)
  {
    const double det = P_.leftCols<3>().determinant();
    if (!std::isfinite(det) || std::abs(det) < 1e-300)
      throw DegenerateGeometry("projection matrix: left 3x3 block is singular");
    det_sign_ = det > 0 ? 1.0 : -1.0;
  }

  const Mat34& matrix() const { return P_; }

  /// Camera center in the base frame (right null vector of P).
  Vec3 center() const { return -P_.leftCols<3>().lu().solve(P_.col(3)); }

  /// Signed depth factor of X; positive for points in front of the camera.
  double depth_sign_factor(const Vec3& X) const
  {
    return det_sign_ * (P_.row(2).head<3>().dot(X) + P_(2, 3));
  }

private:
  Mat34 P_;
  double det_sign_ = 1.0;
};

/// P = K [R | t] with (R, t) the base-to-camera motion, i.e. the inverse of
/// the camera-in-base pose.
inline ProjectionMatrix make_projection(const CameraIntrinsics& K,
                                        const RigidTransform& camera_in_base)
{
  const RigidTransform base_in_camera = camera_in_base.inverse();
  Mat34 Rt;
  Rt.leftCols<3>() = base_in_camera.rotation();
  Rt.col(3) = base_in_camera.translation();
  return ProjectionMatrix(K.matrix() * Rt);
}

/// Pixel coordinates of X, or nullopt when X is not strictly in front of the
/// camera.
inline std::optional<Vec2> project(const ProjectionMatrix& P, const Vec3& X)
{
  const Vec3 h = P.matrix().leftCols<3>() * X + P.matrix().col(3);
  if (!(P.depth_sign_factor(X) > 0))
    return std::nullopt;
  return Vec2(h.x() / h.z(), h.y() / h.z());
}

/// Unit ray through pixel x in the camera frame.
inline Vec3 backproject_ray(const CameraIntrinsics& K, const Vec2& x)
{
  return (K.inverse_matrix() * Vec3(x.x(), x.y(), 1.0)).normalized();
}

inline Mat3 skew(const Vec3& v)
{
  Mat3 S;
  S << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return S;
}

/// F with x_rightᵀ F x_left = 0 for corresponding raw pixel coordinates.
///
/// F is scaled so that the epipolar line of the left principal point has a
/// unit normal; the residual x'ᵀFx then approximates the point-to-line
/// distance in right-image pixels.
inline Mat3 fundamental_matrix(const StereoRig& rig)
{
  const RigidTransform left_to_right = rig.t_left_right.inverse();
  const Vec3& t = left_to_right.translation();
  if (!(t.norm() > 0))
    throw DegenerateGeometry("fundamental matrix: zero baseline");
  Mat3 F = rig.right.inverse_matrix().transpose() * skew(t) * left_to_right.rotation()
           * rig.left.inverse_matrix();
  const Vec3 line = F * Vec3(rig.left.cx, rig.left.cy, 1.0);
  const double n = line.head<2>().norm();
  F /= n > 1e-12 * F.norm() ? n : F.norm();
  return F;
}

inline double epipolar_residual(const Mat3& F, const Vec2& left, const Vec2& right)
{
  return Vec3(right.x(), right.y(), 1.0).dot(F * Vec3(left.x(), left.y(), 1.0));
}

struct Observation
{
  ProjectionMatrix P;
  Vec2 pixel;
};

/// Homogeneous DLT: two rows per view from x × (P X) = 0, each row scaled to
/// unit norm, solved by SVD.
inline Vec3 triangulate_dlt(std::span<const Observation> observations)
{
  const auto n = static_cast<Eigen::Index>(observations.size());
  if (n < 2)
    throw DegenerateGeometry("triangulation needs at least two observations");

  const Vec3 c0 = observations.front().P.center();
  bool distinct = false;
  for (const auto& o : observations)
    distinct = distinct || (o.P.center() - c0).norm() > 1e-12;
  if (!distinct)
    throw DegenerateGeometry("triangulation: coincident projection centers");

  Eigen::MatrixXd A(2 * n, 4);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& o = observations[static_cast<std::size_t>(i)];
    const Mat34& P = o.P.matrix();
    A.row(2 * i) = o.pixel.x() * P.row(2) - P.row(0);
    A.row(2 * i + 1) = o.pixel.y() * P.row(2) - P.row(1);
    for (Eigen::Index r = 2 * i; r < 2 * i + 2; ++r) {
      const double norm = A.row(r).norm();
      if (norm > 0)
        A.row(r) /= norm;
    }
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const Eigen::VectorXd s = svd.singularValues();
  if (s(2) <= 1e-12 * s(0))
    throw DegenerateGeometry("triangulation: rank-deficient system (parallel rays)");
  const Vec4 X = svd.matrixV().col(3);
  if (std::abs(X(3)) < 1e-12)
    throw DegenerateGeometry("triangulation: point at infinity");
  return X.head<3>() / X(3);
}

inline Vec3 triangulate_dlt(const std::vector<Observation>& observations)
{
  return triangulate_dlt(std::span<const Observation>(observations));
}

/// Per-view reprojection distance in pixels; infinity when the
/// point is behind a view.
inline std::vector<double> reprojection_errors(std::span<const Observation> observations,
                                               const Vec3& X)
{
  std::vector<double> out;
  out.reserve(observations.size());
  for (const auto& o : observations) {
    const auto x = project(o.P, X);
    out.push_back(x ? (*x - o.pixel).norm() : std::numeric_limits<double>::infinity());
  }
  return out;
}

}  // namespace kpt3d
