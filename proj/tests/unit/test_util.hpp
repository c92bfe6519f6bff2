#pragma once

#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

#include <Eigen/Geometry>

#include "kpt3d/geometry.hpp"

namespace kpt3d::testing {

inline Mat3 random_rotation(std::mt19937_64& rng)
{
  std::normal_distribution<double> n(0, 1);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  q.normalize();
  return q.toRotationMatrix();
}

inline Vec3 random_vec(std::mt19937_64& rng, double lo, double hi)
{
  std::uniform_real_distribution<double> u(lo, hi);
  return {u(rng), u(rng), u(rng)};
}

inline CameraIntrinsics random_intrinsics(std::mt19937_64& rng)
{
  std::uniform_real_distribution<double> f(400, 1200), d(-40, 40);
  const double fx = f(rng);
  return {fx, fx * (1 + d(rng) / 400), 640 + d(rng), 360 + d(rng), 1280, 720};
}

/// Camera-in-base pose at `eye` whose optical (z) axis points at `target`.
inline RigidTransform look_at(const Vec3& eye, const Vec3& target, const Vec3& up = Vec3::UnitZ())
{
  const Vec3 z = (target - eye).normalized();
  Vec3 x = z.cross(up);
  if (x.norm() < 1e-6)
    x = z.cross(Vec3::UnitX());
  x.normalize();
  const Vec3 y = z.cross(x);
  Mat3 R;
  R.col(0) = x;
  R.col(1) = y;
  R.col(2) = z;
  return {R, eye};
}

inline StereoRig random_rig(std::mt19937_64& rng)
{
  std::uniform_real_distribution<double> small(-0.05, 0.05), b(0.04, 0.2);
  Eigen::AngleAxisd aa(small(rng), random_vec(rng, -1, 1).normalized());
  return {random_intrinsics(rng), random_intrinsics(rng),
          RigidTransform(aa.toRotationMatrix(), Vec3(b(rng), small(rng), small(rng)))};
}

/// Fresh directory under the system temp dir, removed on destruction.
struct TempDir
{
  std::filesystem::path path;
  TempDir()
  {
    static int counter = 0;
    path = std::filesystem::temp_directory_path()
           / ("kpt3d_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace kpt3d::testing
