#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "kpt3d/errors.hpp"
#include "kpt3d/geometry.hpp"

namespace kpt3d {

// Calibration file, JSON, version 1:
//
//   {
//     "version": 1,
//     "left":  {"fx":..,"fy":..,"cx":..,"cy":..,"width":..,"height":..,"distortion":[..]},
//     "right": {...},
//     "t_left_right":  {"rotation": [9 numbers, row-major], "translation": [3]},
//     "t_wrist_camera": {"rotation": [...], "translation": [...]}
//   }
//
// Distortion arrays may be omitted; any nonzero coefficient is rejected
// because images are expected to be undistorted upstream.

struct Calibration
{
  StereoRig rig;
  RigidTransform t_wrist_camera;
};

inline constexpr int kCalibrationVersion = 1;

inline nlohmann::json to_json(const RigidTransform& T)
{
  nlohmann::json r = nlohmann::json::array();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      r.push_back(T.rotation()(i, j));
  return {{"rotation", r},
          {"translation", {T.translation().x(), T.translation().y(), T.translation().z()}}};
}

inline RigidTransform transform_from_json(const nlohmann::json& j)
{
  const auto& r = j.at("rotation");
  const auto& t = j.at("translation");
  if (r.size() != 9 || t.size() != 3)
    throw FormatError("transform needs 9 rotation and 3 translation values");
  Mat3 R;
  for (int i = 0; i < 9; ++i)
    R(i / 3, i % 3) = r.at(static_cast<std::size_t>(i)).get<double>();
  return {R, Vec3(t[0].get<double>(), t[1].get<double>(), t[2].get<double>())};
}

inline nlohmann::json to_json(const CameraIntrinsics& K)
{
  return {{"fx", K.fx}, {"fy", K.fy}, {"cx", K.cx}, {"cy", K.cy},
          {"width", K.width}, {"height", K.height}, {"distortion", nlohmann::json::array()}};
}

inline CameraIntrinsics intrinsics_from_json(const nlohmann::json& j)
{
  if (j.contains("distortion")) {
    for (const auto& d : j.at("distortion"))
      if (d.get<double>() != 0.0)
        throw FormatError("calibration: nonzero distortion coefficients are not supported; "
                          "undistort images before ingestion");
  }
  return {j.at("fx").get<double>(), j.at("fy").get<double>(), j.at("cx").get<double>(),
          j.at("cy").get<double>(), j.at("width").get<int>(), j.at("height").get<int>()};
}

inline nlohmann::json to_json(const Calibration& c)
{
  return {{"version", kCalibrationVersion},
          {"left", to_json(c.rig.left)},
          {"right", to_json(c.rig.right)},
          {"t_left_right", to_json(c.rig.t_left_right)},
          {"t_wrist_camera", to_json(c.t_wrist_camera)}};
}

inline Calibration calibration_from_json(const nlohmann::json& j)
{
  try {
    if (j.at("version").get<int>() != kCalibrationVersion)
      throw FormatError("calibration: unsupported version");
    Calibration c;
    c.rig = StereoRig(intrinsics_from_json(j.at("left")), intrinsics_from_json(j.at("right")),
                      transform_from_json(j.at("t_left_right")));
    if (j.contains("t_wrist_camera"))
      c.t_wrist_camera = transform_from_json(j.at("t_wrist_camera"));
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("calibration: ") + e.what());
  }
}

inline Calibration load_calibration(const std::filesystem::path& path)
{
  std::ifstream in(path);
  if (!in)
    throw NotFound("cannot open calibration file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return calibration_from_json(j);
}

inline void save_calibration(const std::filesystem::path& path, const Calibration& c)
{
  std::ofstream out(path);
  if (!out)
    throw Error("cannot write " + path.string());
  out << to_json(c).dump(2) << '\n';
}

}  // namespace kpt3d
