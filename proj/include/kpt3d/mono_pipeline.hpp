#pragma once

#include <cmath>
#include <vector>

#include "kpt3d/extraction.hpp"
#include "kpt3d/geometry.hpp"
#include "kpt3d/stereo_pipeline.hpp"
#include "kpt3d/tracking.hpp"

namespace kpt3d {

struct DepthReadout
{
  double z_hat = 0;  // meters
  int support_px = 0;
};

/// Heatmap-weighted mean depth over the window at the detection's peak,
/// restricted to pixels carrying a depth value.
inline DepthReadout read_depth(const FloatMaps& depth_map, const FloatMaps& heatmaps, const Detection2D& det,
                               int window_radius = 2)
{
  if (depth_map.channels() != heatmaps.channels() || depth_map.height() != heatmaps.height()
      || depth_map.width() != heatmaps.width())
    throw ShapeMismatch("read_depth: depth and heatmap shapes differ");
  const int c = det.type_index;
  const int i = static_cast<int>(std::lround(det.position.y()));
  const int j = static_cast<int>(std::lround(det.position.x()));
  double sw = 0, sz = 0;
  int support = 0;
  for (int ii = i - window_radius; ii <= i + window_radius; ++ii)
    for (int jj = j - window_radius; jj <= j + window_radius; ++jj) {
      if (!heatmaps.inside(ii, jj))
        continue;
      const double z = depth_map(c, ii, jj);
      if (!(z > 0))
        continue;
      const double w = heatmaps(c, ii, jj);
      sw += w;
      sz += w * z;
      ++support;
    }
  if (support == 0 || !(sw > 0))
    throw NoDepth("no depth support around detection of channel " + std::to_string(c));
  return {sz / sw, support};
}

/// X = T_BC (K⁻¹ x ẑ) for a full-image pixel x.
inline Vec3 lift_mono(const CameraIntrinsics& K, const Vec2& x, double z_hat, const RigidTransform& camera_in_base)
{
  if (!(z_hat > 0))
    throw InvalidDepth("lift_mono: depth must be positive");
  const Vec3 camera_point = K.inverse_matrix() * Vec3(x.x(), x.y(), 1.0) * z_hat;
  return camera_in_base * camera_point;
}

struct MonoFrameReport
{
  std::vector<TrackedObject3D> objects;
  std::size_t no_depth_keypoints = 0;
  std::size_t orphan_keypoints = 0;
};

/// Left-image-only tracking with the predicted depth maps.
inline MonoFrameReport run_mono_frame(const FrameMaps& maps, const CameraIntrinsics& K,
                                      const RigidTransform& camera_in_base, int center_channel,
                                      const StereoOptions& opt = {})
{
  MonoFrameReport report;
  const auto dets = extract_keypoints(maps.heatmaps, maps.center_field, maps.mapping, opt.extraction);
  const auto assoc = associate_to_objects(dets, center_channel, opt.gating_radius);
  report.orphan_keypoints = assoc.orphans.size();
  for (const auto& o : assoc.objects) {
    TrackedObject3D obj;
    try {
      obj.center = lift_mono(K, o.center.image_position, read_depth(maps.depth, maps.heatmaps, o.center).z_hat,
                             camera_in_base);
    } catch (const NoDepth&) {
      report.no_depth_keypoints += 1 + o.keypoints.size();
      continue;
    }
    for (const auto& d : o.keypoints) {
      try {
        const double z = read_depth(maps.depth, maps.heatmaps, d).z_hat;
        obj.keypoints.push_back({d.type_index, lift_mono(K, d.image_position, z, camera_in_base), Provenance::kMono});
      } catch (const NoDepth&) {
        ++report.no_depth_keypoints;
      }
    }
    report.objects.push_back(std::move(obj));
  }
  return report;
}

}  // namespace kpt3d
