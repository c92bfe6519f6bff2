#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <optional>
#include <vector>

#include "kpt3d/extraction.hpp"
#include "kpt3d/geometry.hpp"
#include "kpt3d/targets.hpp"
#include "kpt3d/tracking.hpp"

namespace kpt3d {

struct StereoMatch
{
  Detection2D left;
  Detection2D right;
  double epipolar_residual = 0;
  // Positions in the input lists.
  std::size_t left_index = 0;
  std::size_t right_index = 0;
};

struct StereoOptions
{
  double cutoff = 32.0;
  // Depth in front of the left camera whose disparity shifts the left point
  // when several right candidates pass the epipolar gate.
  double shift_depth = 0.60;
  double gating_radius = 16.0;
  ExtractionOptions extraction;
};

/// Pixel offset right - left of a point `depth` meters along the left
/// optical axis, or nullopt when it does not land in the right image.
inline std::optional<Vec2> disparity_shift(const StereoRig& rig, double depth)
{
  const auto Pr = make_projection(rig.right, rig.t_left_right);
  const auto xr = project(Pr, Vec3(0, 0, depth));
  if (!xr || !rig.right.contains(*xr))
    return std::nullopt;
  return *xr - Vec2(rig.left.cx, rig.left.cy);
}

/// One-to-one left/right association of same-type detections in full-image
/// pixels. Matches come out sorted by left index.
inline std::vector<StereoMatch> match_left_right(const std::vector<Detection2D>& left,
                                                 const std::vector<Detection2D>& right, const Mat3& F,
                                                 const StereoRig& rig, const StereoOptions& opt = {})
{
  const auto shift = disparity_shift(rig, opt.shift_depth);

  // Per left detection, gated candidates in preference order.
  struct Candidate
  {
    std::size_t right;
    double residual;
  };
  std::vector<std::vector<Candidate>> candidates(left.size());
  for (std::size_t i = 0; i < left.size(); ++i) {
    for (std::size_t j = 0; j < right.size(); ++j) {
      if (left[i].type_index != right[j].type_index)
        continue;
      const double r = epipolar_residual(F, left[i].image_position, right[j].image_position);
      if (std::abs(r) < opt.cutoff)
        candidates[i].push_back({j, r});
    }
    auto& c = candidates[i];
    if (c.size() > 1 && shift) {
      const Vec2 target = left[i].image_position + *shift;
      std::stable_sort(c.begin(), c.end(), [&](const Candidate& a, const Candidate& b) {
        return (right[a.right].image_position - target).squaredNorm()
               < (right[b.right].image_position - target).squaredNorm();
      });
    } else {
      std::stable_sort(c.begin(), c.end(), [](const Candidate& a, const Candidate& b) {
        return std::abs(a.residual) < std::abs(b.residual);
      });
    }
  }

  // Rounds of proposals; conflicts on a right detection resolved by
  // ascending |residual|, losers fall back to their next candidate.
  std::vector<std::size_t> next(left.size(), 0);
  std::vector<int> left_to_right(left.size(), -1);
  std::vector<bool> right_taken(right.size(), false);
  for (;;) {
    std::vector<std::pair<std::size_t, Candidate>> proposals;
    for (std::size_t i = 0; i < left.size(); ++i) {
      if (left_to_right[i] >= 0)
        continue;
      while (next[i] < candidates[i].size() && right_taken[candidates[i][next[i]].right])
        ++next[i];
      if (next[i] < candidates[i].size())
        proposals.emplace_back(i, candidates[i][next[i]]);
    }
    if (proposals.empty())
      break;
    std::stable_sort(proposals.begin(), proposals.end(), [](const auto& a, const auto& b) {
      return std::abs(a.second.residual) < std::abs(b.second.residual);
    });
    for (const auto& [i, c] : proposals) {
      if (right_taken[c.right]) {
        ++next[i];
        continue;
      }
      right_taken[c.right] = true;
      left_to_right[i] = static_cast<int>(c.right);
    }
  }

  std::vector<StereoMatch> out;
  for (std::size_t i = 0; i < left.size(); ++i)
    if (left_to_right[i] >= 0) {
      const auto& r = right[static_cast<std::size_t>(left_to_right[i])];
      out.push_back({left[i], r, epipolar_residual(F, left[i].image_position, r.image_position), i,
                     static_cast<std::size_t>(left_to_right[i])});
    }
  return out;
}

/// DLT per match; nullopt where the geometry is degenerate.
inline std::vector<std::optional<Vec3>> lift_stereo(const std::vector<StereoMatch>& matches,
                                                    const ProjectionMatrix& left_P, const ProjectionMatrix& right_P)
{
  std::vector<std::optional<Vec3>> out;
  out.reserve(matches.size());
  for (const auto& m : matches) {
    try {
      const std::vector<Observation> obs{{left_P, m.left.image_position}, {right_P, m.right.image_position}};
      out.emplace_back(triangulate_dlt(obs));
    } catch (const DegenerateGeometry&) {
      out.emplace_back(std::nullopt);
    }
  }
  return out;
}

/// Network-resolution maps of one image plus the crop/scale that produced
/// them.
struct FrameMaps
{
  FloatMaps heatmaps;
  FloatMaps center_field;
  FloatMaps depth;  // may be empty for the stereo pipeline
  FrameMapping mapping;
};

struct StageTimings
{
  double extraction_ms = 0;
  double object_association_ms = 0;
  double left_right_ms = 0;
  double triangulation_ms = 0;

  double total_ms() const { return extraction_ms + object_association_ms + left_right_ms + triangulation_ms; }
};

struct StereoFrameReport
{
  std::vector<TrackedObject3D> objects;
  std::size_t unmatched_keypoints = 0;
  std::size_t orphan_keypoints = 0;
  std::size_t unpaired_objects = 0;
};

namespace detail {

using Clock = std::chrono::steady_clock;

inline double elapsed_ms(Clock::time_point since)
{
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

inline bool in_front(const RigidTransform& camera_in_base, const Vec3& X)
{
  return X.allFinite() && (camera_in_base.inverse() * X).z() > 0;
}

}  // namespace detail

/// Extraction, per-image grouping, center-first left/right pairing and
/// triangulation of one stereo frame.
inline StereoFrameReport run_stereo_frame(const FrameMaps& left_maps, const FrameMaps& right_maps,
                                          const StereoRig& rig, const RigidTransform& left_pose,
                                          const RigidTransform& right_pose, int center_channel,
                                          const StereoOptions& opt = {}, StageTimings* timings = nullptr)
{
  using detail::Clock;
  StereoFrameReport report;

  auto t0 = Clock::now();
  const auto left_dets = extract_keypoints(left_maps.heatmaps, left_maps.center_field, left_maps.mapping,
                                           opt.extraction);
  const auto right_dets = extract_keypoints(right_maps.heatmaps, right_maps.center_field, right_maps.mapping,
                                            opt.extraction);
  if (timings)
    timings->extraction_ms += detail::elapsed_ms(t0);

  t0 = Clock::now();
  const auto left_objs = associate_to_objects(left_dets, center_channel, opt.gating_radius);
  const auto right_objs = associate_to_objects(right_dets, center_channel, opt.gating_radius);
  report.orphan_keypoints = left_objs.orphans.size() + right_objs.orphans.size();
  if (timings)
    timings->object_association_ms += detail::elapsed_ms(t0);

  t0 = Clock::now();
  const Mat3 F = fundamental_matrix(rig);
  std::vector<Detection2D> left_centers, right_centers;
  for (const auto& o : left_objs.objects)
    left_centers.push_back(o.center);
  for (const auto& o : right_objs.objects)
    right_centers.push_back(o.center);
  const auto center_matches = match_left_right(left_centers, right_centers, F, rig, opt);

  // Object pairs with their keypoint matches.
  struct ObjectPair
  {
    StereoMatch center;
    std::vector<StereoMatch> keypoints;
  };
  std::vector<ObjectPair> pairs;
  for (const auto& cm : center_matches) {
    const auto& lo = left_objs.objects[cm.left_index];
    const auto& ro = right_objs.objects[cm.right_index];
    auto kms = match_left_right(lo.keypoints, ro.keypoints, F, rig, opt);
    report.unmatched_keypoints += lo.keypoints.size() - kms.size();
    pairs.push_back({cm, std::move(kms)});
  }
  report.unpaired_objects = left_objs.objects.size() + right_objs.objects.size() - 2 * center_matches.size();
  if (timings)
    timings->left_right_ms += detail::elapsed_ms(t0);

  t0 = Clock::now();
  const auto Pl = make_projection(rig.left, left_pose);
  const auto Pr = make_projection(rig.right, right_pose);
  for (const auto& pair : pairs) {
    const auto center = lift_stereo({pair.center}, Pl, Pr).front();
    if (!center || !detail::in_front(left_pose, *center))
      continue;
    TrackedObject3D obj;
    obj.center = *center;
    const auto points = lift_stereo(pair.keypoints, Pl, Pr);
    for (std::size_t k = 0; k < points.size(); ++k) {
      if (points[k] && detail::in_front(left_pose, *points[k]))
        obj.keypoints.push_back({pair.keypoints[k].left.type_index, *points[k], Provenance::kStereo});
      else
        ++report.unmatched_keypoints;
    }
    report.objects.push_back(std::move(obj));
  }
  if (timings)
    timings->triangulation_ms += detail::elapsed_ms(t0);
  return report;
}

}  // namespace kpt3d
