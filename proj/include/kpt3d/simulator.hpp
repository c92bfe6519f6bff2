#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Geometry>
#include <nlohmann/json.hpp>

#include "kpt3d/dataset.hpp"
#include "kpt3d/mono_pipeline.hpp"
#include "kpt3d/stereo_pipeline.hpp"
#include "kpt3d/tracking.hpp"

namespace kpt3d {

// Synthetic scenes: a valve (hub plus three indistinguishable spokes) or a
// group of cups on a table, watched by a stereo camera moving on an arc.
// Base frame has z up; objects sit near the origin.

enum class SceneKind
{
  kValve,
  kCups,
};

inline const char* to_string(SceneKind k) { return k == SceneKind::kCups ? "cups" : "valve"; }

inline SceneKind scene_kind_from_string(const std::string& s)
{
  if (s == "valve")
    return SceneKind::kValve;
  if (s == "cups")
    return SceneKind::kCups;
  throw Error("unknown scene kind '" + s + "' (expected valve or cups)");
}

inline CategorySpec valve_category() { return {"valve", {"hub", "spoke"}, {false, true}}; }

inline CategorySpec cup_category() { return {"cup", {"bottom", "top", "handle"}, {false, false, false}}; }

struct SceneConfig
{
  SceneKind kind = SceneKind::kValve;
  int objects = 1;  // cups only; 0 picks 1..4 at random

  double duration = 30.0;  // s
  double rate = 14.5;      // Hz

  // Camera. Resolution and baseline follow a typical wrist stereo camera;
  // the focal length is an assumption.
  double fx = 700;
  int width = 1280;
  int height = 720;
  double baseline = 0.063;

  // Range of camera distance to the scene center, meters.
  double min_distance = 0.4;
  double max_distance = 1.0;

  // Error of the recorded poses relative to the true ones.
  double pose_noise_rotation = 0;     // rad, per axis
  double pose_noise_translation = 0;  // m, per axis

  void validate() const
  {
    if (!(duration > 0 && rate > 0))
      throw Error("scene: duration and rate must be positive");
    if (!(fx > 0 && width > 0 && height > 0 && baseline > 0))
      throw Error("scene: invalid camera");
    if (!(min_distance > 0 && max_distance > min_distance))
      throw Error("scene: invalid distance range");
    if (objects < 0 || objects > 4)
      throw Error("scene: cups count must be in 0..4");
    if (pose_noise_rotation < 0 || pose_noise_translation < 0)
      throw Error("scene: negative pose noise");
  }
};

/// splitmix64 step, used to derive independent child seeds.
inline std::uint64_t mix_seed(std::uint64_t x)
{
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline StereoRig scene_rig(const SceneConfig& c)
{
  const CameraIntrinsics K(c.fx, c.fx, c.width / 2.0, c.height / 2.0, c.width, c.height);
  return {K, K, RigidTransform(Mat3::Identity(), Vec3(c.baseline, 0, 0))};
}

namespace detail {

inline ObjectInstance make_valve(std::mt19937_64& rng)
{
  // Hub on the axis, spokes on a ring 4 cm above it (the side facing the
  // cameras). Axis tilted up to 20 degrees from vertical.
  std::uniform_real_distribution<double> u(0, 1);
  const double tilt = 0.35 * u(rng), tilt_dir = 2 * std::numbers::pi * u(rng);
  const double spin = 2 * std::numbers::pi * u(rng) / 3;
  const Mat3 R = (Eigen::AngleAxisd(tilt, Vec3(std::cos(tilt_dir), std::sin(tilt_dir), 0))
                  * Eigen::AngleAxisd(spin, Vec3::UnitZ()))
                     .toRotationMatrix();
  const Vec3 origin(0.05 * (u(rng) - 0.5), 0.05 * (u(rng) - 0.5), 0);
  const double radius = 0.09 + 0.03 * u(rng);
  ObjectInstance v{"valve", {}};
  v.keypoints.push_back({0, origin});
  for (int k = 0; k < 3; ++k) {
    const double a = 2 * std::numbers::pi * k / 3;
    v.keypoints.push_back({1, origin + R * Vec3(radius * std::cos(a), radius * std::sin(a), 0.04)});
  }
  return v;
}

inline std::vector<ObjectInstance> make_cups(std::mt19937_64& rng, int count)
{
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<Vec2> spots;
  while (static_cast<int>(spots.size()) < count) {
    const Vec2 p(0.26 * (u(rng) - 0.5), 0.26 * (u(rng) - 0.5));
    bool ok = true;
    for (const auto& q : spots)
      ok = ok && (p - q).norm() > 0.11;
    if (ok)
      spots.push_back(p);
  }
  std::vector<ObjectInstance> cups;
  for (const auto& p : spots) {
    const double height = 0.08 + 0.04 * u(rng);
    const double reach = 0.05 + 0.02 * u(rng);
    const double yaw = 2 * std::numbers::pi * u(rng);
    ObjectInstance c{"cup", {}};
    c.keypoints.push_back({0, Vec3(p.x(), p.y(), 0)});
    c.keypoints.push_back({1, Vec3(p.x(), p.y(), height)});
    c.keypoints.push_back({2, Vec3(p.x() + reach * std::cos(yaw), p.y() + reach * std::sin(yaw), 0.55 * height)});
    cups.push_back(c);
  }
  return cups;
}

inline RigidTransform perturb(const RigidTransform& T, std::mt19937_64& rng, double rot, double trans)
{
  if (rot == 0 && trans == 0)
    return T;
  std::normal_distribution<double> n(0, 1);
  const Vec3 w(rot * n(rng), rot * n(rng), rot * n(rng));
  const Mat3 dR = w.norm() > 0 ? Mat3(Eigen::AngleAxisd(w.norm(), w.normalized())) : Mat3(Mat3::Identity());
  return RigidTransform(dR * T.rotation(), T.translation() + Vec3(trans * n(rng), trans * n(rng), trans * n(rng)));
}

/// Camera-in-base pose at `eye` looking at `target`, image y pointing
/// away from base z.
inline RigidTransform look_at(const Vec3& eye, const Vec3& target)
{
  const Vec3 z = (target - eye).normalized();
  Vec3 x = z.cross(Vec3::UnitZ());
  if (x.norm() < 1e-9)
    x = Vec3::UnitX();
  x.normalize();
  Mat3 R;
  R << x, z.cross(x), z;
  return {R, eye};
}

}  // namespace detail

struct SimulatedSequence
{
  SequenceDataset truth;     // true poses; labels are the scene objects
  SequenceDataset recorded;  // poses as the robot would report them
};

/// Deterministic given (config, seed). The left camera sweeps 200 degrees
/// of azimuth around the scene while its distance and elevation oscillate.
inline SimulatedSequence simulate_sequence(const SceneConfig& config, std::uint64_t seed, const std::string& id = {})
{
  config.validate();
  std::mt19937_64 rng(mix_seed(seed));
  std::uniform_real_distribution<double> u(0, 1);

  SequenceDataset seq;
  seq.id = id.empty() ? std::string(to_string(config.kind)) + "-" + std::to_string(seed) : id;
  seq.calibration = {scene_rig(config), RigidTransform(Mat3::Identity(), Vec3(0, 0, 0.05))};
  if (config.kind == SceneKind::kValve) {
    seq.category = valve_category();
    seq.labels = {detail::make_valve(rng)};
  } else {
    seq.category = cup_category();
    const int n = config.objects > 0 ? config.objects : 1 + static_cast<int>(u(rng) * 4) % 4;
    seq.labels = detail::make_cups(rng, n);
  }
  Vec3 scene_center = Vec3::Zero();
  for (const auto& o : seq.labels)
    scene_center += o.center();
  scene_center /= static_cast<double>(seq.labels.size());

  const auto rig = seq.rig();
  const int frames = static_cast<int>(std::floor(config.duration * config.rate));
  const double az0 = 2 * std::numbers::pi * u(rng);
  const double phase_d = 2 * std::numbers::pi * u(rng), phase_e = 2 * std::numbers::pi * u(rng);
  const double mid = 0.5 * (config.min_distance + config.max_distance);
  const double amp = 0.5 * (config.max_distance - config.min_distance);
  std::normal_distribution<double> wobble(0, 0.01);
  for (int k = 0; k < frames; ++k) {
    const double s = k / std::max(1.0, frames - 1.0);
    const double az = az0 + s * 200.0 * std::numbers::pi / 180.0;
    const double elev = (45.0 + 15.0 * std::sin(2 * std::numbers::pi * 1.5 * s + phase_e)) * std::numbers::pi / 180.0;
    const double dist = mid + amp * std::sin(2 * std::numbers::pi * 2.0 * s + phase_d);
    const Vec3 eye = scene_center
                     + dist * Vec3(std::cos(elev) * std::cos(az), std::cos(elev) * std::sin(az), std::sin(elev));
    const Vec3 target = scene_center + Vec3(wobble(rng), wobble(rng), wobble(rng));
    // Aim the stereo pair's midpoint, not the left camera, at the target.
    const RigidTransform aim = detail::look_at(eye, target);
    const RigidTransform left(aim.rotation(), eye - aim.rotation() * (0.5 * rig.t_left_right.translation()));
    Frame f;
    f.timestamp = k / config.rate;
    f.left_pose = left;
    f.right_pose = rig.right_pose(left);
    seq.frames.push_back(f);
  }

  SimulatedSequence out{seq, seq};
  std::mt19937_64 pose_rng(mix_seed(seed ^ 0x706f7365ULL));
  for (auto& f : out.recorded.frames) {
    f.left_pose = detail::perturb(f.left_pose, pose_rng, config.pose_noise_rotation, config.pose_noise_translation);
    f.right_pose = rig.right_pose(f.left_pose);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ground-truth maps

struct GtMapOptions
{
  GenerateOptions generate;
  // Store maps with this many bits per value (0: keep float). Depth is
  // quantized over [0, depth_range] m.
  int quantize_bits = 0;
  double depth_range = 2.0;
};

inline void quantize(FloatMaps& maps, double lo, double hi, int bits)
{
  if (bits <= 0)
    return;
  const double levels = std::ldexp(1.0, bits) - 1;
  for (std::size_t n = 0; n < maps.size(); ++n) {
    const double v = std::clamp(static_cast<double>(maps.data()[n]), lo, hi);
    maps.data()[n] = static_cast<float>(lo + std::round((v - lo) / (hi - lo) * levels) / levels * (hi - lo));
  }
}

/// Maps as a perfect network would predict them for one image.
inline FrameMaps gt_frame_maps(const SequenceDataset& truth, std::size_t frame, Camera camera,
                               const GtMapOptions& opt = {})
{
  auto maps = frame_maps(truth, frame, camera, opt.generate);
  if (opt.quantize_bits > 0) {
    quantize(maps.heatmaps, 0, 1, opt.quantize_bits);
    quantize(maps.depth, 0, opt.depth_range, opt.quantize_bits);
  }
  return maps;
}

// ---------------------------------------------------------------------------
// Evaluation

struct MetricsReport
{
  double mean_3d = 0;  // cm
  double xy_mean = 0;  // cm, left-camera depth component removed
  double pct_under_3cm = 0;
  double p25 = 0;  // cm
  double p75 = 0;  // cm
  std::size_t matched = 0;
  std::size_t misses = 0;           // visible truth keypoints without a prediction
  std::size_t false_positives = 0;  // predictions without a truth keypoint in the gate
  std::size_t frames = 0;
  StageTimings timings;  // per-frame means, ms; zero unless filled by the caller

  nlohmann::json to_json() const
  {
    return {{"mean_3d_cm", mean_3d},
            {"xy_mean_cm", xy_mean},
            {"pct_under_3cm", pct_under_3cm},
            {"p25_cm", p25},
            {"p75_cm", p75},
            {"matched", matched},
            {"misses", misses},
            {"false_positives", false_positives},
            {"frames", frames},
            {"timings_ms",
             {{"extraction", timings.extraction_ms},
              {"object_association", timings.object_association_ms},
              {"left_right_association", timings.left_right_ms},
              {"triangulation", timings.triangulation_ms}}}};
  }
};

/// Linear interpolation between closest ranks, q in [0, 1].
inline double percentile(std::vector<double> v, double q)
{
  if (v.empty())
    return 0;
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct EvalOptions
{
  double gate = 0.10;  // m
};

/// Per-keypoint errors of one frame: greedy nearest pairs within type.
struct FrameErrors
{
  std::vector<Vec3> errors;  // predicted - truth, base frame
  std::size_t misses = 0;
  std::size_t false_positives = 0;
};

/// Truth keypoints (non-center) that project inside the left image.
inline std::vector<LabeledKeypoint> visible_truth(const SequenceDataset& truth, std::size_t frame)
{
  const auto P = truth.projection(frame, Camera::kLeft);
  const auto& K = truth.intrinsics(Camera::kLeft);
  std::vector<LabeledKeypoint> out;
  for (const auto& o : truth.labels)
    for (const auto& kp : o.keypoints) {
      const auto x = project(P, kp.position);
      if (x && K.contains(*x))
        out.push_back(kp);
    }
  return out;
}

inline FrameErrors match_frame(const std::vector<Keypoint3D>& predicted, const std::vector<LabeledKeypoint>& truth,
                               double gate)
{
  struct Pair
  {
    double d;
    std::size_t p, t;
  };
  std::vector<Pair> pairs;
  for (std::size_t p = 0; p < predicted.size(); ++p)
    for (std::size_t t = 0; t < truth.size(); ++t)
      if (predicted[p].type_index == truth[t].type_index) {
        const double d = (predicted[p].position - truth[t].position).norm();
        if (d < gate)
          pairs.push_back({d, p, t});
      }
  std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) { return a.d < b.d; });
  std::vector<bool> p_used(predicted.size()), t_used(truth.size());
  FrameErrors out;
  for (const auto& pr : pairs) {
    if (p_used[pr.p] || t_used[pr.t])
      continue;
    p_used[pr.p] = t_used[pr.t] = true;
    out.errors.push_back(predicted[pr.p].position - truth[pr.t].position);
  }
  out.misses = static_cast<std::size_t>(std::count(t_used.begin(), t_used.end(), false));
  out.false_positives = static_cast<std::size_t>(std::count(p_used.begin(), p_used.end(), false));
  return out;
}

namespace detail {

struct MetricsAccumulator
{
  std::vector<double> err, xy;  // cm
  MetricsReport report;

  void add(const std::vector<FrameResult>& predicted, const SequenceDataset& truth, const EvalOptions& opt)
  {
    std::vector<const FrameResult*> by_frame(truth.frames.size(), nullptr);
    for (const auto& f : predicted) {
      if (f.frame < 0 || static_cast<std::size_t>(f.frame) >= truth.frames.size())
        throw Error("evaluate: predicted frame " + std::to_string(f.frame) + " not in sequence " + truth.id);
      if (by_frame[static_cast<std::size_t>(f.frame)])
        throw Error("evaluate: duplicate frame " + std::to_string(f.frame));
      by_frame[static_cast<std::size_t>(f.frame)] = &f;
    }
    for (std::size_t k = 0; k < truth.frames.size(); ++k) {
      std::vector<Keypoint3D> pred;
      if (by_frame[k])
        for (const auto& o : by_frame[k]->objects)
          pred.insert(pred.end(), o.keypoints.begin(), o.keypoints.end());
      const auto fe = match_frame(pred, visible_truth(truth, k), opt.gate);
      const Vec3 axis = truth.frames[k].left_pose.rotation().col(2);
      for (const auto& e : fe.errors) {
        err.push_back(100 * e.norm());
        xy.push_back(100 * (e - e.dot(axis) * axis).norm());
      }
      report.misses += fe.misses;
      report.false_positives += fe.false_positives;
    }
    report.frames += truth.frames.size();
  }

  MetricsReport finish() const
  {
    MetricsReport r = report;
    r.matched = err.size();
    if (err.empty())
      return r;
    double sum = 0, sxy = 0;
    std::size_t under = 0;
    for (std::size_t n = 0; n < err.size(); ++n) {
      sum += err[n];
      sxy += xy[n];
      under += err[n] < 3.0 ? 1 : 0;
    }
    const auto n = static_cast<double>(err.size());
    r.mean_3d = sum / n;
    r.xy_mean = sxy / n;
    r.pct_under_3cm = 100.0 * static_cast<double>(under) / n;
    r.p25 = percentile(err, 0.25);
    r.p75 = percentile(err, 0.75);
    return r;
  }
};

}  // namespace detail

/// Metrics of a predicted stream against the truth sequence. Every truth
/// frame counts; frames absent from `predicted` contribute only misses.
inline MetricsReport evaluate(const std::vector<FrameResult>& predicted, const SequenceDataset& truth,
                              const EvalOptions& opt = {})
{
  detail::MetricsAccumulator acc;
  acc.add(predicted, truth, opt);
  return acc.finish();
}

/// Metrics over several sequences with errors pooled.
inline MetricsReport evaluate_many(const std::vector<std::vector<FrameResult>>& predicted,
                                   const std::vector<const SequenceDataset*>& truth, const EvalOptions& opt = {})
{
  if (predicted.size() != truth.size())
    throw Error("evaluate_many: prediction and truth counts differ");
  detail::MetricsAccumulator acc;
  for (std::size_t s = 0; s < truth.size(); ++s)
    acc.add(predicted[s], *truth[s], opt);
  return acc.finish();
}

// ---------------------------------------------------------------------------
// Running the pipelines over a simulated sequence

enum class TrackMode
{
  kStereo,
  kMono,
};

inline TrackMode track_mode_from_string(const std::string& s)
{
  if (s == "stereo")
    return TrackMode::kStereo;
  if (s == "mono")
    return TrackMode::kMono;
  throw Error("unknown mode '" + s + "' (expected stereo or mono)");
}

/// Tracks every frame of `recorded` from the given per-frame maps source.
template <typename MapsSource>
std::vector<FrameResult> track_sequence(const SequenceDataset& recorded, MapsSource&& maps_of, TrackMode mode,
                                        const StereoOptions& opt = {}, StageTimings* timings = nullptr)
{
  std::vector<FrameResult> out;
  const int center = recorded.category.center_channel();
  for (std::size_t k = 0; k < recorded.frames.size(); ++k) {
    FrameResult fr{static_cast<long>(k), {}};
    const FrameMaps left = maps_of(k, Camera::kLeft);
    if (mode == TrackMode::kStereo) {
      const FrameMaps right = maps_of(k, Camera::kRight);
      fr.objects = run_stereo_frame(left, right, recorded.rig(), recorded.frames[k].left_pose,
                                    recorded.frames[k].right_pose, center, opt, timings)
                       .objects;
    } else {
      fr.objects = run_mono_frame(left, recorded.intrinsics(Camera::kLeft), recorded.frames[k].left_pose, center, opt)
                       .objects;
    }
    out.push_back(std::move(fr));
  }
  return out;
}

/// Mean per-stage stereo timings over the given frames, single-threaded.
inline StageTimings bench_stages(const std::vector<std::pair<FrameMaps, FrameMaps>>& frames, const StereoRig& rig,
                                 const std::vector<Frame>& poses, int center_channel, const StereoOptions& opt = {})
{
  if (frames.size() != poses.size())
    throw Error("bench_stages: maps and poses differ in length");
  StageTimings sum;
  for (std::size_t k = 0; k < frames.size(); ++k)
    run_stereo_frame(frames[k].first, frames[k].second, rig, poses[k].left_pose, poses[k].right_pose, center_channel,
                     opt, &sum);
  if (frames.empty())
    return sum;
  const double n = static_cast<double>(frames.size());
  return {sum.extraction_ms / n, sum.object_association_ms / n, sum.left_right_ms / n, sum.triangulation_ms / n};
}

}  // namespace kpt3d
