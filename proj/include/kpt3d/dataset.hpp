#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Geometry>
#include <nlohmann/json.hpp>

#include "kpt3d/calibration.hpp"
#include "kpt3d/errors.hpp"
#include "kpt3d/geometry.hpp"
#include "kpt3d/stereo_pipeline.hpp"
#include "kpt3d/targets.hpp"
#include "kpt3d/tensor.hpp"

namespace kpt3d {

struct LabeledKeypoint
{
  int type_index = 0;
  Vec3 position = Vec3::Zero();  // base frame, meters
};

/// One labeled object. Only the typed keypoints are stored; the center is
/// always derived from them.
struct ObjectInstance
{
  std::string category;
  std::vector<LabeledKeypoint> keypoints;

  Vec3 center() const
  {
    if (keypoints.empty())
      throw Error("object has no keypoints");
    Vec3 sum = Vec3::Zero();
    for (const auto& kp : keypoints)
      sum += kp.position;
    return sum / static_cast<double>(keypoints.size());
  }
};

enum class Split
{
  kTrain,
  kTest,
};

inline const char* to_string(Split s) { return s == Split::kTest ? "test" : "train"; }

inline Split split_from_string(const std::string& s)
{
  if (s == "train")
    return Split::kTrain;
  if (s == "test")
    return Split::kTest;
  throw FormatError("unknown split '" + s + "'");
}

struct Frame
{
  double timestamp = 0;  // seconds
  RigidTransform left_pose;   // camera in base
  RigidTransform right_pose;  // camera in base
  std::string left_image;     // empty for pose-only sequences
  std::string right_image;
};

enum class Camera
{
  kLeft,
  kRight,
};

inline const char* to_string(Camera c) { return c == Camera::kLeft ? "left" : "right"; }

struct SequenceDataset
{
  std::string id;
  Split split = Split::kTrain;
  Calibration calibration;
  CategorySpec category;
  std::vector<Frame> frames;
  std::vector<ObjectInstance> labels;

  const StereoRig& rig() const { return calibration.rig; }

  const CameraIntrinsics& intrinsics(Camera c) const { return c == Camera::kLeft ? rig().left : rig().right; }

  const RigidTransform& pose(std::size_t frame, Camera c) const
  {
    const auto& f = frames.at(frame);
    return c == Camera::kLeft ? f.left_pose : f.right_pose;
  }

  ProjectionMatrix projection(std::size_t frame, Camera c) const
  {
    return make_projection(intrinsics(c), pose(frame, c));
  }

  FrameMapping mapping(Camera c) const
  {
    const auto& K = intrinsics(c);
    return FrameMapping::center_crop(K.width, K.height);
  }

  void validate() const
  {
    for (std::size_t k = 1; k < frames.size(); ++k)
      if (!(frames[k].timestamp > frames[k - 1].timestamp))
        throw FormatError("sequence " + id + ": timestamps not strictly increasing at frame "
                          + std::to_string(k));
    for (const auto& o : labels)
      for (const auto& kp : o.keypoints)
        if (kp.type_index < 0 || kp.type_index >= static_cast<int>(category.keypoint_types.size()))
          throw FormatError("sequence " + id + ": label keypoint type out of range");
  }
};

// ---------------------------------------------------------------------------
// Pose association

struct StampedPose
{
  double timestamp = 0;
  RigidTransform pose;
};

/// Pose at time t from a sorted stream: linear in translation, slerp in
/// rotation. nullopt when t is farther than `tolerance` from every sample.
inline std::optional<RigidTransform> interpolate_pose(const std::vector<StampedPose>& stream, double t,
                                                      double tolerance = 0.020)
{
  if (stream.empty())
    return std::nullopt;
  const auto hi = std::lower_bound(stream.begin(), stream.end(), t,
                                   [](const StampedPose& p, double v) { return p.timestamp < v; });
  double nearest = std::numeric_limits<double>::infinity();
  if (hi != stream.end())
    nearest = std::min(nearest, hi->timestamp - t);
  if (hi != stream.begin())
    nearest = std::min(nearest, t - std::prev(hi)->timestamp);
  if (nearest > tolerance)
    return std::nullopt;
  if (hi == stream.end())
    return std::prev(hi)->pose;
  if (hi == stream.begin() || hi->timestamp == t)
    return hi->pose;
  const auto& a = *std::prev(hi);
  const auto& b = *hi;
  const double s = (t - a.timestamp) / (b.timestamp - a.timestamp);
  const Eigen::Quaterniond qa(a.pose.rotation()), qb(b.pose.rotation());
  Mat3 R = qa.slerp(s, qb).normalized().toRotationMatrix();
  return RigidTransform(R, (1 - s) * a.pose.translation() + s * b.pose.translation());
}

/// Builds frames for image timestamps from a left-camera pose stream; images
/// without a pose inside the tolerance window are dropped with a warning.
inline std::vector<Frame> associate_poses(const std::vector<StampedPose>& left_stream,
                                          const std::vector<double>& image_timestamps, const StereoRig& rig,
                                          double tolerance = 0.020, std::vector<std::string>* warnings = nullptr)
{
  std::vector<Frame> frames;
  for (double t : image_timestamps) {
    const auto pose = interpolate_pose(left_stream, t, tolerance);
    if (!pose) {
      if (warnings) {
        std::ostringstream os;
        os << "dropping image at t=" << std::setprecision(9) << t << ": no pose within "
           << tolerance * 1000 << " ms";
        warnings->push_back(os.str());
      }
      continue;
    }
    frames.push_back({t, *pose, rig.right_pose(*pose), {}, {}});
  }
  return frames;
}

// ---------------------------------------------------------------------------
// File formats

// Poses file, text:
//   # kpt3d poses v1
//   <timestamp> <left R row-major: 9> <left t: 3> <right R: 9> <right t: 3> [<left image> <right image>]

inline constexpr const char* kPosesHeader = "# kpt3d poses v1";

inline void write_poses(std::ostream& os, const std::vector<Frame>& frames)
{
  os << kPosesHeader << '\n' << std::setprecision(17);
  auto put = [&os](const RigidTransform& T) {
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        os << ' ' << T.rotation()(i, j);
    for (int i = 0; i < 3; ++i)
      os << ' ' << T.translation()(i);
  };
  for (const auto& f : frames) {
    os << f.timestamp;
    put(f.left_pose);
    put(f.right_pose);
    if (!f.left_image.empty() || !f.right_image.empty())
      os << ' ' << f.left_image << ' ' << f.right_image;
    os << '\n';
  }
}

inline std::vector<Frame> read_poses(std::istream& is)
{
  std::string line;
  if (!std::getline(is, line) || line != kPosesHeader)
    throw FormatError("poses file: missing or unsupported header");
  std::vector<Frame> frames;
  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#')
      continue;
    std::istringstream ls(line);
    Frame f;
    auto get = [&ls, line_no]() {
      Mat3 R;
      Vec3 t;
      for (int i = 0; i < 9; ++i)
        ls >> R(i / 3, i % 3);
      for (int i = 0; i < 3; ++i)
        ls >> t(i);
      if (!ls)
        throw FormatError("poses file line " + std::to_string(line_no) + ": expected 12 pose values");
      try {
        return RigidTransform(R, t);
      } catch (const Error& e) {
        throw FormatError("poses file line " + std::to_string(line_no) + ": " + e.what());
      }
    };
    if (!(ls >> f.timestamp))
      throw FormatError("poses file line " + std::to_string(line_no) + ": missing timestamp");
    f.left_pose = get();
    f.right_pose = get();
    ls >> f.left_image >> f.right_image;
    frames.push_back(std::move(f));
  }
  return frames;
}

inline constexpr int kLabelsVersion = 1;

inline nlohmann::json labels_to_json(const CategorySpec& category, const std::vector<ObjectInstance>& objects)
{
  nlohmann::json objs = nlohmann::json::array();
  for (const auto& o : objects) {
    nlohmann::json kps = nlohmann::json::array();
    for (const auto& kp : o.keypoints)
      kps.push_back({{"type", category.keypoint_types.at(static_cast<std::size_t>(kp.type_index))},
                     {"position", {kp.position.x(), kp.position.y(), kp.position.z()}}});
    const Vec3 c = o.center();
    objs.push_back({{"category", o.category}, {"keypoints", kps}, {"center", {c.x(), c.y(), c.z()}}});
  }
  return {{"version", kLabelsVersion}, {"category", to_json(category)}, {"objects", objs}};
}

struct LabelsFile
{
  CategorySpec category;
  std::vector<ObjectInstance> objects;
};

/// The stored "center" is informational; it is recomputed on load.
inline LabelsFile labels_from_json(const nlohmann::json& j)
{
  try {
    if (j.at("version").get<int>() != kLabelsVersion)
      throw FormatError("labels: unsupported version");
    LabelsFile out{category_from_json(j.at("category")), {}};
    for (const auto& o : j.at("objects")) {
      ObjectInstance inst;
      inst.category = o.value("category", out.category.name);
      for (const auto& kp : o.at("keypoints")) {
        const auto& p = kp.at("position");
        inst.keypoints.push_back({out.category.type_index(kp.at("type").get<std::string>()),
                                  Vec3(p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>())});
      }
      if (inst.keypoints.empty())
        throw FormatError("labels: object without keypoints");
      out.objects.push_back(std::move(inst));
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("labels: ") + e.what());
  }
}

/// Write-then-rename so readers never observe a partial file.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content)
{
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out.write(content.data(), static_cast<std::streamsize>(content.size())))
      throw Error("cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline void save_labels(const std::filesystem::path& path, const CategorySpec& category,
                        const std::vector<ObjectInstance>& objects)
{
  write_file_atomic(path, labels_to_json(category, objects).dump(2) + "\n");
}

inline nlohmann::json read_json_file(const std::filesystem::path& path)
{
  std::ifstream in(path);
  if (!in)
    throw NotFound("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

// Sequence directory:
//   sequence.json     {"version": 1, "id": ..., "split": "train"|"test"}
//   calibration.json  see calibration.hpp
//   poses.txt         see above
//   labels.json       {"version": 1, "category": {...}, "objects": [...]}
//   targets/          generated tensors and manifest.json

inline constexpr int kSequenceVersion = 1;

inline void save_sequence(const std::filesystem::path& dir, const SequenceDataset& seq)
{
  std::filesystem::create_directories(dir);
  write_file_atomic(dir / "sequence.json",
                    nlohmann::json{{"version", kSequenceVersion}, {"id", seq.id}, {"split", to_string(seq.split)}}
                            .dump(2)
                        + "\n");
  write_file_atomic(dir / "calibration.json", to_json(seq.calibration).dump(2) + "\n");
  std::ostringstream poses;
  write_poses(poses, seq.frames);
  write_file_atomic(dir / "poses.txt", poses.str());
  save_labels(dir / "labels.json", seq.category, seq.labels);
}

inline SequenceDataset load_sequence(const std::filesystem::path& dir)
{
  if (!std::filesystem::is_directory(dir))
    throw NotFound("sequence directory not found: " + dir.string());
  SequenceDataset seq;
  const auto meta = read_json_file(dir / "sequence.json");
  if (meta.value("version", 0) != kSequenceVersion)
    throw FormatError(dir.string() + ": unsupported sequence version");
  seq.id = meta.at("id").get<std::string>();
  seq.split = split_from_string(meta.value("split", std::string("train")));
  seq.calibration = load_calibration(dir / "calibration.json");
  std::ifstream poses(dir / "poses.txt");
  if (!poses)
    throw NotFound("missing poses.txt in " + dir.string());
  seq.frames = read_poses(poses);
  if (std::filesystem::exists(dir / "labels.json")) {
    auto labels = labels_from_json(read_json_file(dir / "labels.json"));
    seq.category = std::move(labels.category);
    seq.labels = std::move(labels.objects);
  }
  seq.validate();
  return seq;
}

// ---------------------------------------------------------------------------
// Labeling

struct ViewPair
{
  std::size_t frame_a = 0;
  std::size_t frame_b = 0;
  double abs_cos = 1;  // |z_a · z_b| of the left optical axes
  bool degenerate = false;
};

/// Frame indices considered for view selection: all of them, or an even
/// subsample when there are more than `max_candidates`.
inline std::vector<std::size_t> view_candidates(std::size_t frame_count, std::size_t max_candidates = 200)
{
  std::vector<std::size_t> out;
  if (frame_count <= max_candidates) {
    for (std::size_t k = 0; k < frame_count; ++k)
      out.push_back(k);
    return out;
  }
  for (std::size_t k = 0; k < max_candidates; ++k)
    out.push_back(k * (frame_count - 1) / (max_candidates - 1));
  return out;
}

inline double optical_axis_abs_cos(const SequenceDataset& seq, std::size_t a, std::size_t b)
{
  return std::abs(seq.frames[a].left_pose.rotation().col(2).dot(seq.frames[b].left_pose.rotation().col(2)));
}

/// The pair of (subsampled) frames whose left optical axes are closest to
/// perpendicular.
inline ViewPair select_label_views(const SequenceDataset& seq, std::size_t max_candidates = 200)
{
  if (seq.frames.size() < 2)
    throw Error("sequence " + seq.id + ": need at least two frames to label");
  const auto cand = view_candidates(seq.frames.size(), max_candidates);
  ViewPair best{cand[0], cand[1], 2.0, false};
  for (std::size_t x = 0; x < cand.size(); ++x)
    for (std::size_t y = x + 1; y < cand.size(); ++y) {
      const double c = optical_axis_abs_cos(seq, cand[x], cand[y]);
      if (c < best.abs_cos)
        best = {cand[x], cand[y], c, false};
    }
  best.degenerate = best.abs_cos > 1.0 - 1e-9;
  return best;
}

/// Candidate partners for a fixed frame, most perpendicular first.
inline std::vector<std::size_t> ranked_partners(const SequenceDataset& seq, std::size_t fixed,
                                                std::size_t max_candidates = 200)
{
  std::vector<std::size_t> out;
  for (auto k : view_candidates(seq.frames.size(), max_candidates))
    if (k != fixed)
      out.push_back(k);
  std::stable_sort(out.begin(), out.end(), [&](std::size_t a, std::size_t b) {
    return optical_axis_abs_cos(seq, fixed, a) < optical_axis_abs_cos(seq, fixed, b);
  });
  return out;
}

/// Clicked position of one keypoint in the two labeling frames (left
/// images, full-image pixels).
struct ClickPair
{
  int type_index = 0;
  Vec2 a = Vec2::Zero();
  Vec2 b = Vec2::Zero();
};

struct KeypointTriangulationError : DegenerateGeometry
{
  KeypointTriangulationError(std::size_t index, const std::string& what)
    : DegenerateGeometry("keypoint " + std::to_string(index) + ": " + what), keypoint_index(index)
  {}
  std::size_t keypoint_index;
};

struct Label2D
{
  int type_index = 0;  // center keypoint uses the center channel
  Vec2 pixel = Vec2::Zero();
  bool visible = false;
};

/// Projects the object's keypoints and center into one image.
inline std::vector<Label2D> project_labels(const SequenceDataset& seq, const ObjectInstance& object,
                                           std::size_t frame, Camera camera)
{
  const auto P = seq.projection(frame, camera);
  const auto& K = seq.intrinsics(camera);
  std::vector<Label2D> out;
  auto add = [&](int type, const Vec3& X) {
    const auto x = project(P, X);
    out.push_back({type, x.value_or(Vec2(std::nan(""), std::nan(""))), x && K.contains(*x)});
  };
  for (const auto& kp : object.keypoints)
    add(kp.type_index, kp.position);
  add(seq.category.center_channel(), object.center());
  return out;
}

struct Propagation
{
  ObjectInstance object;
  std::vector<double> residual_a;  // px, per keypoint
  std::vector<double> residual_b;
  std::vector<std::vector<Label2D>> frames;  // left-image labels for every frame
};

inline Propagation propagate_labels(const SequenceDataset& seq, std::size_t frame_a, std::size_t frame_b,
                                    const std::vector<ClickPair>& clicks)
{
  if (frame_a >= seq.frames.size() || frame_b >= seq.frames.size())
    throw Error("propagate_labels: frame index out of range");
  const auto Pa = seq.projection(frame_a, Camera::kLeft);
  const auto Pb = seq.projection(frame_b, Camera::kLeft);
  Propagation out;
  out.object.category = seq.category.name;
  for (std::size_t k = 0; k < clicks.size(); ++k) {
    const std::vector<Observation> obs{{Pa, clicks[k].a}, {Pb, clicks[k].b}};
    Vec3 X;
    try {
      X = triangulate_dlt(obs);
    } catch (const DegenerateGeometry& e) {
      throw KeypointTriangulationError(k, e.what());
    }
    const auto res = reprojection_errors(obs, X);
    out.residual_a.push_back(res[0]);
    out.residual_b.push_back(res[1]);
    out.object.keypoints.push_back({clicks[k].type_index, X});
  }
  if (out.object.keypoints.empty())
    throw Error("propagate_labels: no clicks");
  out.frames.reserve(seq.frames.size());
  for (std::size_t f = 0; f < seq.frames.size(); ++f)
    out.frames.push_back(project_labels(seq, out.object, f, Camera::kLeft));
  return out;
}

// ---------------------------------------------------------------------------
// Target generation

struct GenerateOptions
{
  TargetOptions targets;
  // Gaussian perturbation of every projected keypoint, full-image pixels.
  double pixel_noise = 0;
  std::uint64_t seed = 0;
  unsigned threads = 0;  // 0: hardware concurrency
};

/// Map keypoints and output-map object centers of all labeled objects in
/// one image.
inline std::pair<std::vector<MapKeypoint>, std::vector<Vec2>>
frame_keypoints(const SequenceDataset& seq, std::size_t frame, Camera camera, const GenerateOptions& opt = {},
                std::vector<std::string>* warnings = nullptr)
{
  const auto P = seq.projection(frame, camera);
  const auto base_in_camera = seq.pose(frame, camera).inverse();
  const auto mapping = seq.mapping(camera);
  std::mt19937_64 rng(opt.seed ^ (0x9e3779b97f4a7c15ULL * (2 * frame + (camera == Camera::kRight ? 1 : 0) + 1)));
  std::normal_distribution<double> noise(0.0, opt.pixel_noise > 0 ? opt.pixel_noise : 1.0);
  auto jitter = [&]() { return opt.pixel_noise > 0 ? Vec2(noise(rng), noise(rng)) : Vec2(Vec2::Zero()); };

  std::vector<MapKeypoint> kps;
  std::vector<Vec2> centers;
  for (std::size_t o = 0; o < seq.labels.size(); ++o) {
    const auto& obj = seq.labels[o];
    const Vec3 c3 = obj.center();
    const auto c2 = project(P, c3);
    if (!c2) {
      if (warnings)
        warnings->push_back("frame " + std::to_string(frame) + ": object " + std::to_string(o)
                            + " is behind the " + to_string(camera) + " camera");
      continue;
    }
    const int object_index = static_cast<int>(centers.size());
    const Vec2 center_px = mapping.to_output(*c2 + jitter());
    centers.push_back(center_px);
    kps.push_back({seq.category.center_channel(), center_px, object_index, (base_in_camera * c3).z()});
    for (const auto& kp : obj.keypoints) {
      const auto x = project(P, kp.position);
      if (!x)
        continue;
      kps.push_back({kp.type_index, mapping.to_output(*x + jitter()), object_index,
                     (base_in_camera * kp.position).z()});
    }
  }
  return {std::move(kps), std::move(centers)};
}

inline TargetMaps frame_targets(const SequenceDataset& seq, std::size_t frame, Camera camera,
                                const GenerateOptions& opt = {}, std::vector<std::string>* warnings = nullptr)
{
  const auto [kps, centers] = frame_keypoints(seq, frame, camera, opt, warnings);
  return render_targets(kps, centers, seq.category, opt.targets, warnings);
}

inline FrameMaps frame_maps(const SequenceDataset& seq, std::size_t frame, Camera camera,
                            const GenerateOptions& opt = {})
{
  auto t = frame_targets(seq, frame, camera, opt);
  return {std::move(t.heatmaps), std::move(t.center_field), std::move(t.depth), seq.mapping(camera)};
}

inline std::string tensor_name(std::size_t frame, Camera camera, MapKind kind)
{
  std::ostringstream os;
  os << std::setw(6) << std::setfill('0') << frame << '_' << to_string(camera) << '_' << to_string(kind) << ".kpt";
  return os.str();
}

inline constexpr int kManifestVersion = 1;

/// Renders and writes heatmap, center-field and depth tensors for both
/// cameras of every frame, then the manifest. Frames run in parallel; the
/// output bytes do not depend on the thread count.
inline nlohmann::json generate_dataset(const SequenceDataset& seq, const std::filesystem::path& out_dir,
                                       const GenerateOptions& opt = {}, const std::string& stamp = {},
                                       std::vector<std::string>* warnings = nullptr)
{
  std::filesystem::create_directories(out_dir);
  if (seq.labels.empty() && warnings)
    warnings->push_back("sequence " + seq.id + " has no labels; all maps will be zero");

  const std::size_t n = seq.frames.size();
  std::vector<std::vector<std::string>> frame_warnings(n);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&]() {
    for (std::size_t f = next++; f < n; f = next++) {
      try {
        for (Camera cam : {Camera::kLeft, Camera::kRight}) {
          const auto t = frame_targets(seq, f, cam, opt, &frame_warnings[f]);
          write_tensor(out_dir / tensor_name(f, cam, MapKind::kHeatmap), t.heatmaps, MapKind::kHeatmap);
          write_tensor(out_dir / tensor_name(f, cam, MapKind::kCenterField), t.center_field, MapKind::kCenterField);
          write_tensor(out_dir / tensor_name(f, cam, MapKind::kDepth), t.depth, MapKind::kDepth);
        }
      } catch (const std::exception& e) {
        std::lock_guard lock(failure_mutex);
        if (!failure)
          failure = std::make_exception_ptr(Error("frame " + std::to_string(f) + ": " + e.what()));
        next = n;
      }
    }
  };
  const unsigned threads = std::max(1u, std::min<unsigned>(opt.threads ? opt.threads : std::thread::hardware_concurrency(),
                                                           static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t)
      pool.emplace_back(worker);
  }
  if (failure)
    std::rethrow_exception(failure);
  if (warnings)
    for (auto& w : frame_warnings)
      warnings->insert(warnings->end(), w.begin(), w.end());

  nlohmann::json frames = nlohmann::json::array();
  for (std::size_t f = 0; f < n; ++f) {
    nlohmann::json entry{{"index", f}, {"timestamp", seq.frames[f].timestamp}};
    for (Camera cam : {Camera::kLeft, Camera::kRight})
      entry[to_string(cam)] = {{"heatmap", tensor_name(f, cam, MapKind::kHeatmap)},
                               {"center", tensor_name(f, cam, MapKind::kCenterField)},
                               {"depth", tensor_name(f, cam, MapKind::kDepth)}};
    frames.push_back(std::move(entry));
  }
  nlohmann::json manifest{{"version", kManifestVersion},
                          {"sequence", seq.id},
                          {"stamp", stamp},
                          {"category", to_json(seq.category)},
                          {"mapping", {{"left", to_json(seq.mapping(Camera::kLeft))},
                                       {"right", to_json(seq.mapping(Camera::kRight))}}},
                          {"targets", {{"height", opt.targets.height},
                                       {"width", opt.targets.width},
                                       {"sigma", opt.targets.sigma},
                                       {"depth_radius", opt.targets.depth_radius},
                                       {"pixel_noise", opt.pixel_noise}}},
                          {"frames", std::move(frames)}};
  write_file_atomic(out_dir / "manifest.json", manifest.dump(2) + "\n");
  return manifest;
}

/// Reads one image's maps back from a generated target directory.
inline FrameMaps load_frame_maps(const std::filesystem::path& target_dir, const nlohmann::json& manifest,
                                 std::size_t frame, Camera camera)
{
  const auto& entry = manifest.at("frames").at(frame).at(to_string(camera));
  FrameMaps maps;
  maps.heatmaps = read_tensor(target_dir / entry.at("heatmap").get<std::string>(), MapKind::kHeatmap);
  maps.center_field = read_tensor(target_dir / entry.at("center").get<std::string>(), MapKind::kCenterField);
  maps.depth = read_tensor(target_dir / entry.at("depth").get<std::string>(), MapKind::kDepth);
  maps.mapping = mapping_from_json(manifest.at("mapping").at(to_string(camera)));
  return maps;
}

}  // namespace kpt3d
