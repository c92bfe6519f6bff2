#pragma once

#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <set>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "kpt3d/dataset.hpp"
#include "kpt3d/errors.hpp"
#include "kpt3d/losses.hpp"
#include "kpt3d/simulator.hpp"
#include "kpt3d/stereo_pipeline.hpp"

namespace kpt3d {

inline constexpr const char* kVersion = "0.1.0";

// Run configuration. The JSON file mirrors these groups; any key not
// listed here is rejected.
struct Config
{
  std::uint64_t seed = 0;
  TrackMode mode = TrackMode::kStereo;
  std::string category_file;  // optional CategorySpec JSON for labeling

  struct Scene
  {
    SceneConfig sim;
    int sequences = 5;
    int test_sequences = 5;  // the last N of `sequences` are tagged test
  } scene;

  struct Targets
  {
    TargetOptions maps;
    double pixel_noise = 0;  // image px, simulated prediction noise
    unsigned threads = 0;
  } targets;

  StereoOptions tracking;
  EvalOptions eval;
  LossWeights loss;  // placeholders, see losses.hpp

  struct Service
  {
    std::string host = "127.0.0.1";
    int port = 8080;
  } service;

  void validate() const
  {
    auto positive = [](double v, const char* name) {
      if (!(v > 0))
        throw Error(std::string("config: ") + name + " must be positive");
    };
    scene.sim.validate();
    if (scene.sequences < 1 || scene.test_sequences < 0 || scene.test_sequences > scene.sequences)
      throw Error("config: scene.sequences must be >= 1 and scene.test_sequences in [0, sequences]");
    positive(targets.maps.sigma, "targets.sigma");
    positive(targets.maps.depth_radius, "targets.depth_radius");
    if (targets.pixel_noise < 0)
      throw Error("config: targets.pixel_noise must be nonnegative");
    positive(tracking.extraction.threshold, "tracking.threshold");
    positive(tracking.cutoff, "tracking.epipolar_cutoff");
    positive(tracking.gating_radius, "tracking.gating_radius");
    positive(tracking.shift_depth, "tracking.shift_depth");
    positive(eval.gate, "eval.gate");
    loss.validate();
    if (service.port < 0 || service.port > 65535)
      throw Error("config: service.port out of range");
  }

  nlohmann::json to_json() const
  {
    const auto& s = scene.sim;
    return {
        {"seed", seed},
        {"mode", mode == TrackMode::kMono ? "mono" : "stereo"},
        {"category_file", category_file},
        {"scene",
         {{"kind", to_string(s.kind)},
          {"objects", s.objects},
          {"duration", s.duration},
          {"rate", s.rate},
          {"fx", s.fx},
          {"width", s.width},
          {"height", s.height},
          {"baseline", s.baseline},
          {"min_distance", s.min_distance},
          {"max_distance", s.max_distance},
          {"pose_noise_rotation", s.pose_noise_rotation},
          {"pose_noise_translation", s.pose_noise_translation},
          {"sequences", scene.sequences},
          {"test_sequences", scene.test_sequences}}},
        {"targets",
         {{"sigma", targets.maps.sigma},
          {"depth_radius", targets.maps.depth_radius},
          {"pixel_noise", targets.pixel_noise},
          {"threads", targets.threads}}},
        {"tracking",
         {{"threshold", tracking.extraction.threshold},
          {"epipolar_cutoff", tracking.cutoff},
          {"gating_radius", tracking.gating_radius},
          {"shift_depth", tracking.shift_depth}}},
        {"eval", {{"gate", eval.gate}}},
        {"loss", {{"lambda_h", loss.lambda_h}, {"lambda_c", loss.lambda_c}, {"lambda_d", loss.lambda_d}}},
        {"service", {{"host", service.host}, {"port", service.port}}},
    };
  }
};

namespace detail {

template <typename T>
void read_key(const nlohmann::json& obj, const char* key, T& out, const std::string& where)
{
  if (!obj.contains(key))
    return;
  try {
    out = obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error("config: wrong type for key '" + where + key + "'");
  }
}

inline void reject_unknown(const nlohmann::json& obj, const std::set<std::string>& known, const std::string& where)
{
  if (!obj.is_object())
    throw Error("config: '" + (where.empty() ? std::string("<root>") : where.substr(0, where.size() - 1))
                + "' must be an object");
  for (const auto& [key, value] : obj.items())
    if (!known.count(key))
      throw Error("config: unknown key '" + where + key + "'");
}

}  // namespace detail

/// Overlays the keys present in `j` onto `base`.
inline Config config_from_json(const nlohmann::json& j, Config base = {})
{
  using detail::read_key;
  using detail::reject_unknown;
  reject_unknown(j, {"seed", "mode", "category_file", "scene", "targets", "tracking", "eval", "loss", "service"}, "");
  Config c = std::move(base);
  read_key(j, "seed", c.seed, "");
  if (j.contains("mode")) {
    std::string m;
    read_key(j, "mode", m, "");
    c.mode = track_mode_from_string(m);
  }
  read_key(j, "category_file", c.category_file, "");
  if (j.contains("scene")) {
    const auto& s = j["scene"];
    reject_unknown(s,
                   {"kind", "objects", "duration", "rate", "fx", "width", "height", "baseline", "min_distance",
                    "max_distance", "pose_noise_rotation", "pose_noise_translation", "sequences", "test_sequences"},
                   "scene.");
    if (s.contains("kind")) {
      std::string k;
      read_key(s, "kind", k, "scene.");
      c.scene.sim.kind = scene_kind_from_string(k);
    }
    auto& sim = c.scene.sim;
    read_key(s, "objects", sim.objects, "scene.");
    read_key(s, "duration", sim.duration, "scene.");
    read_key(s, "rate", sim.rate, "scene.");
    read_key(s, "fx", sim.fx, "scene.");
    read_key(s, "width", sim.width, "scene.");
    read_key(s, "height", sim.height, "scene.");
    read_key(s, "baseline", sim.baseline, "scene.");
    read_key(s, "min_distance", sim.min_distance, "scene.");
    read_key(s, "max_distance", sim.max_distance, "scene.");
    read_key(s, "pose_noise_rotation", sim.pose_noise_rotation, "scene.");
    read_key(s, "pose_noise_translation", sim.pose_noise_translation, "scene.");
    read_key(s, "sequences", c.scene.sequences, "scene.");
    read_key(s, "test_sequences", c.scene.test_sequences, "scene.");
  }
  if (j.contains("targets")) {
    const auto& t = j["targets"];
    reject_unknown(t, {"sigma", "depth_radius", "pixel_noise", "threads"}, "targets.");
    read_key(t, "sigma", c.targets.maps.sigma, "targets.");
    read_key(t, "depth_radius", c.targets.maps.depth_radius, "targets.");
    read_key(t, "pixel_noise", c.targets.pixel_noise, "targets.");
    read_key(t, "threads", c.targets.threads, "targets.");
  }
  if (j.contains("tracking")) {
    const auto& t = j["tracking"];
    reject_unknown(t, {"threshold", "epipolar_cutoff", "gating_radius", "shift_depth"}, "tracking.");
    read_key(t, "threshold", c.tracking.extraction.threshold, "tracking.");
    read_key(t, "epipolar_cutoff", c.tracking.cutoff, "tracking.");
    read_key(t, "gating_radius", c.tracking.gating_radius, "tracking.");
    read_key(t, "shift_depth", c.tracking.shift_depth, "tracking.");
  }
  if (j.contains("eval")) {
    reject_unknown(j["eval"], {"gate"}, "eval.");
    read_key(j["eval"], "gate", c.eval.gate, "eval.");
  }
  if (j.contains("loss")) {
    const auto& l = j["loss"];
    reject_unknown(l, {"lambda_h", "lambda_c", "lambda_d"}, "loss.");
    read_key(l, "lambda_h", c.loss.lambda_h, "loss.");
    read_key(l, "lambda_c", c.loss.lambda_c, "loss.");
    read_key(l, "lambda_d", c.loss.lambda_d, "loss.");
  }
  if (j.contains("service")) {
    const auto& s = j["service"];
    reject_unknown(s, {"host", "port"}, "service.");
    read_key(s, "host", c.service.host, "service.");
    read_key(s, "port", c.service.port, "service.");
  }
  c.validate();
  return c;
}

inline Config load_config(const std::filesystem::path& path)
{
  return config_from_json(read_json_file(path));
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view bytes)
{
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// "kpt3d <version> config=<hash> seed=<seed>", hash over the canonical
/// JSON form of the full configuration.
inline std::string reproducibility_stamp(const Config& c)
{
  std::ostringstream os;
  os << "kpt3d " << kVersion << " config=" << std::hex << std::setw(16) << std::setfill('0')
     << fnv1a(c.to_json().dump()) << std::dec << " seed=" << c.seed;
  return os.str();
}

}  // namespace kpt3d
