#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "kpt3d/errors.hpp"
#include "kpt3d/geometry.hpp"

namespace kpt3d {

enum class Provenance : std::uint8_t
{
  kStereo = 0,
  kMono = 1,
};

struct Keypoint3D
{
  int type_index = 0;
  Vec3 position = Vec3::Zero();  // base frame, meters
  Provenance provenance = Provenance::kStereo;
};

struct TrackedObject3D
{
  Vec3 center = Vec3::Zero();
  std::vector<Keypoint3D> keypoints;
};

struct FrameResult
{
  long frame = 0;
  std::vector<TrackedObject3D> objects;
};

// Results stream, text. Lines starting with '#' are comments (the first one
// carries the run stamp). One object per line:
//
//   <frame> <object> <cx> <cy> <cz> <n> { <type> <x> <y> <z> <stereo|mono> } x n
//
// Frames without objects produce no lines. Coordinates are meters in the
// robot base frame, printed with 17 significant digits.

inline const char* to_string(Provenance p) { return p == Provenance::kMono ? "mono" : "stereo"; }

inline void write_results(std::ostream& os, const std::vector<FrameResult>& frames, const std::string& stamp = {})
{
  os << "# kpt3d results v1";
  if (!stamp.empty())
    os << ' ' << stamp;
  os << '\n' << std::setprecision(17);
  for (const auto& f : frames)
    for (std::size_t k = 0; k < f.objects.size(); ++k) {
      const auto& o = f.objects[k];
      os << f.frame << ' ' << k << ' ' << o.center.x() << ' ' << o.center.y() << ' ' << o.center.z() << ' '
         << o.keypoints.size();
      for (const auto& kp : o.keypoints)
        os << ' ' << kp.type_index << ' ' << kp.position.x() << ' ' << kp.position.y() << ' '
           << kp.position.z() << ' ' << to_string(kp.provenance);
      os << '\n';
    }
}

/// Parses a results stream; frames are returned in ascending id order.
inline std::vector<FrameResult> read_results(std::istream& is)
{
  std::map<long, FrameResult> frames;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#')
      continue;
    std::istringstream ls(line);
    long frame = 0;
    std::size_t object = 0, n = 0;
    TrackedObject3D o;
    if (!(ls >> frame >> object >> o.center.x() >> o.center.y() >> o.center.z() >> n))
      throw FormatError("results line " + std::to_string(line_no) + ": malformed object header");
    for (std::size_t k = 0; k < n; ++k) {
      Keypoint3D kp;
      std::string prov;
      if (!(ls >> kp.type_index >> kp.position.x() >> kp.position.y() >> kp.position.z() >> prov)
          || (prov != "stereo" && prov != "mono"))
        throw FormatError("results line " + std::to_string(line_no) + ": malformed keypoint");
      kp.provenance = prov == "mono" ? Provenance::kMono : Provenance::kStereo;
      o.keypoints.push_back(kp);
    }
    auto& f = frames[frame];
    f.frame = frame;
    if (object != f.objects.size())
      throw FormatError("results line " + std::to_string(line_no) + ": object index out of order");
    f.objects.push_back(std::move(o));
  }
  std::vector<FrameResult> out;
  for (auto& [id, f] : frames)
    out.push_back(std::move(f));
  return out;
}

inline void save_results(const std::filesystem::path& path, const std::vector<FrameResult>& frames,
                         const std::string& stamp = {})
{
  std::ofstream out(path);
  if (!out)
    throw Error("cannot write results file " + path.string());
  write_results(out, frames, stamp);
}

inline std::vector<FrameResult> load_results(const std::filesystem::path& path)
{
  std::ifstream in(path);
  if (!in)
    throw NotFound("cannot open results file " + path.string());
  return read_results(in);
}

// Binary trajectory file: magic "KP3J", uint32 version (1), uint32 record
// count, then per keypoint: int64 frame, int32 object, int32 type,
// uint32 provenance, float64 x, y, z. All little-endian.

inline std::string encode_trajectory(const std::vector<FrameResult>& frames)
{
  std::string out = "KP3J";
  auto put = [&out](std::uint64_t v, int bytes) {
    for (int b = 0; b < bytes; ++b)
      out.push_back(static_cast<char>((v >> (8 * b)) & 0xffu));
  };
  std::uint32_t count = 0;
  for (const auto& f : frames)
    for (const auto& o : f.objects)
      count += static_cast<std::uint32_t>(o.keypoints.size());
  put(1, 4);
  put(count, 4);
  for (const auto& f : frames)
    for (std::size_t k = 0; k < f.objects.size(); ++k)
      for (const auto& kp : f.objects[k].keypoints) {
        put(static_cast<std::uint64_t>(f.frame), 8);
        put(static_cast<std::uint32_t>(k), 4);
        put(static_cast<std::uint32_t>(kp.type_index), 4);
        put(static_cast<std::uint32_t>(kp.provenance), 4);
        for (int a = 0; a < 3; ++a)
          put(std::bit_cast<std::uint64_t>(kp.position(a)), 8);
      }
  return out;
}

}  // namespace kpt3d
