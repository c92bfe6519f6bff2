#pragma once

// HTTP backend for interactive labeling. Protocol: docs/label_service.md.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <png.h>

#include "kpt3d/dataset.hpp"
#include "kpt3d/errors.hpp"

#include <httplib.h>
// <resolv.h> (via httplib) defines _res, an Eigen parameter name.
#ifdef _res
#undef _res
#endif

namespace kpt3d {

inline constexpr int kProtocolVersion = 1;

struct ServiceError : Error
{
  ServiceError(int status, const std::string& what, nlohmann::json extra = nlohmann::json::object())
    : Error(what), status(status), extra(std::move(extra))
  {}
  int status;
  nlohmann::json extra;
};

// ---------------------------------------------------------------------------
// Images

/// 8-bit RGB, row-major.
struct RgbImage
{
  int width = 0;
  int height = 0;
  std::vector<unsigned char> pixels;
};

inline std::string encode_png(const RgbImage& img)
{
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, img.pixels.data(), 0, nullptr))
    throw Error(std::string("png: ") + image.message);
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, img.pixels.data(), 0, nullptr))
    throw Error(std::string("png: ") + image.message);
  out.resize(size);
  return out;
}

inline RgbImage decode_png(const std::string& bytes)
{
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
    throw FormatError(std::string("png: ") + image.message);
  image.format = PNG_FORMAT_RGB;
  RgbImage img{static_cast<int>(image.width), static_cast<int>(image.height), {}};
  img.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, img.pixels.data(), 0, nullptr))
    throw FormatError(std::string("png: ") + image.message);
  return img;
}

/// Stand-in for a camera image: a checkerboard floor (z = 0, 5 cm tiles)
/// seen from the camera pose. Objects are not drawn.
inline RgbImage render_placeholder(const CameraIntrinsics& K, const RigidTransform& camera_in_base)
{
  RgbImage img{K.width, K.height, std::vector<unsigned char>(3u * static_cast<std::size_t>(K.width * K.height))};
  const Mat3 R = camera_in_base.rotation();
  const Vec3 c = camera_in_base.translation();
  for (int v = 0; v < K.height; ++v)
    for (int u = 0; u < K.width; ++u) {
      const Vec3 d = R * Vec3((u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0);
      unsigned char rgb[3] = {96, 110, 128};
      if (d.z() < -1e-9) {
        const double s = -c.z() / d.z();
        const Vec3 p = c + s * d;
        if (s > 0 && p.head<2>().norm() < 1.5) {
          const bool dark = (static_cast<long>(std::floor(p.x() / 0.05)) + static_cast<long>(std::floor(p.y() / 0.05))) & 1;
          const auto g = static_cast<unsigned char>(dark ? 70 : 190);
          rgb[0] = rgb[1] = rgb[2] = g;
        }
      }
      std::copy(rgb, rgb + 3, img.pixels.begin() + 3 * (static_cast<std::ptrdiff_t>(v) * K.width + u));
    }
  return img;
}

// ---------------------------------------------------------------------------
// Sessions

struct LabelSession
{
  std::string id;
  std::string sequence;
  bool writer = true;
  std::shared_ptr<const SequenceDataset> seq;
  CategorySpec category;
  std::size_t frame_a = 0;
  std::size_t frame_b = 0;
  double abs_cos = 1;
  // Swap queues: partners of the other slot's frame, best first. Empty
  // means stale; rebuilt on the next swap of that slot.
  std::vector<std::size_t> queue_a, queue_b;
  std::size_t cursor_a = 0, cursor_b = 0;
  // Last successful submission, in click order.
  std::optional<Propagation> pending;
  std::mutex mutex;
};

class LabelService
{
public:
  /// `default_category` is used for sequences without a labels file.
  explicit LabelService(std::filesystem::path data_dir, std::optional<CategorySpec> default_category = {})
    : data_dir_(std::move(data_dir)), default_category_(std::move(default_category))
  {}

  nlohmann::json list_sequences() const
  {
    nlohmann::json out = nlohmann::json::array();
    if (!std::filesystem::is_directory(data_dir_))
      return envelope({{"sequences", out}});
    std::vector<std::string> ids;
    for (const auto& e : std::filesystem::directory_iterator(data_dir_))
      if (e.is_directory() && std::filesystem::exists(e.path() / "sequence.json"))
        ids.push_back(e.path().filename().string());
    std::sort(ids.begin(), ids.end());
    for (const auto& id : ids) {
      const auto meta = read_json_file(data_dir_ / id / "sequence.json");
      out.push_back({{"id", id}, {"split", meta.value("split", std::string("train"))}});
    }
    return envelope({{"sequences", out}});
  }

  nlohmann::json open_session(const nlohmann::json& req)
  {
    const auto seq_id = field<std::string>(req, "sequence");
    const auto mode = req.contains("mode") ? field<std::string>(req, "mode") : std::string("write");
    if (mode != "write" && mode != "read")
      throw ServiceError(400, "mode must be 'write' or 'read'");
    auto seq = sequence(seq_id);
    if (seq->frames.size() < 2)
      throw ServiceError(422, "sequence " + seq_id + " has fewer than two frames");
    const auto pair = select_label_views(*seq);

    auto s = std::make_shared<LabelSession>();
    s->sequence = seq_id;
    s->writer = mode == "write";
    s->seq = seq;
    s->category = category_for(*seq);
    s->frame_a = pair.frame_a;
    s->frame_b = pair.frame_b;
    s->abs_cos = pair.abs_cos;
    {
      std::lock_guard lock(sessions_mutex_);
      if (s->writer && writers_.count(seq_id))
        throw ServiceError(409, "sequence " + seq_id + " already has a writing session");
      s->id = "s" + std::to_string(++session_counter_);
      sessions_[s->id] = s;
      if (s->writer)
        writers_.insert(seq_id);
    }
    std::lock_guard lock(s->mutex);
    auto out = session_state(*s);
    if (pair.degenerate)
      out["warning"] = "all candidate views share one optical axis direction";
    return out;
  }

  nlohmann::json get_session(const std::string& sid)
  {
    auto s = session(sid);
    std::lock_guard lock(s->mutex);
    return session_state(*s);
  }

  void close_session(const std::string& sid)
  {
    std::lock_guard lock(sessions_mutex_);
    const auto it = sessions_.find(sid);
    if (it == sessions_.end())
      throw ServiceError(404, "no session " + sid);
    if (it->second->writer)
      writers_.erase(it->second->sequence);
    sessions_.erase(it);
  }

  /// Replaces one slot with the next frame of its queue, most perpendicular
  /// to the other slot first. The other slot stays fixed.
  nlohmann::json swap(const std::string& sid, const nlohmann::json& req)
  {
    const auto slot = field<std::string>(req, "slot");
    if (slot != "a" && slot != "b")
      throw ServiceError(400, "slot must be 'a' or 'b'");
    auto s = session(sid);
    std::lock_guard lock(s->mutex);
    const bool is_a = slot == "a";
    auto& frame = is_a ? s->frame_a : s->frame_b;
    const auto fixed = is_a ? s->frame_b : s->frame_a;
    auto& queue = is_a ? s->queue_a : s->queue_b;
    auto& cursor = is_a ? s->cursor_a : s->cursor_b;
    if (queue.empty()) {
      queue = ranked_partners(*s->seq, fixed);
      const auto at = std::find(queue.begin(), queue.end(), frame);
      cursor = at == queue.end() ? queue.size() - 1 : static_cast<std::size_t>(at - queue.begin());
    }
    std::string warning;
    if (++cursor >= queue.size()) {
      cursor = 0;
      warning = "swap candidates exhausted for slot " + slot + "; starting over";
    }
    frame = queue[cursor];
    // The other slot's queue was ranked against the frame just replaced.
    (is_a ? s->queue_b : s->queue_a).clear();
    s->abs_cos = optical_axis_abs_cos(*s->seq, s->frame_a, s->frame_b);
    s->pending.reset();
    auto out = session_state(*s);
    if (!warning.empty())
      out["warning"] = warning;
    return out;
  }

  nlohmann::json submit(const std::string& sid, const nlohmann::json& req)
  {
    auto s = session(sid);
    std::lock_guard lock(s->mutex);
    const auto category = field<std::string>(req, "category");
    if (category != s->category.name)
      throw ServiceError(400, "category '" + category + "' does not match sequence category '" + s->category.name
                                  + "'");
    const auto types = field<std::vector<std::string>>(req, "types");
    const auto a = points(req, "clicks_a");
    const auto b = points(req, "clicks_b");
    if (a.size() != b.size() || a.size() != types.size())
      throw ServiceError(400, "click count mismatch: " + std::to_string(types.size()) + " types, "
                                  + std::to_string(a.size()) + " clicks in frame a, " + std::to_string(b.size())
                                  + " in frame b");
    if (types.empty())
      throw ServiceError(400, "no clicks");
    std::vector<ClickPair> clicks;
    for (std::size_t k = 0; k < types.size(); ++k) {
      int t = 0;
      try {
        t = s->category.type_index(types[k]);
      } catch (const Error& e) {
        throw ServiceError(400, e.what(), {{"keypoint", k}});
      }
      clicks.push_back({t, a[k], b[k]});
    }
    try {
      s->pending = propagate_labels(*s->seq, s->frame_a, s->frame_b, clicks);
    } catch (const KeypointTriangulationError& e) {
      s->pending.reset();
      throw ServiceError(422, e.what(), {{"keypoint", e.keypoint_index}});
    }
    const auto& p = *s->pending;
    nlohmann::json pts = nlohmann::json::array();
    for (std::size_t k = 0; k < p.object.keypoints.size(); ++k) {
      const auto& X = p.object.keypoints[k].position;
      pts.push_back({{"type", types[k]},
                     {"position", {X.x(), X.y(), X.z()}},
                     {"residual_a", p.residual_a[k]},
                     {"residual_b", p.residual_b[k]}});
    }
    const Vec3 c = p.object.center();
    auto out = envelope({{"session", s->id},
                         {"frame_a", s->frame_a},
                         {"frame_b", s->frame_b},
                         {"points", pts},
                         {"center", {c.x(), c.y(), c.z()}}});
    out["backprojections"] = req.contains("backproject") ? backprojections(*s, req.at("backproject"), true)
                                                         : nlohmann::json::array();
    return out;
  }

  /// Labels of the pending object and of committed objects in the given
  /// frames (left images).
  nlohmann::json backproject(const std::string& sid, const nlohmann::json& req)
  {
    auto s = session(sid);
    std::lock_guard lock(s->mutex);
    if (!req.contains("frames"))
      throw ServiceError(400, "missing field 'frames'");
    return envelope({{"session", s->id}, {"backprojections", backprojections(*s, req.at("frames"), false)}});
  }

  /// Appends the pending object to labels.json (write-then-rename).
  nlohmann::json commit(const std::string& sid)
  {
    auto s = session(sid);
    std::lock_guard lock(s->mutex);
    if (!s->writer)
      throw ServiceError(403, "session " + sid + " is read-only");
    if (!s->pending)
      throw ServiceError(409, "nothing to commit; submit clicks first");
    const auto path = data_dir_ / s->sequence / "labels.json";
    auto objects = committed(*s);
    objects.push_back(s->pending->object);
    save_labels(path, s->category, objects);
    s->pending.reset();
    return envelope({{"session", s->id}, {"committed", objects.size()}});
  }

  std::string frame_png(const std::string& seq_id, std::size_t frame, Camera camera)
  {
    auto seq = sequence(seq_id);
    if (frame >= seq->frames.size())
      throw ServiceError(404, "frame " + std::to_string(frame) + " out of range");
    const auto& f = seq->frames[frame];
    const auto& ref = camera == Camera::kLeft ? f.left_image : f.right_image;
    if (!ref.empty() && ref != "-") {
      const auto path = data_dir_ / seq_id / ref;
      std::ifstream in(path, std::ios::binary);
      if (!in)
        throw ServiceError(404, "image file missing: " + ref);
      std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      if (path.extension() == ".png")
        return bytes;
      throw ServiceError(415, "only PNG images are served");
    }
    return encode_png(render_placeholder(seq->intrinsics(camera), seq->pose(frame, camera)));
  }

  void mount(httplib::Server& server)
  {
    const std::string sid = "/v1/sessions/([A-Za-z0-9]+)";
    server.Get("/v1/sequences", wrap([this](const httplib::Request&) { return list_sequences(); }));
    server.Post("/v1/sessions",
                wrap([this](const httplib::Request& r) { return open_session(parse(r)); }));
    server.Get(sid, wrap([this](const httplib::Request& r) { return get_session(r.matches[1]); }));
    server.Delete(sid, wrap([this](const httplib::Request& r) {
                    close_session(r.matches[1]);
                    return envelope({{"closed", r.matches[1].str()}});
                  }));
    server.Post(sid + "/swap", wrap([this](const httplib::Request& r) { return swap(r.matches[1], parse(r)); }));
    server.Post(sid + "/submit",
                wrap([this](const httplib::Request& r) { return submit(r.matches[1], parse(r)); }));
    server.Post(sid + "/backproject",
                wrap([this](const httplib::Request& r) { return backproject(r.matches[1], parse(r)); }));
    server.Post(sid + "/commit", wrap([this](const httplib::Request& r) { return commit(r.matches[1]); }));
    server.Get(R"(/v1/sequences/([A-Za-z0-9_.-]+)/frames/(\d+)/(left|right)\.png)",
               [this](const httplib::Request& r, httplib::Response& res) {
                 try {
                   const auto frame = std::stoul(r.matches[2]);
                   res.set_content(frame_png(r.matches[1], frame, r.matches[3] == "left" ? Camera::kLeft : Camera::kRight),
                                   "image/png");
                 } catch (...) {
                   fail(res);
                 }
               });
  }

  /// Body of every JSON response: compact, keys sorted, newline-terminated.
  static std::string serialize(const nlohmann::json& j) { return j.dump() + "\n"; }

private:
  static nlohmann::json envelope(nlohmann::json body)
  {
    body["version"] = kProtocolVersion;
    return body;
  }

  template <typename T>
  static T field(const nlohmann::json& req, const char* key)
  {
    if (!req.is_object() || !req.contains(key))
      throw ServiceError(400, std::string("missing field '") + key + "'");
    try {
      return req.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ServiceError(400, std::string("wrong type for field '") + key + "'");
    }
  }

  static std::vector<Vec2> points(const nlohmann::json& req, const char* key)
  {
    const auto raw = field<std::vector<std::array<double, 2>>>(req, key);
    std::vector<Vec2> out;
    for (const auto& p : raw)
      out.emplace_back(p[0], p[1]);
    return out;
  }

  static nlohmann::json parse(const httplib::Request& r)
  {
    if (r.body.empty())
      return nlohmann::json::object();
    try {
      return nlohmann::json::parse(r.body);
    } catch (const nlohmann::json::exception& e) {
      throw ServiceError(400, std::string("malformed JSON body: ") + e.what());
    }
  }

  static void fail(httplib::Response& res)
  {
    int status = 500;
    nlohmann::json body = nlohmann::json::object();
    try {
      throw;
    } catch (const ServiceError& e) {
      status = e.status;
      body = e.extra;
      body["error"] = e.what();
    } catch (const NotFound& e) {
      status = 404;
      body["error"] = e.what();
    } catch (const FormatError& e) {
      status = 422;
      body["error"] = e.what();
    } catch (const std::exception& e) {
      body["error"] = e.what();
    }
    res.status = status;
    res.set_content(serialize(envelope(body)), "application/json");
  }

  template <typename F>
  static httplib::Server::Handler wrap(F f)
  {
    return [f](const httplib::Request& req, httplib::Response& res) {
      try {
        res.set_content(serialize(f(req)), "application/json");
      } catch (...) {
        fail(res);
      }
    };
  }

  std::shared_ptr<const SequenceDataset> sequence(const std::string& id)
  {
    if (id.empty() || id.find('/') != std::string::npos || id.find("..") != std::string::npos)
      throw ServiceError(400, "invalid sequence id '" + id + "'");
    std::lock_guard lock(cache_mutex_);
    const auto it = cache_.find(id);
    if (it != cache_.end())
      return it->second;
    const auto dir = data_dir_ / id;
    if (!std::filesystem::exists(dir / "sequence.json"))
      throw ServiceError(404, "sequence " + id + " not found");
    auto seq = std::make_shared<const SequenceDataset>(load_sequence(dir));
    cache_[id] = seq;
    return seq;
  }

  std::shared_ptr<LabelSession> session(const std::string& sid)
  {
    std::lock_guard lock(sessions_mutex_);
    const auto it = sessions_.find(sid);
    if (it == sessions_.end())
      throw ServiceError(404, "no session " + sid);
    return it->second;
  }

  CategorySpec category_for(const SequenceDataset& seq) const
  {
    if (!seq.category.name.empty())
      return seq.category;
    if (default_category_)
      return *default_category_;
    throw ServiceError(422, "sequence " + seq.id + " has no category; start the service with a category file");
  }

  // Committed objects are always read back from disk, so a restarted
  // service sees exactly what was persisted.
  std::vector<ObjectInstance> committed(const LabelSession& s) const
  {
    const auto path = data_dir_ / s.sequence / "labels.json";
    if (!std::filesystem::exists(path))
      return {};
    return labels_from_json(read_json_file(path)).objects;
  }

  nlohmann::json labels_json(const LabelSession& s, const std::vector<Label2D>& labels) const
  {
    nlohmann::json out = nlohmann::json::array();
    const int center = s.category.center_channel();
    for (const auto& l : labels) {
      nlohmann::json px = nlohmann::json::array();
      if (std::isfinite(l.pixel.x()))
        px = {l.pixel.x(), l.pixel.y()};
      else
        px = nullptr;
      out.push_back({{"type", l.type_index == center ? std::string("center")
                                                     : s.category.keypoint_types.at(static_cast<std::size_t>(l.type_index))},
                     {"pixel", px},
                     {"visible", l.visible}});
    }
    return out;
  }

  nlohmann::json backprojections(const LabelSession& s, const nlohmann::json& frames_req, bool pending_only) const
  {
    std::vector<std::size_t> frames;
    try {
      frames = frames_req.get<std::vector<std::size_t>>();
    } catch (const nlohmann::json::exception&) {
      throw ServiceError(400, "frames must be an array of frame indices");
    }
    for (auto f : frames)
      if (f >= s.seq->frames.size())
        throw ServiceError(400, "frame " + std::to_string(f) + " out of range");
    const auto objects = pending_only ? std::vector<ObjectInstance>{} : committed(s);
    nlohmann::json out = nlohmann::json::array();
    for (auto f : frames) {
      nlohmann::json objs = nlohmann::json::array();
      if (s.pending)
        objs.push_back({{"source", "pending"}, {"labels", labels_json(s, s.pending->frames[f])}});
      for (std::size_t i = 0; i < objects.size(); ++i)
        objs.push_back({{"source", "committed"},
                        {"index", i},
                        {"labels", labels_json(s, project_labels(*s.seq, objects[i], f, Camera::kLeft))}});
      out.push_back({{"frame", f}, {"objects", objs}});
    }
    return out;
  }

  nlohmann::json frame_json(const LabelSession& s, std::size_t f) const
  {
    const auto& fr = s.seq->frames[f];
    const std::string base = "/v1/sequences/" + s.sequence + "/frames/" + std::to_string(f);
    return {{"index", f},
            {"timestamp", fr.timestamp},
            {"left_pose", to_json(fr.left_pose)},
            {"right_pose", to_json(fr.right_pose)},
            {"left_image", base + "/left.png"},
            {"right_image", base + "/right.png"}};
  }

  nlohmann::json session_state(const LabelSession& s) const
  {
    return envelope({{"session", s.id},
                     {"sequence", s.sequence},
                     {"mode", s.writer ? "write" : "read"},
                     {"frames", s.seq->frames.size()},
                     {"category", to_json(s.category)},
                     {"intrinsics", to_json(s.seq->intrinsics(Camera::kLeft))},
                     {"frame_a", frame_json(s, s.frame_a)},
                     {"frame_b", frame_json(s, s.frame_b)},
                     {"abs_cos", s.abs_cos},
                     {"pending", s.pending.has_value()},
                     {"committed", committed(s).size()}});
  }

  std::filesystem::path data_dir_;
  std::optional<CategorySpec> default_category_;
  std::mutex cache_mutex_;
  std::map<std::string, std::shared_ptr<const SequenceDataset>> cache_;
  std::mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<LabelSession>> sessions_;
  std::set<std::string> writers_;
  std::size_t session_counter_ = 0;
};

}  // namespace kpt3d
