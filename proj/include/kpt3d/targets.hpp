#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kpt3d/errors.hpp"
#include "kpt3d/geometry.hpp"
#include "kpt3d/tensor.hpp"

namespace kpt3d {

using MaskMaps = MapStack<std::uint8_t>;

/// Keypoint types of one object category. The center keypoint gets the
/// channel after the last declared type.
struct CategorySpec
{
  std::string name;
  std::vector<std::string> keypoint_types;
  std::vector<bool> ambiguous;

  CategorySpec() = default;
  CategorySpec(std::string name_, std::vector<std::string> types, std::vector<bool> ambiguous_ = {})
    : name(std::move(name_)), keypoint_types(std::move(types)), ambiguous(std::move(ambiguous_))
  {
    if (keypoint_types.empty())
      throw Error("category '" + name + "' needs at least one keypoint type");
    if (ambiguous.empty())
      ambiguous.assign(keypoint_types.size(), false);
    if (ambiguous.size() != keypoint_types.size())
      throw Error("category '" + name + "': ambiguous flags do not match keypoint types");
  }

  int channels() const { return static_cast<int>(keypoint_types.size()) + 1; }
  int center_channel() const { return static_cast<int>(keypoint_types.size()); }

  int type_index(const std::string& type) const
  {
    const auto it = std::find(keypoint_types.begin(), keypoint_types.end(), type);
    if (it == keypoint_types.end())
      throw Error("category '" + name + "' has no keypoint type '" + type + "'");
    return static_cast<int>(it - keypoint_types.begin());
  }

  friend bool operator==(const CategorySpec&, const CategorySpec&) = default;
};

inline nlohmann::json to_json(const CategorySpec& spec)
{
  return {{"name", spec.name}, {"keypoint_types", spec.keypoint_types}, {"ambiguous", spec.ambiguous}};
}

inline CategorySpec category_from_json(const nlohmann::json& j)
{
  try {
    return {j.at("name").get<std::string>(), j.at("keypoint_types").get<std::vector<std::string>>(),
            j.value("ambiguous", std::vector<bool>{})};
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("category spec: ") + e.what());
  }
}

/// Affine chain full image -> crop -> network input -> output map.
struct FrameMapping
{
  double crop_x = 0, crop_y = 0;
  double crop_width = 511, crop_height = 511;
  int input_size = 511;
  int output_size = 64;

  static FrameMapping center_crop(int image_width, int image_height, int input_size = 511,
                                  int output_size = 64)
  {
    const double side = std::min(image_width, image_height);
    return {(image_width - side) / 2.0, (image_height - side) / 2.0, side, side, input_size, output_size};
  }

  double scale_x() const { return input_size / crop_width * (static_cast<double>(output_size) / input_size); }
  double scale_y() const { return input_size / crop_height * (static_cast<double>(output_size) / input_size); }

  Vec2 to_output(const Vec2& image_px) const
  {
    return {(image_px.x() - crop_x) * scale_x(), (image_px.y() - crop_y) * scale_y()};
  }

  Vec2 to_image(const Vec2& output_px) const
  {
    return {output_px.x() / scale_x() + crop_x, output_px.y() / scale_y() + crop_y};
  }

  friend bool operator==(const FrameMapping&, const FrameMapping&) = default;
};

inline nlohmann::json to_json(const FrameMapping& m)
{
  return {{"crop_x", m.crop_x}, {"crop_y", m.crop_y}, {"crop_width", m.crop_width},
          {"crop_height", m.crop_height}, {"input_size", m.input_size}, {"output_size", m.output_size}};
}

inline FrameMapping mapping_from_json(const nlohmann::json& j)
{
  return {j.at("crop_x").get<double>(), j.at("crop_y").get<double>(), j.at("crop_width").get<double>(),
          j.at("crop_height").get<double>(), j.at("input_size").get<int>(), j.at("output_size").get<int>()};
}

/// A keypoint placed on the output map. `object` indexes the per-frame
/// center list; `depth` is the z coordinate in the viewing camera frame.
struct MapKeypoint
{
  int channel = 0;
  Vec2 position = Vec2::Zero();
  int object = -1;
  double depth = 0;
};

struct TargetOptions
{
  int height = 64;
  int width = 64;
  double sigma = 0.8;
  double depth_radius = 3.0;
  // Gaussian support radius in multiples of sigma.
  double truncation = 3.0;
};

struct TargetMaps
{
  FloatMaps heatmaps;
  FloatMaps center_field;
  FloatMaps depth;
  MaskMaps valid_mask;
};

namespace detail {

inline bool on_map(const Vec2& p, int height, int width)
{
  return p.allFinite() && p.x() >= 0 && p.y() >= 0 && p.x() < width && p.y() < height;
}

// Keypoints of channel c that lie on the map.
inline std::vector<const MapKeypoint*> on_map_keypoints(std::span<const MapKeypoint> kps, int c,
                                                        int height, int width)
{
  std::vector<const MapKeypoint*> out;
  for (const auto& kp : kps)
    if (kp.channel == c && on_map(kp.position, height, width))
      out.push_back(&kp);
  return out;
}

// Visit pixels (i, j) with squared distance to p at most r², calling f(i, j, d²).
template <typename F>
void for_disk(const Vec2& p, double r, int height, int width, F&& f)
{
  const int i0 = std::max(0, static_cast<int>(std::floor(p.y() - r)));
  const int i1 = std::min(height - 1, static_cast<int>(std::ceil(p.y() + r)));
  const int j0 = std::max(0, static_cast<int>(std::floor(p.x() - r)));
  const int j1 = std::min(width - 1, static_cast<int>(std::ceil(p.x() + r)));
  for (int i = i0; i <= i1; ++i)
    for (int j = j0; j <= j1; ++j) {
      const double d2 = (j - p.x()) * (j - p.x()) + (i - p.y()) * (i - p.y());
      if (d2 <= r * r)
        f(i, j, d2);
    }
}

inline const MapKeypoint* nearest(const std::vector<const MapKeypoint*>& kps, int i, int j)
{
  const MapKeypoint* best = nullptr;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (const auto* kp : kps) {
    const double d2 = (kp->position - Vec2(j, i)).squaredNorm();
    if (d2 < best_d2) {
      best_d2 = d2;
      best = kp;
    }
  }
  return best;
}

inline void check_channels(std::span<const MapKeypoint> kps, int channels)
{
  for (const auto& kp : kps)
    if (kp.channel < 0 || kp.channel >= channels)
      throw Error("keypoint channel " + std::to_string(kp.channel) + " out of range");
}

}  // namespace detail

/// Gaussian bumps, max-composed within a channel, each channel normalized to
/// a peak of exactly 1. Off-map keypoints are skipped and reported.
inline FloatMaps render_heatmaps(std::span<const MapKeypoint> keypoints, const CategorySpec& spec,
                                 const TargetOptions& opt, std::vector<std::string>* warnings = nullptr)
{
  if (!(opt.sigma > 0))
    throw Error("heatmap sigma must be positive");
  detail::check_channels(keypoints, spec.channels());
  FloatMaps maps(spec.channels(), opt.height, opt.width);
  const double radius = opt.truncation * opt.sigma;
  for (const auto& kp : keypoints)
    if (!detail::on_map(kp.position, opt.height, opt.width) && warnings)
      warnings->push_back("keypoint of channel " + std::to_string(kp.channel)
                          + " is outside the output map; not rendered");

  std::vector<double> channel(static_cast<std::size_t>(opt.height) * opt.width);
  for (int c = 0; c < spec.channels(); ++c) {
    const auto kps = detail::on_map_keypoints(keypoints, c, opt.height, opt.width);
    if (kps.empty())
      continue;
    std::fill(channel.begin(), channel.end(), 0.0);
    for (const auto* kp : kps)
      detail::for_disk(kp->position, radius, opt.height, opt.width, [&](int i, int j, double d2) {
        auto& v = channel[static_cast<std::size_t>(i) * opt.width + j];
        v = std::max(v, std::exp(-d2 / (2 * opt.sigma * opt.sigma)));
      });
    const auto peak = std::max_element(channel.begin(), channel.end());
    const double max_value = *peak;
    for (int i = 0; i < opt.height; ++i)
      for (int j = 0; j < opt.width; ++j)
        maps(c, i, j) = static_cast<float>(channel[static_cast<std::size_t>(i) * opt.width + j] / max_value);
    maps.data()[maps.index(c, 0, 0) + static_cast<std::size_t>(peak - channel.begin())] = 1.0f;
  }
  return maps;
}

/// Per support pixel, the vector from the pixel to the center of the object
/// owning the nearest same-channel keypoint. The center channel stores zero
/// vectors.
inline FloatMaps render_center_field(std::span<const MapKeypoint> keypoints, std::span<const Vec2> centers,
                                     const CategorySpec& spec, const TargetOptions& opt)
{
  detail::check_channels(keypoints, spec.channels());
  for (const auto& kp : keypoints)
    if (kp.object < 0 || kp.object >= static_cast<int>(centers.size()))
      throw MissingAssociation("keypoint of channel " + std::to_string(kp.channel)
                               + " has no associated object center");
  FloatMaps field(spec.channels(), opt.height, opt.width, 2);
  const double radius = opt.truncation * opt.sigma;
  for (int c = 0; c < spec.center_channel(); ++c) {
    const auto kps = detail::on_map_keypoints(keypoints, c, opt.height, opt.width);
    for (const auto* kp : kps)
      detail::for_disk(kp->position, radius, opt.height, opt.width, [&](int i, int j, double) {
        const MapKeypoint* owner = detail::nearest(kps, i, j);
        const Vec2& center = centers[static_cast<std::size_t>(owner->object)];
        field(c, i, j, 0) = static_cast<float>(center.x() - j);
        field(c, i, j, 1) = static_cast<float>(center.y() - i);
      });
  }
  return field;
}

/// Disks of radius r holding each keypoint's camera-frame depth; overlaps go
/// to the nearest keypoint.
inline FloatMaps render_depth(std::span<const MapKeypoint> keypoints, const CategorySpec& spec,
                              const TargetOptions& opt)
{
  detail::check_channels(keypoints, spec.channels());
  for (const auto& kp : keypoints)
    if (detail::on_map(kp.position, opt.height, opt.width) && !(kp.depth > 0))
      throw InvalidDepth("keypoint depth must be positive, got " + std::to_string(kp.depth));
  FloatMaps depth(spec.channels(), opt.height, opt.width);
  for (int c = 0; c < spec.channels(); ++c) {
    const auto kps = detail::on_map_keypoints(keypoints, c, opt.height, opt.width);
    for (const auto* kp : kps)
      detail::for_disk(kp->position, opt.depth_radius, opt.height, opt.width, [&](int i, int j, double) {
        depth(c, i, j) = static_cast<float>(detail::nearest(kps, i, j)->depth);
      });
  }
  return depth;
}

inline MaskMaps support_mask(const FloatMaps& heatmaps)
{
  MaskMaps mask(heatmaps.channels(), heatmaps.height(), heatmaps.width());
  for (std::size_t n = 0; n < heatmaps.size(); ++n)
    mask.data()[n] = heatmaps.data()[n] > 0.0f ? 1 : 0;
  return mask;
}

inline TargetMaps render_targets(std::span<const MapKeypoint> keypoints, std::span<const Vec2> centers,
                                 const CategorySpec& spec, const TargetOptions& opt,
                                 std::vector<std::string>* warnings = nullptr)
{
  TargetMaps t;
  t.heatmaps = render_heatmaps(keypoints, spec, opt, warnings);
  t.center_field = render_center_field(keypoints, centers, spec, opt);
  t.depth = render_depth(keypoints, spec, opt);
  t.valid_mask = support_mask(t.heatmaps);
  return t;
}

inline FloatMaps mask_to_float(const MaskMaps& mask)
{
  FloatMaps out(mask.channels(), mask.height(), mask.width());
  for (std::size_t n = 0; n < mask.size(); ++n)
    out.data()[n] = mask.data()[n] ? 1.0f : 0.0f;
  return out;
}

}  // namespace kpt3d
