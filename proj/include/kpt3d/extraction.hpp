#pragma once

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "kpt3d/geometry.hpp"
#include "kpt3d/targets.hpp"
#include "kpt3d/tensor.hpp"

namespace kpt3d {

struct Detection2D
{
  int type_index = 0;
  Vec2 position = Vec2::Zero();        // output-map px, subpixel
  double score = 0;                    // peak heatmap value
  Vec2 center_vote = Vec2::Zero();     // output-map px
  Vec2 image_position = Vec2::Zero();  // full-image px
};

struct ExtractionOptions
{
  double threshold = 0.25;
  // Half-width of the NMS and centroid windows (2 -> 5×5).
  int window_radius = 2;
};

/// Zeroes every pixel that is not the maximum of its (border-clamped)
/// window. Among equal maxima the first index in row-major order survives.
inline FloatMaps suppress_non_maxima(const FloatMaps& heatmaps, int window_radius = 2)
{
  FloatMaps out(heatmaps.channels(), heatmaps.height(), heatmaps.width());
  const int H = heatmaps.height(), W = heatmaps.width();
  for (int c = 0; c < heatmaps.channels(); ++c)
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j) {
        const float v = heatmaps(c, i, j);
        bool keep = true;
        for (int di = -window_radius; di <= window_radius && keep; ++di)
          for (int dj = -window_radius; dj <= window_radius; ++dj) {
            const int ii = i + di, jj = j + dj;
            if ((di == 0 && dj == 0) || !heatmaps.inside(ii, jj))
              continue;
            const float q = heatmaps(c, ii, jj);
            const bool before = ii < i || (ii == i && jj < j);
            if (q > v || (q == v && before)) {
              keep = false;
              break;
            }
          }
        if (keep)
          out(c, i, j) = v;
      }
  return out;
}

/// Bilinear sample of component k of channel c at subpixel (x, y),
/// clamped to the map.
inline double sample_bilinear(const FloatMaps& maps, int c, const Vec2& p, int k = 0)
{
  const double x = std::clamp(p.x(), 0.0, static_cast<double>(maps.width() - 1));
  const double y = std::clamp(p.y(), 0.0, static_cast<double>(maps.height() - 1));
  const int j0 = static_cast<int>(std::floor(x)), i0 = static_cast<int>(std::floor(y));
  const int j1 = std::min(j0 + 1, maps.width() - 1), i1 = std::min(i0 + 1, maps.height() - 1);
  const double ax = x - j0, ay = y - i0;
  return (1 - ay) * ((1 - ax) * maps(c, i0, j0, k) + ax * maps(c, i0, j1, k))
         + ay * ((1 - ax) * maps(c, i1, j0, k) + ax * maps(c, i1, j1, k));
}

/// Heatmap-weighted mean of pixel indices in the window around (i, j).
inline Vec2 weighted_centroid(const FloatMaps& heatmaps, int c, int i, int j, int window_radius)
{
  double sw = 0, sx = 0, sy = 0;
  for (int ii = std::max(0, i - window_radius); ii <= std::min(heatmaps.height() - 1, i + window_radius); ++ii)
    for (int jj = std::max(0, j - window_radius); jj <= std::min(heatmaps.width() - 1, j + window_radius); ++jj) {
      const double w = heatmaps(c, ii, jj);
      sw += w;
      sx += w * jj;
      sy += w * ii;
    }
  return sw > 0 ? Vec2(sx / sw, sy / sw) : Vec2(j, i);
}

/// NMS, thresholding, subpixel refinement on the raw heatmap and center
/// votes. Detections are ordered by channel, then row-major peak index.
inline std::vector<Detection2D> extract_keypoints(const FloatMaps& heatmaps, const FloatMaps& center_field,
                                                  const FrameMapping& mapping,
                                                  const ExtractionOptions& opt = {})
{
  if (center_field.channels() != heatmaps.channels() || center_field.height() != heatmaps.height()
      || center_field.width() != heatmaps.width() || center_field.components() != 2)
    throw ShapeMismatch("extract_keypoints: center field shape does not match heatmaps");
  const FloatMaps peaks = suppress_non_maxima(heatmaps, opt.window_radius);
  std::vector<Detection2D> out;
  for (int c = 0; c < heatmaps.channels(); ++c)
    for (int i = 0; i < heatmaps.height(); ++i)
      for (int j = 0; j < heatmaps.width(); ++j) {
        const float v = peaks(c, i, j);
        if (!(v >= opt.threshold) || v <= 0.0f)
          continue;
        Detection2D d;
        d.type_index = c;
        d.score = v;
        d.position = weighted_centroid(heatmaps, c, i, j, opt.window_radius);
        d.center_vote = d.position + Vec2(sample_bilinear(center_field, c, d.position, 0),
                                          sample_bilinear(center_field, c, d.position, 1));
        d.image_position = mapping.to_image(d.position);
        out.push_back(d);
      }
  return out;
}

struct TrackedObject2D
{
  Detection2D center;
  std::vector<Detection2D> keypoints;
};

struct Association
{
  std::vector<TrackedObject2D> objects;
  std::vector<Detection2D> orphans;
};

/// Groups detections around center-channel detections: each keypoint joins
/// the center nearest to its vote, unless none lies within `gating_radius`.
inline Association associate_to_objects(const std::vector<Detection2D>& detections, int center_channel,
                                        double gating_radius = 16.0)
{
  Association out;
  for (const auto& d : detections)
    if (d.type_index == center_channel)
      out.objects.push_back({d, {}});
  for (const auto& d : detections) {
    if (d.type_index == center_channel)
      continue;
    int best = -1;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < out.objects.size(); ++k) {
      const double dist = (out.objects[k].center.position - d.center_vote).norm();
      if (dist < best_dist) {
        best_dist = dist;
        best = static_cast<int>(k);
      }
    }
    if (best < 0 || best_dist > gating_radius)
      out.orphans.push_back(d);
    else
      out.objects[static_cast<std::size_t>(best)].keypoints.push_back(d);
  }
  return out;
}

// Detection record, one per line, space separated:
//   <frame> <channel> <x> <y> <score> <vote_x> <vote_y>
// with x, y, vote in output-map pixels.

inline void write_detection_record(std::ostream& os, long frame, const Detection2D& d)
{
  const auto flags = os.flags();
  const auto prec = os.precision();
  os << std::setprecision(9) << frame << ' ' << d.type_index << ' ' << d.position.x() << ' '
     << d.position.y() << ' ' << d.score << ' ' << d.center_vote.x() << ' ' << d.center_vote.y() << '\n';
  os.flags(flags);
  os.precision(prec);
}

struct DetectionRecord
{
  long frame = 0;
  Detection2D detection;
};

inline DetectionRecord parse_detection_record(const std::string& line, const FrameMapping& mapping)
{
  std::istringstream is(line);
  DetectionRecord r;
  auto& d = r.detection;
  if (!(is >> r.frame >> d.type_index >> d.position.x() >> d.position.y() >> d.score >> d.center_vote.x()
        >> d.center_vote.y()))
    throw FormatError("malformed detection record: " + line);
  d.image_position = mapping.to_image(d.position);
  return r;
}

}  // namespace kpt3d
