#pragma once

#include <algorithm>
#include <cmath>

#include "kpt3d/errors.hpp"
#include "kpt3d/targets.hpp"
#include "kpt3d/tensor.hpp"

namespace kpt3d {

// Training losses over C×H×W map stacks. All reductions are sums over
// channels and pixels. Templated on the element type so checks can run in
// double while stored tensors are float.

inline constexpr double kProbabilityClamp = 1e-7;

struct LossWeights
{
  // Placeholder defaults, nothing tuned them.
  double lambda_h = 1.0;
  double lambda_c = 0.1;
  double lambda_d = 1.0;

  void validate() const
  {
    if (!(lambda_h >= 0 && lambda_c >= 0 && lambda_d >= 0))
      throw Error("loss weights must be nonnegative");
  }
};

struct StageLosses
{
  double heatmap = 0;
  double center = 0;
  double depth = 0;
};

namespace detail {

template <typename A, typename B>
void require_same_shape(const MapStack<A>& a, const MapStack<B>& b, const char* what)
{
  if (a.channels() != b.channels() || a.height() != b.height() || a.width() != b.width()
      || a.components() != b.components())
    throw ShapeMismatch(std::string(what) + ": shape mismatch");
}

template <typename T>
void require_mask_shape(const MapStack<T>& maps, const MaskMaps& mask, const char* what)
{
  if (maps.channels() != mask.channels() || maps.height() != mask.height() || maps.width() != mask.width())
    throw ShapeMismatch(std::string(what) + ": mask shape mismatch");
}

inline double clamp_probability(double p) { return std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp); }

inline double smooth_l1(double d)
{
  const double a = std::abs(d);
  return a < 1.0 ? 0.5 * d * d : a - 0.5;
}

inline double smooth_l1_derivative(double d)
{
  if (std::abs(d) < 1.0)
    return d;
  return d > 0 ? 1.0 : -1.0;
}

}  // namespace detail

/// Binary cross entropy, −Σ y log p + (1 − y) log(1 − p).
template <typename T>
double heatmap_loss(const MapStack<T>& p, const MapStack<T>& y)
{
  detail::require_same_shape(p, y, "heatmap_loss");
  double sum = 0;
  for (std::size_t n = 0; n < p.size(); ++n) {
    const double pc = detail::clamp_probability(p.data()[n]);
    const double yn = y.data()[n];
    sum -= yn * std::log(pc) + (1.0 - yn) * std::log(1.0 - pc);
  }
  return sum;
}

/// ∂L_h/∂p, zero where p is clamped.
template <typename T>
MapStack<double> heatmap_loss_gradient(const MapStack<T>& p, const MapStack<T>& y)
{
  detail::require_same_shape(p, y, "heatmap_loss_gradient");
  MapStack<double> g(p.channels(), p.height(), p.width(), p.components());
  for (std::size_t n = 0; n < p.size(); ++n) {
    const double pn = p.data()[n], yn = y.data()[n];
    if (pn <= kProbabilityClamp || pn >= 1.0 - kProbabilityClamp)
      continue;
    g.data()[n] = -(yn / pn - (1.0 - yn) / (1.0 - pn));
  }
  return g;
}

/// Smooth-L1 on each vector component over masked pixels.
template <typename T>
double center_loss(const MapStack<T>& c_hat, const MapStack<T>& c, const MaskMaps& mask)
{
  detail::require_same_shape(c_hat, c, "center_loss");
  detail::require_mask_shape(c_hat, mask, "center_loss");
  double sum = 0;
  for (int ch = 0; ch < c.channels(); ++ch)
    for (int i = 0; i < c.height(); ++i)
      for (int j = 0; j < c.width(); ++j) {
        if (!mask(ch, i, j))
          continue;
        for (int k = 0; k < c.components(); ++k)
          sum += detail::smooth_l1(static_cast<double>(c_hat(ch, i, j, k)) - c(ch, i, j, k));
      }
  return sum;
}

template <typename T>
MapStack<double> center_loss_gradient(const MapStack<T>& c_hat, const MapStack<T>& c, const MaskMaps& mask)
{
  detail::require_same_shape(c_hat, c, "center_loss_gradient");
  detail::require_mask_shape(c_hat, mask, "center_loss_gradient");
  MapStack<double> g(c.channels(), c.height(), c.width(), c.components());
  for (int ch = 0; ch < c.channels(); ++ch)
    for (int i = 0; i < c.height(); ++i)
      for (int j = 0; j < c.width(); ++j)
        if (mask(ch, i, j))
          for (int k = 0; k < c.components(); ++k)
            g(ch, i, j, k) = detail::smooth_l1_derivative(static_cast<double>(c_hat(ch, i, j, k)) - c(ch, i, j, k));
  return g;
}

/// Σ |z − ẑ| over masked pixels.
template <typename T>
double depth_loss(const MapStack<T>& z_hat, const MapStack<T>& z, const MaskMaps& mask)
{
  detail::require_same_shape(z_hat, z, "depth_loss");
  detail::require_mask_shape(z_hat, mask, "depth_loss");
  double sum = 0;
  for (std::size_t n = 0; n < z.size(); ++n)
    if (mask.data()[n])
      sum += std::abs(static_cast<double>(z.data()[n]) - z_hat.data()[n]);
  return sum;
}

template <typename T>
MapStack<double> depth_loss_gradient(const MapStack<T>& z_hat, const MapStack<T>& z, const MaskMaps& mask)
{
  detail::require_same_shape(z_hat, z, "depth_loss_gradient");
  detail::require_mask_shape(z_hat, mask, "depth_loss_gradient");
  MapStack<double> g(z.channels(), z.height(), z.width());
  for (std::size_t n = 0; n < z.size(); ++n)
    if (mask.data()[n]) {
      const double d = static_cast<double>(z_hat.data()[n]) - z.data()[n];
      g.data()[n] = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
    }
  return g;
}

/// λ_h (L_h1 + L_h2) + λ_c (L_c1 + L_c2) + λ_d (L_d1 + L_d2).
inline double total_loss(const StageLosses& stage1, const StageLosses& stage2, const LossWeights& w)
{
  w.validate();
  return w.lambda_h * (stage1.heatmap + stage2.heatmap) + w.lambda_c * (stage1.center + stage2.center)
         + w.lambda_d * (stage1.depth + stage2.depth);
}

/// Per-stage losses of one prediction against rendered targets. The mask
/// is the target heatmap support.
inline StageLosses stage_losses(const TargetMaps& prediction, const TargetMaps& target)
{
  return {heatmap_loss(prediction.heatmaps, target.heatmaps),
          center_loss(prediction.center_field, target.center_field, target.valid_mask),
          depth_loss(prediction.depth, target.depth, target.valid_mask)};
}

}  // namespace kpt3d
