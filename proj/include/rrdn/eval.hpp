#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "rrdn/network.hpp"
#include "rrdn/warp.hpp"

namespace rrdn {

struct KittiMetrics {
  double abs_rel = 0, sq_rel = 0, rmse = 0, log_rmse = 0, a1 = 0, a2 = 0, a3 = 0;
};

struct EvalReport {
  std::string model;
  KittiMetrics metrics;
  double warp_rmse = 0;
  std::size_t param_count = 0;
  double inference_time = 0;  // seconds per image
};

inline constexpr const char* kReportHeader = "model,abs_rel,sq_rel,rmse,log_rmse,a1,a2,a3,warp_rmse,params,time_s";

inline std::string report_row(const EvalReport& r) {
  std::ostringstream os;
  os.precision(6);
  const auto& m = r.metrics;
  os << r.model << ',' << m.abs_rel << ',' << m.sq_rel << ',' << m.rmse << ',' << m.log_rmse << ',' << m.a1 << ',' << m.a2
     << ',' << m.a3 << ',' << r.warp_rmse << ',' << r.param_count << ',' << r.inference_time;
  return os.str();
}

/// Predictions below this are floored before metric evaluation.
inline constexpr double kPredictionFloor = 1e-3;

/// Eigen-style error metrics over pixels where valid != 0. Ground truth at
/// valid pixels must be positive.
inline KittiMetrics kitti_metrics(std::span<const double> pred, std::span<const double> gt, std::span<const unsigned char> valid) {
  if (pred.size() != gt.size() || gt.size() != valid.size()) throw ShapeError("kitti_metrics: input lengths differ");
  KittiMetrics m;
  std::size_t count = 0;
  double sq = 0, log_sq = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!valid[i]) continue;
    const double g = gt[i];
    if (!(g > 0)) throw Error("kitti_metrics: ground truth must be positive at valid pixels");
    const double p = std::max(pred[i], kPredictionFloor);
    const double diff = p - g;
    m.abs_rel += std::abs(diff) / g;
    m.sq_rel += diff * diff / g;
    sq += diff * diff;
    const double ld = std::log(p) - std::log(g);
    log_sq += ld * ld;
    const double ratio = std::max(p / g, g / p);
    m.a1 += ratio < 1.25 ? 1 : 0;
    m.a2 += ratio < 1.25 * 1.25 ? 1 : 0;
    m.a3 += ratio < 1.25 * 1.25 * 1.25 ? 1 : 0;
    ++count;
  }
  if (count == 0) throw Error("kitti_metrics: no valid ground-truth pixels");
  const double n = static_cast<double>(count);
  m.abs_rel /= n;
  m.sq_rel /= n;
  m.rmse = std::sqrt(sq / n);
  m.log_rmse = std::sqrt(log_sq / n);
  m.a1 /= n;
  m.a2 /= n;
  m.a3 /= n;
  return m;
}

/// RMSE between g(I_L, D_R) and I_R on the 0-255 scale; images are in [0,1].
template <typename T>
double warp_rmse(const Tensor<T>& left, const Tensor<T>& right, const Tensor<T>& disp_right) {
  NoGradGuard no_grad;
  Tensor<T> synth = warp_left_to_right(left, disp_right);
  detail::require_same_shape(synth, right, "warp_rmse");
  double sq = 0;
  for (std::size_t i = 0; i < synth.size(); ++i) {
    const double d = 255.0 * (static_cast<double>(synth.data()[i]) - static_cast<double>(right.data()[i]));
    sq += d * d;
  }
  return std::sqrt(sq / static_cast<double>(synth.size()));
}

// Fraction of the width covered by each side band in flip post-processing.
inline constexpr double kPostprocessBand = 0.05;

/// Blends a single-pass map with the mirrored-input pass mapped back.
/// Left band: weight on `flipped_back` ramps from 1 at column 0 to 0 at 5%
/// of the width; the right band mirrors it with weight on `direct`;
/// elsewhere both are averaged.
template <typename T>
Tensor<T> blend_postprocess(const Tensor<T>& direct, const Tensor<T>& flipped_back) {
  detail::require_same_shape(direct, flipped_back, "blend_postprocess");
  const Shape s = direct.shape();
  Tensor<T> out = Tensor<T>::zeros(s);
  const double last = s.w > 1 ? static_cast<double>(s.w - 1) : 1.0;
  for (std::size_t x = 0; x < s.w; ++x) {
    const double pos = static_cast<double>(x) / last;
    const double wl = std::clamp(1.0 - pos / kPostprocessBand, 0.0, 1.0);
    const double wr = std::clamp(1.0 - (1.0 - pos) / kPostprocessBand, 0.0, 1.0);
    const double wm = 1.0 - wl - wr;
    for (std::size_t r = 0; r < s.n * s.c * s.h; ++r) {
      const double a = direct.data()[r * s.w + x];
      const double b = flipped_back.data()[r * s.w + x];
      out.data()[r * s.w + x] = static_cast<T>(wl * b + wr * a + wm * 0.5 * (a + b));
    }
  }
  return out;
}

template <typename T>
using ForwardFn = std::function<ScaleOutputs<T>(const Tensor<T>&)>;

/// Two forward passes (image and its mirror) blended into one left disparity.
template <typename T>
Tensor<T> postprocess_flip(const ForwardFn<T>& forward, const Tensor<T>& left) {
  NoGradGuard no_grad;
  Tensor<T> d1 = forward(left).at(0).disp_left;
  Tensor<T> d2 = flip_h(forward(flip_h(left)).at(0).disp_left);
  return blend_postprocess(d1, d2);
}

inline constexpr double kMinDepth = 1e-3;
inline constexpr double kMaxDepth = 80.0;

/// depth = focal * baseline / max(d, floor), clamped to [min_depth, max_depth].
inline double disparity_to_depth(double disparity, double focal, double baseline, double min_depth = kMinDepth,
                                 double max_depth = kMaxDepth) {
  if (!(focal > 0) || !(baseline > 0)) throw Error("disparity_to_depth: focal and baseline must be positive");
  const double d = std::max(disparity, kPredictionFloor);
  return std::clamp(focal * baseline / d, min_depth, max_depth);
}

/// Nearest-neighbour resize of a (1,1,h,w) disparity map to (out_h, out_w),
/// with values scaled by out_w / w.
inline std::vector<double> resize_disparity(const std::vector<double>& disp, std::size_t h, std::size_t w, std::size_t out_h,
                                            std::size_t out_w) {
  if (disp.size() != h * w) throw ShapeError("resize_disparity: size mismatch");
  std::vector<double> out(out_h * out_w);
  const double scale = static_cast<double>(out_w) / static_cast<double>(w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const std::size_t sy = std::min(h - 1, y * h / out_h);
    for (std::size_t x = 0; x < out_w; ++x) {
      const std::size_t sx = std::min(w - 1, x * w / out_w);
      out[y * out_w + x] = disp[sy * w + sx] * scale;
    }
  }
  return out;
}

}  // namespace rrdn
