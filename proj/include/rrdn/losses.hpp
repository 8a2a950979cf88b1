#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "rrdn/checkpoint.hpp"
#include "rrdn/network.hpp"
#include "rrdn/ops.hpp"
#include "rrdn/param_store.hpp"
#include "rrdn/warp.hpp"

namespace rrdn {

struct LossWeights {
  double rec = 1.0;
  double ds = 0.1;
  double p = 0.1;
  double a = 0.2;
  double lr = 1.0;
  double alpha = 0.85;  // L1 share of the reconstruction term

  void validate() const {
    for (double v : {rec, ds, p, a, lr, alpha}) {
      if (!(v >= 0)) throw ConfigError("loss weights must be non-negative");
    }
    if (alpha > 1) throw ConfigError("alpha must be in [0,1]");
  }
};

// SSIM constants and window: 3x3 box, no padding.
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

/// Per-pixel structural dissimilarity clamp((1 - SSIM) / 2, 0, 1).
/// Output is (n, c, h-2, w-2).
template <typename T>
Tensor<T> ssim(const Tensor<T>& x, const Tensor<T>& y) {
  detail::require_same_shape(x, y, "ssim");
  const T c1 = static_cast<T>(kSsimC1);
  const T c2 = static_cast<T>(kSsimC2);
  Tensor<T> mu_x = box_filter3(x);
  Tensor<T> mu_y = box_filter3(y);
  Tensor<T> mu_xx = square(mu_x);
  Tensor<T> mu_yy = square(mu_y);
  Tensor<T> mu_xy = mul(mu_x, mu_y);
  Tensor<T> sigma_x = sub(box_filter3(square(x)), mu_xx);
  Tensor<T> sigma_y = sub(box_filter3(square(y)), mu_yy);
  Tensor<T> sigma_xy = sub(box_filter3(mul(x, y)), mu_xy);
  Tensor<T> num = mul(add_scalar(scalar_mul(mu_xy, T(2)), c1), add_scalar(scalar_mul(sigma_xy, T(2)), c2));
  Tensor<T> den = mul(add_scalar(add(mu_xx, mu_yy), c1), add_scalar(add(sigma_x, sigma_y), c2));
  Tensor<T> s = div(num, den);
  return clamp(scalar_mul(rsub_scalar(T(1), s), T(0.5)), T(0), T(1));
}

/// alpha * mean|I - Ĩ| + (1 - alpha) * mean(ssim(I, Ĩ)).
template <typename T>
Tensor<T> reconstruction_loss(const Tensor<T>& image, const Tensor<T>& recon, double alpha) {
  detail::require_same_shape(image, recon, "reconstruction_loss");
  Tensor<T> l1 = reduce_mean(abs(sub(image, recon)));
  if (alpha >= 1.0) return l1;
  Tensor<T> structural = reduce_mean(ssim(image, recon));
  return add(scalar_mul(l1, static_cast<T>(alpha)), scalar_mul(structural, static_cast<T>(1.0 - alpha)));
}

/// Edge-aware smoothness on width-normalised disparity: mean|∂x d| e^{-|∂x I|}
/// + mean|∂y d| e^{-|∂y I|}, image gradients averaged over colour channels.
template <typename T>
Tensor<T> smoothness_loss(const Tensor<T>& disparity, const Tensor<T>& image) {
  const Shape ds = disparity.shape();
  const Shape is = image.shape();
  if (ds.n != is.n || ds.h != is.h || ds.w != is.w || ds.c != 1) {
    throw ShapeError("smoothness_loss: disparity " + ds.str() + " does not match image " + is.str());
  }
  Tensor<T> d = scalar_mul(disparity, T(1) / static_cast<T>(ds.w));
  Tensor<T> wx = exp(neg(mean_channels(abs(diff_x(image)))));
  Tensor<T> wy = exp(neg(mean_channels(abs(diff_y(image)))));
  Tensor<T> sx = reduce_mean(mul(abs(diff_x(d)), wx));
  Tensor<T> sy = reduce_mean(mul(abs(diff_y(d)), wy));
  return add(sx, sy);
}

/// Frozen three-stage convolutional feature extractor with the layer
/// geometry of VGG19 up to relu1_2, relu2_2 and relu3_4 (2, 2 and 4 3x3
/// convolutions, 2x2 max pooling between stages).
template <typename T>
class FeatureExtractor {
 public:
  static constexpr std::uint64_t kDefaultSeed = 0x5EED'F00D;
  static inline const std::array<std::size_t, 3> kDefaultChannels{64, 128, 256};

  explicit FeatureExtractor(std::array<std::size_t, 3> channels = kDefaultChannels, std::uint64_t seed = kDefaultSeed)
      : channels_(channels) {
    std::mt19937_64 rng(seed);
    std::size_t cin = 3;
    for (std::size_t stage = 0; stage < 3; ++stage) {
      for (std::size_t layer = 0; layer < kLayers[stage]; ++layer) {
        const std::string name = layer_name(stage, layer);
        params_.add(name + ".weight", kaiming_normal<T>({channels[stage], cin, 3, 3}, rng, false));
        params_.add(name + ".bias", Tensor<T>::zeros({channels[stage], 1, 1, 1}, false));
        cin = channels[stage];
      }
    }
  }

  // Replaces the weights with those stored in a checkpoint-format file.
  void load(const CheckpointContents& c) { load_into(c, params_); }

  KeyValues describe() const {
    KeyValues kv;
    kv.set("kind", "feature_extractor");
    kv.set("channels", join_list(channels_));
    return kv;
  }

  const ParamStore<T>& params() const { return params_; }
  const std::array<std::size_t, 3>& channels() const { return channels_; }

  static constexpr std::size_t kMinSize = 4;

  std::array<Tensor<T>, 3> extract(const Tensor<T>& image) const {
    const Shape s = image.shape();
    if (s.c != 3 || s.h < kMinSize || s.w < kMinSize || s.h % 4 != 0 || s.w % 4 != 0) {
      throw ShapeError("feature extractor needs 3-channel input with height and width multiples of 4 (>= 4), got " + s.str());
    }
    std::array<Tensor<T>, 3> out;
    Tensor<T> x = image;
    for (std::size_t stage = 0; stage < 3; ++stage) {
      if (stage > 0) x = max_pool2x(x);
      for (std::size_t layer = 0; layer < kLayers[stage]; ++layer) {
        const std::string name = layer_name(stage, layer);
        Conv2dOptions o;
        o.padding = {1, 1};
        x = relu(conv2d(x, params_.get(name + ".weight"), params_.get(name + ".bias"), o));
      }
      out[stage] = x;
    }
    return out;
  }

 private:
  static constexpr std::array<std::size_t, 3> kLayers{2, 2, 4};
  static std::string layer_name(std::size_t stage, std::size_t layer) {
    return "conv" + std::to_string(stage + 1) + "_" + std::to_string(layer + 1);
  }

  std::array<std::size_t, 3> channels_;
  ParamStore<T> params_;
};

/// Sum over the three feature stages of mean|φ(I) - φ(Ĩ)|.
template <typename T>
Tensor<T> perceptual_loss(const Tensor<T>& image, const Tensor<T>& recon, const FeatureExtractor<T>& fx) {
  detail::require_same_shape(image, recon, "perceptual_loss");
  std::array<Tensor<T>, 3> target;
  {
    NoGradGuard no_grad;
    target = fx.extract(image.detach());
  }
  std::array<Tensor<T>, 3> pred = fx.extract(recon);
  Tensor<T> total = reduce_mean(abs(sub(pred[0], target[0])));
  for (std::size_t l = 1; l < 3; ++l) total = add(total, reduce_mean(abs(sub(pred[l], target[l]))));
  return total;
}

/// mean(-log a_L) + mean(-log a_R) on the raw masks.
template <typename T>
Tensor<T> ambiguity_loss(const Tensor<T>& mask_left, const Tensor<T>& mask_right) {
  return add(reduce_mean(neg(log(mask_left))), reduce_mean(neg(log(mask_right))));
}

/// mean(ã_L |D_L - g(D_R, D_L)|) + mean(ã_R |D_R - g(D_L, D_R)|).
template <typename T>
Tensor<T> lr_consistency_loss(const Tensor<T>& disp_left, const Tensor<T>& disp_right, const Tensor<T>& combined_left,
                              const Tensor<T>& combined_right) {
  detail::require_same_shape(disp_left, disp_right, "lr_consistency_loss");
  Tensor<T> right_in_left = warp_right_to_left(disp_right, disp_left);
  Tensor<T> left_in_right = warp_left_to_right(disp_left, disp_right);
  Tensor<T> l = reduce_mean(mul(combined_left, abs(sub(disp_left, right_in_left))));
  Tensor<T> r = reduce_mean(mul(combined_right, abs(sub(disp_right, left_in_right))));
  return add(l, r);
}

// Extra smoothness factor at scale s: 0.1 / 2^(s-1).
inline double smoothness_scale_factor(std::size_t s) { return 0.1 / std::pow(2.0, static_cast<double>(s) - 1.0); }

// Weighted term contributions; total is the differentiable sum.
template <typename T>
struct LossTerms {
  Tensor<T> total;
  double rec = 0, ds = 0, p = 0, a = 0, lr = 0;

  LossTerms& operator+=(const LossTerms& o) {
    total = total.defined() ? add(total, o.total) : o.total;
    rec += o.rec;
    ds += o.ds;
    p += o.p;
    a += o.a;
    lr += o.lr;
    return *this;
  }
};

/// Loss at one scale. Images are the inputs downsampled to that scale.
/// Terms with zero weight are skipped.
template <typename T>
LossTerms<T> scale_loss(std::size_t s, const ScaleOutput<T>& out, const Tensor<T>& left, const Tensor<T>& right,
                        const LossWeights& w, const FeatureExtractor<T>* fx) {
  w.validate();
  LossTerms<T> terms;
  std::vector<Tensor<T>> parts;
  auto push = [&](const Tensor<T>& t, double weight, double& slot) {
    Tensor<T> weighted = scalar_mul(t, static_cast<T>(weight));
    slot = static_cast<double>(weighted.item());
    parts.push_back(weighted);
  };

  const auto recon_l = reconstruct_left(left, right, out.disp_left, out.mask_left);
  const auto recon_r = reconstruct_right(left, right, out.disp_right, out.mask_right);
  if (w.rec > 0) {
    push(add(reconstruction_loss(left, recon_l.image, w.alpha), reconstruction_loss(right, recon_r.image, w.alpha)), w.rec,
         terms.rec);
  }
  if (w.ds > 0) {
    push(add(smoothness_loss(out.disp_left, left), smoothness_loss(out.disp_right, right)), w.ds * smoothness_scale_factor(s),
         terms.ds);
  }
  if (w.p > 0) {
    if (!fx) throw Error("scale_loss: perceptual weight is non-zero but no feature extractor was given");
    push(add(perceptual_loss(left, recon_l.image, *fx), perceptual_loss(right, recon_r.image, *fx)), w.p, terms.p);
  }
  if (w.a > 0) push(ambiguity_loss(out.mask_left, out.mask_right), w.a, terms.a);
  if (w.lr > 0) {
    // Width-normalised, like smoothness.
    const double width = static_cast<double>(out.disp_left.shape().w);
    push(lr_consistency_loss(out.disp_left, out.disp_right, recon_l.combined_mask, recon_r.combined_mask), w.lr / width,
         terms.lr);
  }

  if (parts.empty()) {
    terms.total = Tensor<T>::scalar(T(0));
    return terms;
  }
  terms.total = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) terms.total = add(terms.total, parts[i]);
  return terms;
}

/// Sum of scale_loss over scales 0..num_scales-1. Images are full resolution;
/// the pyramid is built by area downsampling.
template <typename T>
LossTerms<T> total_loss(const ScaleOutputs<T>& outputs, const Tensor<T>& left, const Tensor<T>& right, const LossWeights& w,
                        const FeatureExtractor<T>* fx, std::size_t num_scales = 4) {
  if (outputs.size() < num_scales) {
    throw Error("total_loss: expected " + std::to_string(num_scales) + " scales, got " + std::to_string(outputs.size()));
  }
  LossTerms<T> sum;
  for (std::size_t s = 0; s < num_scales; ++s) {
    const ScaleOutput<T>& out = outputs[s];
    if (!out.disp_left.defined() || !out.disp_right.defined() || !out.mask_left.defined() || !out.mask_right.defined()) {
      throw Error("total_loss: scale " + std::to_string(s) + " is missing");
    }
    const std::size_t factor = std::size_t{1} << s;
    sum += scale_loss(s, out, downsample_area(left, factor), downsample_area(right, factor), w, fx);
  }
  return sum;
}

}  // namespace rrdn
