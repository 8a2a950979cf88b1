#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "rrdn/data.hpp"
#include "rrdn/gradcheck.hpp"
#include "rrdn/losses.hpp"
#include "rrdn/ops.hpp"
#include "rrdn/warp.hpp"

namespace rrdn {

namespace detail {

using TD = Tensor<double>;

inline TD random_tensor(Shape s, std::mt19937_64& rng, double lo, double hi) {
  std::vector<double> v(s.size());
  for (auto& x : v) x = uniform(rng, lo, hi);
  return TD::from(s, std::move(v));
}

// Fixed random projection to a scalar so that no output element cancels another.
inline TD project(const TD& t, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return reduce_sum(mul(t, random_tensor(t.shape(), rng, 0.5, 1.5)));
}

}  // namespace detail

/// Central finite-difference checks for every differentiable operation and
/// loss term, at 64-bit on randomized tensors no larger than 2x3x6x8.
inline std::vector<GradCheckReport> run_gradient_suite(std::uint64_t seed = 7, const GradCheckOptions& opt = {}) {
  using detail::project;
  using detail::random_tensor;
  using TD = Tensor<double>;
  std::mt19937_64 rng(seed);
  std::vector<GradCheckReport> reports;
  auto check = [&](const std::string& name, const TD& at, const std::function<TD(const TD&)>& f) {
    reports.push_back(grad_check(f, at, opt, name));
  };

  const Shape s4{2, 3, 6, 8};
  const Shape s1{2, 1, 6, 8};
  const TD a = random_tensor(s4, rng, -1.0, 1.0);
  const TD b = random_tensor(s4, rng, -1.0, 1.0);
  const TD pos = random_tensor(s4, rng, 0.2, 2.0);

  // Pointwise set.
  check("add", a, [&](const TD& x) { return project(add(x, b), 1); });
  check("sub", a, [&](const TD& x) { return project(sub(b, x), 2); });
  check("mul", a, [&](const TD& x) { return project(mul(x, b), 3); });
  check("mul_broadcast", random_tensor(s1, rng, -1, 1), [&](const TD& x) { return project(mul(x, b), 4); });
  check("div", pos, [&](const TD& x) { return project(div(b, x), 5); });
  check("abs", a, [&](const TD& x) { return project(abs(x), 6); });
  check("exp", a, [&](const TD& x) { return project(exp(x), 7); });
  check("log", pos, [&](const TD& x) { return project(log(x), 8); });
  check("sigmoid", a, [&](const TD& x) { return project(sigmoid(x), 9); });
  check("elu", a, [&](const TD& x) { return project(elu(x), 10); });
  check("scalar_mul", a, [&](const TD& x) { return project(scalar_mul(x, 2.5), 11); });
  check("x_times_x", a, [&](const TD& x) { return project(mul(x, x), 12); });
  check("neg", a, [&](const TD& x) { return project(neg(x), 27); });
  check("square", a, [&](const TD& x) { return project(square(x), 28); });
  check("add_scalar", a, [&](const TD& x) { return project(add_scalar(x, 0.5), 29); });
  check("rsub_scalar", a, [&](const TD& x) { return project(rsub_scalar(1.0, x), 30); });
  check("relu", a, [&](const TD& x) { return project(relu(x), 31); });
  check("clamp", a, [&](const TD& x) { return project(clamp(x, -0.5, 0.5), 32); });

  // Layout and resampling.
  check("nearest_upsample2x", random_tensor({2, 3, 3, 4}, rng, -1, 1),
        [&](const TD& x) { return project(nearest_upsample2x(x), 13); });
  check("avg_pool2x", a, [&](const TD& x) { return project(avg_pool2x(x), 14); });
  check("reduce_mean", a, [&](const TD& x) { return project(reduce_mean(x), 15); });
  check("concat_channels", a, [&](const TD& x) { return project(concat_channels<double>({b, x}), 16); });
  check("box_filter3", a, [&](const TD& x) { return project(box_filter3(x), 17); });
  check("max_pool2x", a, [&](const TD& x) { return project(max_pool2x(x), 33); });
  check("downsample_area", a, [&](const TD& x) { return project(downsample_area(x, 2), 34); });
  check("mean_channels", a, [&](const TD& x) { return project(mean_channels(x), 35); });
  check("slice_channels", a, [&](const TD& x) { return project(slice_channels(x, 1, 3), 36); });
  check("slice_batch", a, [&](const TD& x) { return project(slice_batch(x, 1, 2), 37); });
  check("diff_x", a, [&](const TD& x) { return project(diff_x(x), 38); });
  check("diff_y", a, [&](const TD& x) { return project(diff_y(x), 39); });
  check("flip_h", a, [&](const TD& x) { return project(flip_h(x), 40); });

  // Convolution with a rectangular kernel, stride and padding.
  const TD weight = random_tensor({4, 3, 3, 5}, rng, -0.5, 0.5);
  const TD bias = random_tensor({4, 1, 1, 1}, rng, -0.5, 0.5);
  const Conv2dOptions conv_opt{{2, 1}, {1, 2}};
  check("conv2d_input", a, [&](const TD& x) { return project(conv2d(x, weight, bias, conv_opt), 18); });
  check("conv2d_weight", weight, [&](const TD& w) { return project(conv2d(a, w, bias, conv_opt), 19); });
  check("conv2d_bias", bias, [&](const TD& bb) { return project(conv2d(a, weight, bb, conv_opt), 20); });

  // Sampler: offsets keep most samples inside the image, some clamp.
  const TD image = random_tensor(s4, rng, 0, 1);
  const TD offsets = random_tensor(s1, rng, -2.7, 2.7);
  check("bilinear_hsample_image", image, [&](const TD& x) { return project(bilinear_hsample(x, offsets), 21); });
  check("bilinear_hsample_offsets", offsets, [&](const TD& o) { return project(bilinear_hsample(image, o), 22); });

  // Loss terms.
  const TD left = random_tensor(s4, rng, 0, 1);
  const TD right = random_tensor(s4, rng, 0, 1);
  const TD recon = random_tensor(s4, rng, 0, 1);
  const TD disp_l = random_tensor(s1, rng, 0.3, 2.4);
  const TD disp_r = random_tensor(s1, rng, 0.3, 2.4);
  const TD mask_l = random_tensor(s1, rng, 0.1, 0.9);
  const TD mask_r = random_tensor(s1, rng, 0.1, 0.9);
  check("ssim", recon, [&](const TD& x) { return project(ssim(left, x), 23); });
  check("reconstruction_loss", recon, [&](const TD& x) { return reconstruction_loss(left, x, 0.85); });
  check("smoothness_loss", disp_l, [&](const TD& d) { return smoothness_loss(d, left); });
  check("ambiguity_loss", mask_l, [&](const TD& m) { return ambiguity_loss(m, mask_r); });
  check("lr_consistency_disp_left", disp_l, [&](const TD& d) { return lr_consistency_loss(d, disp_r, mask_l, mask_r); });
  check("lr_consistency_disp_right", disp_r, [&](const TD& d) { return lr_consistency_loss(disp_l, d, mask_l, mask_r); });
  check("lr_consistency_mask", mask_l, [&](const TD& m) { return lr_consistency_loss(disp_l, disp_r, m, mask_r); });
  check("reconstruct_left_disp", disp_l,
        [&](const TD& d) { return project(reconstruct_left(left, right, d, mask_l).image, 24); });
  check("reconstruct_left_mask", mask_l,
        [&](const TD& m) { return project(reconstruct_left(left, right, disp_l, m).image, 25); });
  check("reconstruct_right_disp", disp_r,
        [&](const TD& d) { return project(reconstruct_right(left, right, d, mask_r).image, 26); });

  const FeatureExtractor<double> fx({4, 6, 8}, 11);
  const TD small_left = random_tensor({1, 3, 8, 8}, rng, 0, 1);
  const TD small_recon = random_tensor({1, 3, 8, 8}, rng, 0, 1);
  check("perceptual_loss", small_recon, [&](const TD& x) { return perceptual_loss(small_left, x, fx); });

  // Full multiscale objective, differentiated w.r.t. two disparity logits.
  {
    const Shape full{1, 3, 32, 32};
    const TD tl = random_tensor(full, rng, 0, 1);
    const TD tr = random_tensor(full, rng, 0, 1);
    std::vector<TD> logits;
    for (std::size_t s = 0; s < 4; ++s) logits.push_back(random_tensor({1, 4, 32u >> s, 32u >> s}, rng, -1, 1));
    TD hot0 = TD::zeros(logits[0].shape());
    TD hot1 = TD::zeros(logits[0].shape());
    hot0.at(0, 0, 5, 9) = 1;
    hot1.at(0, 1, 20, 20) = 1;
    TD base = logits[0].clone();
    base.at(0, 0, 5, 9) = 0;
    base.at(0, 1, 20, 20) = 0;
    const TD probes = TD::from({2, 1, 1, 1}, {logits[0].at(0, 0, 5, 9), logits[0].at(0, 1, 20, 20)});
    const FeatureExtractor<double> tiny({4, 4, 4}, 13);
    check("total_loss", probes, [&](const TD& two) {
      ScaleOutputs<double> outs(4);
      for (std::size_t s = 0; s < 4; ++s) {
        TD lg = logits[s];
        if (s == 0) lg = add(base, add(mul(slice_batch(two, 0, 1), hot0), mul(slice_batch(two, 1, 2), hot1)));
        const TD head = sigmoid(lg);
        const double max_disp = 0.3 * static_cast<double>(head.shape().w);
        outs[s].head = head;
        outs[s].disp_left = scalar_mul(slice_channels(head, 0, 1), max_disp);
        outs[s].disp_right = scalar_mul(slice_channels(head, 1, 2), max_disp);
        outs[s].mask_left = slice_channels(head, 2, 3);
        outs[s].mask_right = slice_channels(head, 3, 4);
      }
      return total_loss(outs, tl, tr, LossWeights{}, &tiny).total;
    });
  }
  return reports;
}

}  // namespace rrdn
