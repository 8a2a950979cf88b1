#pragma once

#include <utility>

#include "rrdn/ops.hpp"

namespace rrdn {

// Geometry convention: a scene point at left-image column j appears at
// right-image column j - d, d >= 0.

namespace detail {

template <typename T>
void require_non_negative(const Tensor<T>& disparity, const char* op) {
  for (T v : disparity.data()) {
    if (!(v >= T(0))) throw Error(std::string(op) + ": disparity must be non-negative and finite");
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (!(a.shape() == b.shape())) throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
}

}  // namespace detail

/// g(I_R, D_L): samples the right image at column j - D_L(j).
template <typename T>
Tensor<T> warp_right_to_left(const Tensor<T>& right, const Tensor<T>& disp_left) {
  detail::require_non_negative(disp_left, "warp_right_to_left");
  return bilinear_hsample(right, disp_left);
}

/// g(I_L, D_R): samples the left image at column j + D_R(j).
template <typename T>
Tensor<T> warp_left_to_right(const Tensor<T>& left, const Tensor<T>& disp_right) {
  detail::require_non_negative(disp_right, "warp_left_to_right");
  return bilinear_hsample(left, neg(disp_right));
}

/// Border masks of shape (1,1,height,width); the default single row broadcasts
/// over any image height. Left: 0 where j < 0.15 w. Right: 0 where j > 0.85 w.
/// Thresholds are compared literally, without rounding to whole columns.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> disocclusion_masks(std::size_t width, std::size_t height = 1) {
  if (width == 0 || height == 0) throw ShapeError("disocclusion_masks: width and height must be >= 1");
  const double lo = 0.15 * static_cast<double>(width);
  const double hi = 0.85 * static_cast<double>(width);
  auto left = Tensor<T>::zeros({1, 1, height, width});
  auto right = Tensor<T>::zeros({1, 1, height, width});
  for (std::size_t i = 0; i < height; ++i)
    for (std::size_t j = 0; j < width; ++j) {
      const double col = static_cast<double>(j);
      left.data()[i * width + j] = col < lo ? T(0) : T(1);
      right.data()[i * width + j] = col > hi ? T(0) : T(1);
    }
  return {left, right};
}

template <typename T>
struct Reconstruction {
  Tensor<T> image;          // Ĩ
  Tensor<T> combined_mask;  // ã = a ⊙ dis_occ
};

namespace detail {

template <typename T>
Reconstruction<T> blend(const Tensor<T>& self_view, const Tensor<T>& warped, const Tensor<T>& mask,
                        const Tensor<T>& disocc) {
  Tensor<T> combined = mul(mask, disocc);
  // ã ⊙ g + (1 - ã) ⊙ I
  Tensor<T> image = add(mul(combined, warped), mul(rsub_scalar(T(1), combined), self_view));
  return {image, combined};
}

template <typename T>
void check_reconstruction_inputs(const Tensor<T>& self_view, const Tensor<T>& other_view, const Tensor<T>& disp,
                                 const Tensor<T>& mask, const char* op) {
  require_same_shape(self_view, other_view, op);
  const Shape s = self_view.shape();
  const Shape single{s.n, 1, s.h, s.w};
  if (!(disp.shape() == single)) throw ShapeError(std::string(op) + ": disparity shape " + disp.shape().str() + " expected " + single.str());
  if (!(mask.shape() == single)) throw ShapeError(std::string(op) + ": mask shape " + mask.shape().str() + " expected " + single.str());
}

}  // namespace detail

/// Ĩ_L = ã_L ⊙ g(I_R, D_L) + (1 - ã_L) ⊙ I_L, with ã_L = a_L ⊙ dis_occ_L.
template <typename T>
Reconstruction<T> reconstruct_left(const Tensor<T>& left, const Tensor<T>& right, const Tensor<T>& disp_left,
                                   const Tensor<T>& mask_left) {
  detail::check_reconstruction_inputs(left, right, disp_left, mask_left, "reconstruct_left");
  auto [disocc, unused] = disocclusion_masks<T>(left.shape().w);
  return detail::blend(left, warp_right_to_left(right, disp_left), mask_left, disocc);
}

/// Ĩ_R = ã_R ⊙ g(I_L, D_R) + (1 - ã_R) ⊙ I_R, with ã_R = a_R ⊙ dis_occ_R.
template <typename T>
Reconstruction<T> reconstruct_right(const Tensor<T>& left, const Tensor<T>& right, const Tensor<T>& disp_right,
                                    const Tensor<T>& mask_right) {
  detail::check_reconstruction_inputs(right, left, disp_right, mask_right, "reconstruct_right");
  auto [unused, disocc] = disocclusion_masks<T>(right.shape().w);
  return detail::blend(right, warp_left_to_right(left, disp_right), mask_right, disocc);
}

}  // namespace rrdn
