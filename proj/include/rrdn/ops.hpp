#pragma once

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "rrdn/tensor.hpp"

namespace rrdn {

// Lower bound applied inside log().
inline constexpr double kLogFloor = 1e-7;

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  auto dim = [&](std::size_t x, std::size_t y, const char* name) {
    if (x == y || y == 1) return x;
    if (x == 1) return y;
    throw ShapeError(std::string(op) + ": cannot broadcast dimension " + name + " (" +
                     std::to_string(x) + " vs " + std::to_string(y) + ") of " + a.str() +
                     " and " + b.str());
  };
  return {dim(a.n, b.n, "n"), dim(a.c, b.c, "c"), dim(a.h, b.h, "h"), dim(a.w, b.w, "w")};
}

// Element strides of `s` when iterated over `out`; broadcast dimensions get 0.
inline std::array<std::size_t, 4> broadcast_strides(const Shape& s, const Shape& out) {
  std::array<std::size_t, 4> st{s.c * s.h * s.w, s.h * s.w, s.w, 1};
  if (s.n == 1 && out.n != 1) st[0] = 0;
  if (s.c == 1 && out.c != 1) st[1] = 0;
  if (s.h == 1 && out.h != 1) st[2] = 0;
  if (s.w == 1 && out.w != 1) st[3] = 0;
  return st;
}

template <typename Fn>
void for_each_broadcast(const Shape& out, const Shape& a, const Shape& b, Fn&& fn) {
  if (a == out && b == out) {
    for (std::size_t i = 0; i < out.size(); ++i) fn(i, i, i);
    return;
  }
  const auto sa = broadcast_strides(a, out);
  const auto sb = broadcast_strides(b, out);
  std::size_t o = 0;
  for (std::size_t n = 0; n < out.n; ++n)
    for (std::size_t c = 0; c < out.c; ++c)
      for (std::size_t h = 0; h < out.h; ++h)
        for (std::size_t w = 0; w < out.w; ++w, ++o) {
          fn(o, n * sa[0] + c * sa[1] + h * sa[2] + w * sa[3],
             n * sb[0] + c * sb[1] + h * sb[2] + w * sb[3]);
        }
}

// f(x, y) with partials dfx(x, y), dfy(x, y); numpy-style broadcasting on all four dims.
template <typename T, typename F, typename DX, typename DY>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, const char* op, F f, DX dfx, DY dfy) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape(), op);
  std::vector<T> out(out_shape.size());
  const auto& ad = a.data();
  const auto& bd = b.data();
  for_each_broadcast(out_shape, a.shape(), b.shape(),
                     [&](std::size_t o, std::size_t ia, std::size_t ib) { out[o] = f(ad[ia], bd[ib]); });
  auto an = a.node();
  auto bn = b.node();
  return make_result<T>(out_shape, std::move(out), {an, bn}, [an, bn, dfx, dfy](Node<T>& self) {
    const auto& g = self.grad;
    const auto& ad = an->data;
    const auto& bd = bn->data;
    if (an->requires_grad) {
      auto& ga = an->grad_buffer();
      for_each_broadcast(self.shape, an->shape, bn->shape, [&](std::size_t o, std::size_t ia, std::size_t ib) {
        ga[ia] += g[o] * dfx(ad[ia], bd[ib]);
      });
    }
    if (bn->requires_grad) {
      auto& gb = bn->grad_buffer();
      for_each_broadcast(self.shape, an->shape, bn->shape, [&](std::size_t o, std::size_t ia, std::size_t ib) {
        gb[ib] += g[o] * dfy(ad[ia], bd[ib]);
      });
    }
  });
}

// f(x) with derivative df(x, y) where y = f(x).
template <typename T, typename F, typename DF>
Tensor<T> unary(const Tensor<T>& a, F f, DF df) {
  const auto& ad = a.data();
  std::vector<T> out(ad.size());
  for (std::size_t i = 0; i < ad.size(); ++i) out[i] = f(ad[i]);
  auto an = a.node();
  return make_result<T>(a.shape(), std::move(out), {an}, [an, df](Node<T>& self) {
    auto& ga = an->grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * df(an->data[i], self.data[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Pointwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(
      a, b, "add", [](T x, T y) { return x + y; }, [](T, T) { return T(1); }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(
      a, b, "sub", [](T x, T y) { return x - y; }, [](T, T) { return T(1); }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(
      a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y) { return y; }, [](T x, T) { return x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(
      a, b, "div", [](T x, T y) { return x / y; }, [](T, T y) { return T(1) / y; },
      [](T x, T y) { return -x / (y * y); });
}

template <typename T>
Tensor<T> scalar_mul(const Tensor<T>& a, T s) {
  return detail::unary(a, [s](T x) { return s * x; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  return detail::unary(a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

// s - a
template <typename T>
Tensor<T> rsub_scalar(T s, const Tensor<T>& a) {
  return detail::unary(a, [s](T x) { return s - x; }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  return scalar_mul(a, T(-1));
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
  return detail::unary(a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& a) {
  return detail::unary(
      a, [](T x) { return std::abs(x); }, [](T x, T) { return x > 0 ? T(1) : (x < 0 ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  return detail::unary(a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

// log(max(x, 1e-7)); the floor has zero gradient.
template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  for (T x : a.data()) {
    if (!(x >= T(0))) throw Error("log: argument is negative or NaN");
  }
  const T floor = static_cast<T>(kLogFloor);
  return detail::unary(
      a, [floor](T x) { return std::log(std::max(x, floor)); },
      [floor](T x, T) { return x > floor ? T(1) / x : T(0); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return detail::unary(
      a, [](T x) { return T(1) / (T(1) + std::exp(-x)); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> elu(const Tensor<T>& a) {
  return detail::unary(
      a, [](T x) { return x >= 0 ? x : std::expm1(x); }, [](T x, T y) { return x >= 0 ? T(1) : y + T(1); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return detail::unary(
      a, [](T x) { return x > 0 ? x : T(0); }, [](T x, T) { return x > 0 ? T(1) : T(0); });
}

// Gradient is zero where the value was clamped.
template <typename T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
  return detail::unary(
      a, [lo, hi](T x) { return std::min(std::max(x, lo), hi); },
      [lo, hi](T x, T) { return (x >= lo && x <= hi) ? T(1) : T(0); });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> reduce_sum(const Tensor<T>& a) {
  T s = 0;
  for (T x : a.data()) s += x;
  auto an = a.node();
  return detail::make_result<T>({1, 1, 1, 1}, {s}, {an}, [an](detail::Node<T>& self) {
    auto& ga = an->grad_buffer();
    for (auto& g : ga) g += self.grad[0];
  });
}

template <typename T>
Tensor<T> reduce_mean(const Tensor<T>& a) {
  if (a.size() == 0) throw ShapeError("reduce_mean of empty tensor");
  T s = 0;
  for (T x : a.data()) s += x;
  const T inv = T(1) / static_cast<T>(a.size());
  auto an = a.node();
  return detail::make_result<T>({1, 1, 1, 1}, {s * inv}, {an}, [an, inv](detail::Node<T>& self) {
    auto& ga = an->grad_buffer();
    const T g = self.grad[0] * inv;
    for (auto& x : ga) x += g;
  });
}

// Mean over the channel axis: (n,c,h,w) -> (n,1,h,w).
template <typename T>
Tensor<T> mean_channels(const Tensor<T>& a) {
  const Shape s = a.shape();
  const Shape os{s.n, 1, s.h, s.w};
  std::vector<T> out(os.size(), T(0));
  const T inv = T(1) / static_cast<T>(s.c);
  const auto& ad = a.data();
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t p = 0; p < s.plane(); ++p) out[n * s.plane() + p] += ad[(n * s.c + c) * s.plane() + p] * inv;
  auto an = a.node();
  return detail::make_result<T>(os, std::move(out), {an}, [an, inv](detail::Node<T>& self) {
    const Shape s = an->shape;
    auto& ga = an->grad_buffer();
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t c = 0; c < s.c; ++c)
        for (std::size_t p = 0; p < s.plane(); ++p)
          ga[(n * s.c + c) * s.plane() + p] += self.grad[n * s.plane() + p] * inv;
  });
}

// ---------------------------------------------------------------------------
// Convolution

struct Conv2dOptions {
  std::array<std::size_t, 2> stride{1, 1};
  std::array<std::size_t, 2> padding{0, 0};
};

namespace detail {

template <typename T>
void im2col(const T* x, std::size_t cin, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
            const Conv2dOptions& o, std::size_t oh, std::size_t ow, T* col) {
  const std::ptrdiff_t rows = static_cast<std::ptrdiff_t>(cin * kh * kw);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    const std::size_t ci = r / (kh * kw);
    const std::size_t ki = (r / kw) % kh;
    const std::size_t kj = r % kw;
    T* dst = col + r * oh * ow;
    const T* src = x + ci * h * w;
    for (std::size_t y = 0; y < oh; ++y) {
      const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * o.stride[0] + ki) - static_cast<std::ptrdiff_t>(o.padding[0]);
      if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) {
        std::fill(dst + y * ow, dst + (y + 1) * ow, T(0));
        continue;
      }
      for (std::size_t xo = 0; xo < ow; ++xo) {
        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(xo * o.stride[1] + kj) - static_cast<std::ptrdiff_t>(o.padding[1]);
        dst[y * ow + xo] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) ? T(0) : src[iy * w + ix];
      }
    }
  }
}

template <typename T>
void col2im(const T* col, std::size_t cin, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
            const Conv2dOptions& o, std::size_t oh, std::size_t ow, T* dx) {
  const std::ptrdiff_t channels = static_cast<std::ptrdiff_t>(cin);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ci = 0; ci < channels; ++ci) {
    T* dst = dx + ci * h * w;
    for (std::size_t ki = 0; ki < kh; ++ki)
      for (std::size_t kj = 0; kj < kw; ++kj) {
        const T* src = col + ((ci * kh + ki) * kw + kj) * oh * ow;
        for (std::size_t y = 0; y < oh; ++y) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * o.stride[0] + ki) - static_cast<std::ptrdiff_t>(o.padding[0]);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t xo = 0; xo < ow; ++xo) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(xo * o.stride[1] + kj) - static_cast<std::ptrdiff_t>(o.padding[1]);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(w)) dst[iy * w + ix] += src[y * ow + xo];
          }
        }
      }
  }
}

}  // namespace detail

/// 2-D cross-correlation with zero padding. Kernels may be rectangular.
///
/// weight is (c_out, c_in, k_h, k_w); bias is (c_out,1,1,1) or any tensor with
/// c_out elements, or undefined for no bias.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 const Conv2dOptions& opt = {}) {
  const Shape is = input.shape();
  const Shape ws = weight.shape();
  if (ws.c != is.c) {
    throw ShapeError("conv2d: input channel dimension " + std::to_string(is.c) +
                     " does not match weight c_in " + std::to_string(ws.c));
  }
  if (opt.stride[0] < 1 || opt.stride[1] < 1) throw ShapeError("conv2d: stride must be >= 1");
  if (is.h + 2 * opt.padding[0] < ws.h) throw ShapeError("conv2d: kernel height exceeds padded input height");
  if (is.w + 2 * opt.padding[1] < ws.w) throw ShapeError("conv2d: kernel width exceeds padded input width");
  if (bias.defined() && bias.size() != ws.n) {
    throw ShapeError("conv2d: bias length " + std::to_string(bias.size()) + " does not match c_out " +
                     std::to_string(ws.n));
  }
  const std::size_t oh = (is.h + 2 * opt.padding[0] - ws.h) / opt.stride[0] + 1;
  const std::size_t ow = (is.w + 2 * opt.padding[1] - ws.w) / opt.stride[1] + 1;
  const Shape os{is.n, ws.n, oh, ow};
  const std::size_t k = ws.c * ws.h * ws.w;
  const std::size_t p = oh * ow;
  const bool pointwise = ws.h == 1 && ws.w == 1 && opt.stride[0] == 1 && opt.stride[1] == 1 &&
                         opt.padding[0] == 0 && opt.padding[1] == 0;

  using Mat = detail::RowMat<T>;
  std::vector<T> out(os.size());
  std::vector<T> col(pointwise ? 0 : k * p);
  Eigen::Map<const Mat> wmat(weight.data().data(), ws.n, k);
  for (std::size_t n = 0; n < is.n; ++n) {
    const T* x = input.data().data() + n * is.c * is.plane();
    const T* cp = x;
    if (!pointwise) {
      detail::im2col(x, is.c, is.h, is.w, ws.h, ws.w, opt, oh, ow, col.data());
      cp = col.data();
    }
    Eigen::Map<const Mat> cmat(cp, k, p);
    Eigen::Map<Mat> omat(out.data() + n * ws.n * p, ws.n, p);
    omat.noalias() = wmat * cmat;
    if (bias.defined()) {
      for (std::size_t co = 0; co < ws.n; ++co) omat.row(co).array() += bias.data()[co];
    }
  }

  auto in = input.node();
  auto wn = weight.node();
  std::vector<std::shared_ptr<detail::Node<T>>> parents{in, wn};
  auto bn = bias.defined() ? bias.node() : nullptr;
  if (bn) parents.push_back(bn);
  return detail::make_result<T>(os, std::move(out), std::move(parents), [in, wn, bn, opt, oh, ow, k, p, pointwise](detail::Node<T>& self) {
    const Shape is = in->shape;
    const Shape ws = wn->shape;
    Eigen::Map<const Mat> wmat(wn->data.data(), ws.n, k);
    std::vector<T> col(pointwise ? 0 : k * p);
    std::vector<T> dcol(in->requires_grad && !pointwise ? k * p : 0);
    for (std::size_t n = 0; n < is.n; ++n) {
      Eigen::Map<const Mat> gmat(self.grad.data() + n * ws.n * p, ws.n, p);
      if (bn && bn->requires_grad) {
        auto& gb = bn->grad_buffer();
        const T* g = self.grad.data() + n * ws.n * p;
        for (std::size_t co = 0; co < ws.n; ++co) {
          T acc = 0;
          for (std::size_t i = 0; i < p; ++i) acc += g[co * p + i];
          gb[co] += acc;
        }
      }
      if (wn->requires_grad) {
        const T* x = in->data.data() + n * is.c * is.plane();
        const T* cp = x;
        if (!pointwise) {
          detail::im2col(x, is.c, is.h, is.w, ws.h, ws.w, opt, oh, ow, col.data());
          cp = col.data();
        }
        Eigen::Map<const Mat> cmat(cp, k, p);
        Eigen::Map<Mat> gw(wn->grad_buffer().data(), ws.n, k);
        gw.noalias() += gmat * cmat.transpose();
      }
      if (in->requires_grad) {
        T* dx = in->grad_buffer().data() + n * is.c * is.plane();
        if (pointwise) {
          Eigen::Map<Mat> dxm(dx, k, p);
          dxm.noalias() += wmat.transpose() * gmat;
        } else {
          Eigen::Map<Mat> dc(dcol.data(), k, p);
          dc.noalias() = wmat.transpose() * gmat;
          detail::col2im(dcol.data(), is.c, is.h, is.w, ws.h, ws.w, opt, oh, ow, dx);
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Horizontal bilinear sampling

/// out(n,c,i,j) = image(n,c,i, j - offsets(n,0,i,j)) with linear interpolation
/// between the two neighbouring columns. Sample coordinates are clamped to
/// [0, w-1]; the offset gradient is zero where the clamp is active.
template <typename T>
Tensor<T> bilinear_hsample(const Tensor<T>& image, const Tensor<T>& offsets) {
  const Shape is = image.shape();
  const Shape fs = offsets.shape();
  if (fs.n != is.n || fs.h != is.h || fs.w != is.w || fs.c != 1) {
    throw ShapeError("bilinear_hsample: offsets " + fs.str() + " must be (n,1,h,w) matching image " + is.str());
  }
  for (T v : offsets.data()) {
    if (!std::isfinite(v)) throw Error("bilinear_hsample: non-finite offset");
  }
  const std::size_t w = is.w;
  const T hi = static_cast<T>(w - 1);
  std::vector<T> out(is.size());
  const auto& id = image.data();
  const auto& od = offsets.data();
  for (std::size_t n = 0; n < is.n; ++n)
    for (std::size_t i = 0; i < is.h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        const T x = std::clamp(static_cast<T>(j) - od[(n * is.h + i) * w + j], T(0), hi);
        const std::size_t x0 = static_cast<std::size_t>(std::floor(x));
        const std::size_t x1 = std::min(x0 + 1, w - 1);
        const T f = x - static_cast<T>(x0);
        for (std::size_t c = 0; c < is.c; ++c) {
          const std::size_t row = ((n * is.c + c) * is.h + i) * w;
          out[row + j] = (T(1) - f) * id[row + x0] + f * id[row + x1];
        }
      }
  auto in = image.node();
  auto on = offsets.node();
  return detail::make_result<T>(is, std::move(out), {in, on}, [in, on](detail::Node<T>& self) {
    const Shape is = in->shape;
    const std::size_t w = is.w;
    const T hi = static_cast<T>(w - 1);
    const auto& id = in->data;
    const auto& od = on->data;
    T* gi = in->requires_grad ? in->grad_buffer().data() : nullptr;
    T* go = on->requires_grad ? on->grad_buffer().data() : nullptr;
    for (std::size_t n = 0; n < is.n; ++n)
      for (std::size_t i = 0; i < is.h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
          const std::size_t oi = (n * is.h + i) * w + j;
          const T raw = static_cast<T>(j) - od[oi];
          const T x = std::clamp(raw, T(0), hi);
          const bool inside = raw >= T(0) && raw <= hi;
          const std::size_t x0 = static_cast<std::size_t>(std::floor(x));
          const std::size_t x1 = std::min(x0 + 1, w - 1);
          const T f = x - static_cast<T>(x0);
          T dx = 0;
          for (std::size_t c = 0; c < is.c; ++c) {
            const std::size_t row = ((n * is.c + c) * is.h + i) * w;
            const T g = self.grad[row + j];
            if (gi) {
              gi[row + x0] += (T(1) - f) * g;
              gi[row + x1] += f * g;
            }
            dx += g * (id[row + x1] - id[row + x0]);
          }
          // d(sample)/d(offset) = -d(sample)/dx
          if (go && inside) go[oi] -= dx;
        }
  });
}

// ---------------------------------------------------------------------------
// Resampling and layout

template <typename T>
Tensor<T> nearest_upsample2x(const Tensor<T>& a) {
  const Shape s = a.shape();
  const Shape os{s.n, s.c, s.h * 2, s.w * 2};
  std::vector<T> out(os.size());
  const auto& ad = a.data();
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc)
    for (std::size_t y = 0; y < os.h; ++y)
      for (std::size_t x = 0; x < os.w; ++x) out[(nc * os.h + y) * os.w + x] = ad[(nc * s.h + y / 2) * s.w + x / 2];
  auto an = a.node();
  return detail::make_result<T>(os, std::move(out), {an}, [an](detail::Node<T>& self) {
    const Shape s = an->shape;
    const Shape os = self.shape;
    auto& ga = an->grad_buffer();
    for (std::size_t nc = 0; nc < s.n * s.c; ++nc)
      for (std::size_t y = 0; y < os.h; ++y)
        for (std::size_t x = 0; x < os.w; ++x) ga[(nc * s.h + y / 2) * s.w + x / 2] += self.grad[(nc * os.h + y) * os.w + x];
  });
}

// Mean over non-overlapping factor x factor blocks.
template <typename T>
Tensor<T> downsample_area(const Tensor<T>& a, std::size_t factor) {
  const Shape s = a.shape();
  if (factor == 0 || s.h % factor != 0 || s.w % factor != 0) {
    throw ShapeError("downsample_area: spatial size " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                     " is not divisible by factor " + std::to_string(factor));
  }
  if (factor == 1) return a;
  const Shape os{s.n, s.c, s.h / factor, s.w / factor};
  const T inv = T(1) / static_cast<T>(factor * factor);
  std::vector<T> out(os.size(), T(0));
  const auto& ad = a.data();
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc)
    for (std::size_t y = 0; y < s.h; ++y)
      for (std::size_t x = 0; x < s.w; ++x)
        out[(nc * os.h + y / factor) * os.w + x / factor] += ad[(nc * s.h + y) * s.w + x] * inv;
  auto an = a.node();
  return detail::make_result<T>(os, std::move(out), {an}, [an, factor, inv](detail::Node<T>& self) {
    const Shape s = an->shape;
    const Shape os = self.shape;
    auto& ga = an->grad_buffer();
    for (std::size_t nc = 0; nc < s.n * s.c; ++nc)
      for (std::size_t y = 0; y < s.h; ++y)
        for (std::size_t x = 0; x < s.w; ++x)
          ga[(nc * s.h + y) * s.w + x] += self.grad[(nc * os.h + y / factor) * os.w + x / factor] * inv;
  });
}

template <typename T>
Tensor<T> avg_pool2x(const Tensor<T>& a) {
  return downsample_area(a, 2);
}

template <typename T>
Tensor<T> max_pool2x(const Tensor<T>& a) {
  const Shape s = a.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0) throw ShapeError("max_pool2x: odd spatial size " + s.str());
  const Shape os{s.n, s.c, s.h / 2, s.w / 2};
  std::vector<T> out(os.size());
  std::vector<std::size_t> arg(os.size());
  const auto& ad = a.data();
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc)
    for (std::size_t y = 0; y < os.h; ++y)
      for (std::size_t x = 0; x < os.w; ++x) {
        std::size_t best = (nc * s.h + 2 * y) * s.w + 2 * x;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = (nc * s.h + 2 * y + dy) * s.w + 2 * x + dx;
            if (ad[idx] > ad[best]) best = idx;
          }
        const std::size_t o = (nc * os.h + y) * os.w + x;
        out[o] = ad[best];
        arg[o] = best;
      }
  auto an = a.node();
  return detail::make_result<T>(os, std::move(out), {an}, [an, arg = std::move(arg)](detail::Node<T>& self) {
    auto& ga = an->grad_buffer();
    for (std::size_t o = 0; o < arg.size(); ++o) ga[arg[o]] += self.grad[o];
  });
}

// 3x3 box mean without padding: (n,c,h,w) -> (n,c,h-2,w-2).
template <typename T>
Tensor<T> box_filter3(const Tensor<T>& a) {
  const Shape s = a.shape();
  if (s.h < 3 || s.w < 3) throw ShapeError("box_filter3: input smaller than 3x3: " + s.str());
  const Shape os{s.n, s.c, s.h - 2, s.w - 2};
  const T inv = T(1) / T(9);
  std::vector<T> out(os.size(), T(0));
  const auto& ad = a.data();
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc)
    for (std::size_t y = 0; y < os.h; ++y)
      for (std::size_t x = 0; x < os.w; ++x) {
        T acc = 0;
        for (std::size_t dy = 0; dy < 3; ++dy)
          for (std::size_t dx = 0; dx < 3; ++dx) acc += ad[(nc * s.h + y + dy) * s.w + x + dx];
        out[(nc * os.h + y) * os.w + x] = acc * inv;
      }
  auto an = a.node();
  return detail::make_result<T>(os, std::move(out), {an}, [an, inv](detail::Node<T>& self) {
    const Shape s = an->shape;
    const Shape os = self.shape;
    auto& ga = an->grad_buffer();
    for (std::size_t nc = 0; nc < s.n * s.c; ++nc)
      for (std::size_t y = 0; y < os.h; ++y)
        for (std::size_t x = 0; x < os.w; ++x) {
          const T g = self.grad[(nc * os.h + y) * os.w + x] * inv;
          for (std::size_t dy = 0; dy < 3; ++dy)
            for (std::size_t dx = 0; dx < 3; ++dx) ga[(nc * s.h + y + dy) * s.w + x + dx] += g;
        }
  });
}

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& ts) {
  if (ts.empty()) throw ShapeError("concat_channels: empty input list");
  const Shape first = ts.front().shape();
  std::size_t channels = 0;
  for (const auto& t : ts) {
    const Shape s = t.shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw ShapeError("concat_channels: spatial/batch mismatch " + s.str() + " vs " + first.str());
    }
    channels += s.c;
  }
  if (ts.size() == 1) return ts.front();
  const Shape os{first.n, channels, first.h, first.w};
  const std::size_t plane = first.plane();
  std::vector<T> out(os.size());
  std::vector<std::shared_ptr<detail::Node<T>>> parents;
  std::size_t offset = 0;
  for (const auto& t : ts) {
    const Shape s = t.shape();
    for (std::size_t n = 0; n < s.n; ++n)
      std::copy_n(t.data().begin() + n * s.c * plane, s.c * plane, out.begin() + (n * channels + offset) * plane);
    offset += s.c;
    parents.push_back(t.node());
  }
  return detail::make_result<T>(os, std::move(out), parents, [parents, channels, plane](detail::Node<T>& self) {
    std::size_t offset = 0;
    for (const auto& p : parents) {
      const Shape s = p->shape;
      if (p->requires_grad) {
        auto& gp = p->grad_buffer();
        for (std::size_t n = 0; n < s.n; ++n) {
          const T* src = self.grad.data() + (n * channels + offset) * plane;
          T* dst = gp.data() + n * s.c * plane;
          for (std::size_t i = 0; i < s.c * plane; ++i) dst[i] += src[i];
        }
      }
      offset += s.c;
    }
  });
}

// Channels [begin, end).
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& a, std::size_t begin, std::size_t end) {
  const Shape s = a.shape();
  if (begin >= end || end > s.c) {
    throw ShapeError("slice_channels: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") outside channel dimension " + std::to_string(s.c));
  }
  const Shape os{s.n, end - begin, s.h, s.w};
  const std::size_t plane = s.plane();
  std::vector<T> out(os.size());
  for (std::size_t n = 0; n < s.n; ++n)
    std::copy_n(a.data().begin() + (n * s.c + begin) * plane, os.c * plane, out.begin() + n * os.c * plane);
  auto an = a.node();
  return detail::make_result<T>(os, std::move(out), {an}, [an, begin, plane](detail::Node<T>& self) {
    const Shape s = an->shape;
    const Shape os = self.shape;
    auto& ga = an->grad_buffer();
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t i = 0; i < os.c * plane; ++i) ga[(n * s.c + begin) * plane + i] += self.grad[n * os.c * plane + i];
  });
}

// Samples [begin, end) along the batch axis.
template <typename T>
Tensor<T> slice_batch(const Tensor<T>& a, std::size_t begin, std::size_t end) {
  const Shape s = a.shape();
  if (begin >= end || end > s.n) throw ShapeError("slice_batch: range outside batch dimension");
  const std::size_t item = s.c * s.plane();
  const Shape os{end - begin, s.c, s.h, s.w};
  std::vector<T> out(a.data().begin() + begin * item, a.data().begin() + end * item);
  auto an = a.node();
  return detail::make_result<T>(os, std::move(out), {an}, [an, begin, item](detail::Node<T>& self) {
    auto& ga = an->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) ga[begin * item + i] += self.grad[i];
  });
}

// Forward difference along width: out(.., j) = a(.., j+1) - a(.., j).
template <typename T>
Tensor<T> diff_x(const Tensor<T>& a) {
  const Shape s = a.shape();
  if (s.w < 2) throw ShapeError("diff_x: width < 2");
  const Shape os{s.n, s.c, s.h, s.w - 1};
  std::vector<T> out(os.size());
  const auto& ad = a.data();
  for (std::size_t r = 0; r < s.n * s.c * s.h; ++r)
    for (std::size_t x = 0; x + 1 < s.w; ++x) out[r * os.w + x] = ad[r * s.w + x + 1] - ad[r * s.w + x];
  auto an = a.node();
  return detail::make_result<T>(os, std::move(out), {an}, [an](detail::Node<T>& self) {
    const Shape s = an->shape;
    auto& ga = an->grad_buffer();
    for (std::size_t r = 0; r < s.n * s.c * s.h; ++r)
      for (std::size_t x = 0; x + 1 < s.w; ++x) {
        const T g = self.grad[r * (s.w - 1) + x];
        ga[r * s.w + x + 1] += g;
        ga[r * s.w + x] -= g;
      }
  });
}

// Forward difference along height.
template <typename T>
Tensor<T> diff_y(const Tensor<T>& a) {
  const Shape s = a.shape();
  if (s.h < 2) throw ShapeError("diff_y: height < 2");
  const Shape os{s.n, s.c, s.h - 1, s.w};
  std::vector<T> out(os.size());
  const auto& ad = a.data();
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc)
    for (std::size_t y = 0; y + 1 < s.h; ++y)
      for (std::size_t x = 0; x < s.w; ++x)
        out[(nc * os.h + y) * s.w + x] = ad[(nc * s.h + y + 1) * s.w + x] - ad[(nc * s.h + y) * s.w + x];
  auto an = a.node();
  return detail::make_result<T>(os, std::move(out), {an}, [an](detail::Node<T>& self) {
    const Shape s = an->shape;
    auto& ga = an->grad_buffer();
    for (std::size_t nc = 0; nc < s.n * s.c; ++nc)
      for (std::size_t y = 0; y + 1 < s.h; ++y)
        for (std::size_t x = 0; x < s.w; ++x) {
          const T g = self.grad[(nc * (s.h - 1) + y) * s.w + x];
          ga[(nc * s.h + y + 1) * s.w + x] += g;
          ga[(nc * s.h + y) * s.w + x] -= g;
        }
  });
}

// Mirror along the width axis.
template <typename T>
Tensor<T> flip_h(const Tensor<T>& a) {
  const Shape s = a.shape();
  std::vector<T> out(s.size());
  const auto& ad = a.data();
  for (std::size_t r = 0; r < s.n * s.c * s.h; ++r)
    for (std::size_t x = 0; x < s.w; ++x) out[r * s.w + x] = ad[r * s.w + (s.w - 1 - x)];
  auto an = a.node();
  return detail::make_result<T>(s, std::move(out), {an}, [an](detail::Node<T>& self) {
    const Shape s = an->shape;
    auto& ga = an->grad_buffer();
    for (std::size_t r = 0; r < s.n * s.c * s.h; ++r)
      for (std::size_t x = 0; x < s.w; ++x) ga[r * s.w + (s.w - 1 - x)] += self.grad[r * s.w + x];
  });
}

}  // namespace rrdn
