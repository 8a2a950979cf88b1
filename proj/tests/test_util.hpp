#pragma once

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "rrdn/rrdn.hpp"

namespace rrdn::testing {

using TD = Tensor<double>;

inline TD rand_tensor(Shape s, std::uint64_t seed, double lo = -1, double hi = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(s.size());
  for (auto& x : v) x = u(rng);
  return TD::from(s, std::move(v));
}

inline TD ramp_columns(Shape s) {
  TD t = TD::zeros(s);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t i = 0; i < s.h; ++i)
        for (std::size_t j = 0; j < s.w; ++j) t.at(n, c, i, j) = static_cast<double>(j);
  return t;
}

// Independent central-difference oracle: returns the numeric gradient of a
// scalar function of a flat vector.
inline std::vector<double> numeric_gradient(const std::function<double(const std::vector<double>&)>& f,
                                            std::vector<double> x, double eps = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + eps;
    const double up = f(x);
    x[i] = keep - eps;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2 * eps);
  }
  return g;
}

// Analytic gradient of a tensor-to-scalar function through the library tape.
inline std::vector<double> analytic_gradient(const std::function<TD(const TD&)>& f, const TD& at) {
  TD x = at.clone(true);
  TD loss = f(x);
  backward(loss);
  return x.has_grad() ? x.grad() : std::vector<double>(x.size(), 0.0);
}

inline void expect_gradients_match(const std::function<TD(const TD&)>& f, const TD& at, double tol = 1e-4) {
  const Shape s = at.shape();
  auto scalar = [&](const std::vector<double>& v) {
    NoGradGuard ng;
    return f(TD::from(s, v)).item();
  };
  const auto num = numeric_gradient(scalar, at.data());
  const auto ana = analytic_gradient(f, at);
  ASSERT_EQ(num.size(), ana.size());
  for (std::size_t i = 0; i < num.size(); ++i) {
    const double scale = std::max({std::abs(num[i]), std::abs(ana[i]), 1e-3});
    EXPECT_LE(std::abs(num[i] - ana[i]) / scale, tol) << "element " << i << " numeric " << num[i] << " analytic " << ana[i];
  }
}

// Direct nested-loop convolution used as a reference.
inline std::vector<double> naive_conv(const TD& x, const TD& w, const TD& b, std::size_t sh, std::size_t sw,
                                      std::size_t ph, std::size_t pw, Shape& out) {
  const Shape xs = x.shape(), ws = w.shape();
  out = {xs.n, ws.n, (xs.h + 2 * ph - ws.h) / sh + 1, (xs.w + 2 * pw - ws.w) / sw + 1};
  std::vector<double> y(out.size());
  std::size_t k = 0;
  for (std::size_t n = 0; n < out.n; ++n)
    for (std::size_t o = 0; o < out.c; ++o)
      for (std::size_t i = 0; i < out.h; ++i)
        for (std::size_t j = 0; j < out.w; ++j) {
          double acc = b.data()[o];
          for (std::size_t c = 0; c < xs.c; ++c)
            for (std::size_t r = 0; r < ws.h; ++r)
              for (std::size_t q = 0; q < ws.w; ++q) {
                const long yy = static_cast<long>(i * sh + r) - static_cast<long>(ph);
                const long xx = static_cast<long>(j * sw + q) - static_cast<long>(pw);
                if (yy < 0 || xx < 0 || yy >= static_cast<long>(xs.h) || xx >= static_cast<long>(xs.w)) continue;
                acc += x.at(n, c, yy, xx) * w.at(o, c, r, q);
              }
          y[k++] = acc;
        }
  return y;
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           (tag + "_" + std::to_string(std::random_device{}()) + "_" + std::to_string(::getpid()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

}  // namespace rrdn::testing
