#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "rrdn/param_store.hpp"

namespace rrdn {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  // Moments in ParamStore order.
  std::vector<std::vector<T>> m, v;
  std::size_t step = 0;
};

/// One bias-corrected Adam update of every parameter holding a gradient.
/// Parameters without a gradient count as a zero gradient. A non-finite
/// gradient rejects the whole step before anything is modified.
template <typename T>
void adam_step(ParamStore<T>& params, AdamState<T>& state, double lr, const AdamOptions& opt = {}) {
  for (const auto& [name, p] : params) {
    if (p.has_grad() && p.grad().size() != p.size()) throw ShapeError("adam_step: gradient shape mismatch for " + name);
    for (T g : p.grad()) {
      if (!std::isfinite(g)) throw Error("adam_step: non-finite gradient in " + name);
    }
  }
  if (state.m.empty()) {
    for (const auto& [name, p] : params) {
      state.m.emplace_back(p.size(), T(0));
      state.v.emplace_back(p.size(), T(0));
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam_step: optimizer state does not match parameters");

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(opt.beta1, t);
  const double bc2 = 1.0 - std::pow(opt.beta2, t);
  const T b1 = static_cast<T>(opt.beta1);
  const T b2 = static_cast<T>(opt.beta2);
  std::size_t k = 0;
  for (auto& [name, p] : params) {
    auto& m = state.m[k];
    auto& v = state.v[k];
    ++k;
    if (m.size() != p.size()) throw ShapeError("adam_step: moment buffer shape mismatch for " + name);
    auto& data = p.data();
    const bool has = p.has_grad();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const T g = has ? p.grad()[i] : T(0);
      m[i] = b1 * m[i] + (T(1) - b1) * g;
      v[i] = b2 * v[i] + (T(1) - b2) * g * g;
      const double m_hat = static_cast<double>(m[i]) / bc1;
      const double v_hat = static_cast<double>(v[i]) / bc2;
      data[i] -= static_cast<T>(lr * m_hat / (std::sqrt(v_hat) + opt.eps));
    }
  }
}

}  // namespace rrdn
