#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "rrdn/tensor.hpp"

namespace rrdn {

struct GradCheckReport {
  std::string name;
  std::size_t checked = 0;
  double max_abs_error = 0;
  // |analytic - numeric| / max(|analytic|, |numeric|, abs_floor), worst element.
  double max_rel_error = 0;
  bool passed = true;
};

struct GradCheckOptions {
  double eps = 1e-5;
  double tol = 1e-4;
  // Gradients smaller than this are compared absolutely against tol * abs_floor.
  double abs_floor = 1e-3;
};

/// Compares the reverse-mode gradient of a scalar function with central
/// finite differences, element by element.
inline GradCheckReport grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                                  const Tensor<double>& at, const GradCheckOptions& opt = {},
                                  std::string name = {}) {
  GradCheckReport report;
  report.name = std::move(name);
  Tensor<double> x = at.clone(true);
  Tensor<double> y = f(x);
  if (!y.is_scalar()) throw ShapeError("grad_check: function must return a scalar, got " + y.shape().str());
  backward(y);
  std::vector<double> analytic = x.has_grad() ? x.grad() : std::vector<double>(x.size(), 0.0);

  NoGradGuard no_grad;
  Tensor<double> probe = at.clone(false);
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double orig = probe.data()[i];
    probe.data()[i] = orig + opt.eps;
    const double fp = f(probe).item();
    probe.data()[i] = orig - opt.eps;
    const double fm = f(probe).item();
    probe.data()[i] = orig;
    const double numeric = (fp - fm) / (2 * opt.eps);
    const double err = std::abs(analytic[i] - numeric);
    const double scale = std::max({std::abs(analytic[i]), std::abs(numeric), opt.abs_floor});
    report.max_abs_error = std::max(report.max_abs_error, err);
    report.max_rel_error = std::max(report.max_rel_error, err / scale);
    ++report.checked;
  }
  report.passed = report.max_rel_error <= opt.tol;
  return report;
}

}  // namespace rrdn
