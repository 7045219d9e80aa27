#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "xfer/tensor.hpp"

namespace xfer {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  // Elements sitting on a kink (relu at 0, tied maxpool window, ...), where
  // the one-sided differences disagree. They are reported, not scored.
  std::size_t excluded = 0;
};

struct GradCheckOptions {
  double eps = 1e-4;
  // One-sided slopes further apart than this (relative to max(1, |slope|))
  // mark a non-differentiable point.
  double kink_tol = 1e-2;
  // For smooth f the one-sided slope gap is linear in the step; a gap at
  // step eps that differs from twice the gap at eps/2 by more than this
  // marks a kink within the stencil.
  double linearity_tol = 1e-7;
};

/// Compares backward() against central differences for every element of
/// every tensor in `wrt`. `f` is re-evaluated with perturbed inputs and must
/// return a scalar. Error per element is |analytic - numeric| / max(1, |analytic|).
template <typename F>
GradCheckResult grad_check(F&& f, std::vector<Tensor<double>> wrt, GradCheckOptions opt = {}) {
  for (auto& t : wrt) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  {
    Tensor<double> y = f();
    backward(y);
  }
  std::vector<std::vector<double>> analytic;
  for (auto& t : wrt) {
    auto g = t.grad();
    analytic.emplace_back(g.begin(), g.end());
  }

  GradCheckResult res;
  NoGradGuard no_grad;
  const double f0 = f().item();
  for (std::size_t k = 0; k < wrt.size(); ++k) {
    auto data = wrt[k].data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + opt.eps;
      const double fp = f().item();
      data[i] = saved - opt.eps;
      const double fm = f().item();
      data[i] = saved + opt.eps / 2;
      const double fp2 = f().item();
      data[i] = saved - opt.eps / 2;
      const double fm2 = f().item();
      data[i] = saved;

      const double central = (fp - fm) / (2.0 * opt.eps);
      const double scale = std::max(1.0, std::abs(central));
      const double gap = (fp - 2.0 * f0 + fm) / opt.eps;
      const double half_gap = (fp2 - 2.0 * f0 + fm2) / (opt.eps / 2);
      if (std::abs(gap) > opt.kink_tol * scale || std::abs(gap - 2.0 * half_gap) > opt.linearity_tol * scale) {
        ++res.excluded;
        continue;
      }
      const double a = analytic[k][i];
      const double err = std::abs(a - central) / std::max(1.0, std::abs(a));
      res.max_rel_error = std::max(res.max_rel_error, err);
      ++res.checked;
    }
  }
  return res;
}

/// Single-input form: `f` takes the tensor being checked.
template <typename F>
GradCheckResult grad_check_at(F&& f, Tensor<double> x, GradCheckOptions opt = {}) {
  return grad_check([&] { return f(x); }, std::vector<Tensor<double>>{x}, opt);
}

}  // namespace xfer
