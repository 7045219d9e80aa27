#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "xfer/errors.hpp"
#include "xfer/tensor.hpp"

namespace xfer {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 0.0;  // global L2 norm cap; 0 disables
};

/// Bias-corrected Adam over one parameter group.
template <typename T = float>
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Tensor<T>> params, AdamOptions opt = {}) : params_(std::move(params)), opt_(opt) {
    for (const auto& p : params_) {
      m_.emplace_back(p.numel(), T(0));
      v_.emplace_back(p.numel(), T(0));
    }
  }

  /// One update from the gradients currently accumulated on the parameters.
  void step() {
    std::vector<std::vector<T>> grads;
    grads.reserve(params_.size());
    for (auto& p : params_) {
      auto g = p.grad();
      grads.emplace_back(g.begin(), g.end());
    }
    step(grads);
  }

  void step(const std::vector<std::vector<T>>& grads) {
    if (grads.size() != params_.size()) {
      throw ShapeError("Adam: " + std::to_string(grads.size()) + " gradients for " +
                       std::to_string(params_.size()) + " parameters");
    }
    for (std::size_t i = 0; i < grads.size(); ++i) {
      if (grads[i].size() != params_[i].numel()) {
        throw ShapeError("Adam: gradient " + std::to_string(i) + " has " + std::to_string(grads[i].size()) +
                         " elements, parameter has " + std::to_string(params_[i].numel()));
      }
    }
    double clip = 1.0;
    if (opt_.grad_clip > 0.0) {
      double sq = 0.0;
      for (const auto& g : grads)
        for (T v : g) sq += static_cast<double>(v) * static_cast<double>(v);
      const double norm = std::sqrt(sq);
      if (norm > opt_.grad_clip) clip = opt_.grad_clip / norm;
    }
    ++t_;
    const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto w = params_[i].data();
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < w.size(); ++j) {
        const double g = clip * static_cast<double>(grads[i][j]);
        const double mj = opt_.beta1 * m[j] + (1.0 - opt_.beta1) * g;
        const double vj = opt_.beta2 * v[j] + (1.0 - opt_.beta2) * g * g;
        m[j] = static_cast<T>(mj);
        v[j] = static_cast<T>(vj);
        w[j] = static_cast<T>(w[j] - opt_.lr * (mj / c1) / (std::sqrt(vj / c2) + opt_.eps));
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  std::size_t steps() const { return t_; }
  const AdamOptions& options() const { return opt_; }
  const std::vector<std::vector<T>>& first_moments() const { return m_; }
  const std::vector<std::vector<T>>& second_moments() const { return v_; }

 private:
  std::vector<Tensor<T>> params_;
  AdamOptions opt_;
  std::vector<std::vector<T>> m_, v_;
  std::size_t t_ = 0;
};

template <typename T>
void zero_grads(std::vector<Tensor<T>>& group) {
  for (auto& p : group) p.zero_grad();
}

}  // namespace xfer
