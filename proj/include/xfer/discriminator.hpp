#pragma once

// Multi-layer domain discriminator. Each stage sees the encoder activation
// at its depth fused with the decayed output of the previous stage:
//
//   d_1 = D_1(act(tap_1))
//   d_l = D_l(act(gamma * d_{l-1} (+) tap_l))        l = 2..L-1
//   out = head(act(gamma * d_{L-1} (+) tap_L))
//
// D_l mirrors the encoder layer between tap_l and tap_{l+1}, so its output
// width matches tap_{l+1}. (+) is element-wise sum or column concat.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "xfer/errors.hpp"
#include "xfer/layers.hpp"
#include "xfer/ops.hpp"
#include "xfer/rng.hpp"

namespace xfer {

enum class Fusion { sum, concat };
enum class Activation { relu, leaky_relu };

struct DiscriminatorSpec {
  std::vector<std::size_t> tap_widths;   // shallow -> deep, flattened
  std::vector<std::size_t> head_hidden;  // trailing fc widths before the scalar output
  double gamma = 0.1;
  Fusion fusion = Fusion::sum;
  Activation activation = Activation::relu;
  double slope = 0.2;
};

/// Hidden widths of the trailing fc stack for the built-in architectures.
inline std::vector<std::size_t> default_head_hidden(const NetworkSpec& spec) {
  if (spec.name == "lenet_uda") return {500, 500};
  return {500, 500, 500};
}

template <typename T>
struct LinearLayer {
  Tensor<T> weight;  // in x out
  Tensor<T> bias;

  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }
  std::size_t in() const { return weight.dim(0); }
  std::size_t out() const { return weight.dim(1); }
};

template <typename T = float>
class MultiLayerDiscriminator {
 public:
  MultiLayerDiscriminator() = default;

  static MultiLayerDiscriminator build(const DiscriminatorSpec& spec, std::uint64_t seed) {
    if (spec.tap_widths.empty()) throw BuildError("discriminator: needs at least one tap");
    if (!(spec.gamma >= 0.0 && spec.gamma <= 1.0)) {
      throw ParameterError("discriminator: gamma must lie in [0, 1], got " + std::to_string(spec.gamma));
    }
    MultiLayerDiscriminator d;
    d.spec_ = spec;
    Rng rng(seed);
    const auto& w = spec.tap_widths;
    for (std::size_t l = 0; l + 1 < w.size(); ++l) d.stages_.push_back(make_linear(d.stage_input(l), w[l + 1], rng));
    std::size_t in = d.stage_input(w.size() - 1);
    for (std::size_t h : spec.head_hidden) {
      d.head_.push_back(make_linear(in, h, rng));
      in = h;
    }
    d.head_.push_back(make_linear(in, 1, rng));
    return d;
  }

  /// One real/fake logit per example, shape [N].
  Tensor<T> forward(const std::vector<Tensor<T>>& taps) const {
    const auto& w = spec_.tap_widths;
    if (taps.size() != w.size()) {
      throw ShapeError("discriminator: expected " + std::to_string(w.size()) + " taps, got " +
                       std::to_string(taps.size()));
    }
    const std::size_t N = taps.empty() ? 0 : taps[0].dim(0);
    for (std::size_t l = 0; l < taps.size(); ++l) {
      if (taps[l].rank() != 2 || taps[l].dim(1) != w[l] || taps[l].dim(0) != N) {
        throw ShapeError("discriminator: tap " + std::to_string(l) + " expected [" + std::to_string(N) + "x" +
                         std::to_string(w[l]) + "], got " + shape_str(taps[l].shape()));
      }
    }
    const T gamma = static_cast<T>(spec_.gamma);
    Tensor<T> h = activate(taps[0]);
    for (std::size_t l = 1; l < taps.size(); ++l) {
      Tensor<T> d = stages_[l - 1](h);
      Tensor<T> decayed = scale(d, gamma);
      Tensor<T> fused = spec_.fusion == Fusion::sum ? add(decayed, taps[l]) : concat_cols(decayed, taps[l]);
      h = activate(fused);
    }
    for (std::size_t i = 0; i < head_.size(); ++i) {
      h = head_[i](h);
      if (i + 1 < head_.size()) h = activate(h);
    }
    return reshape(h, Shape{N});
  }

  std::vector<NamedTensor<T>> parameters() const {
    std::vector<NamedTensor<T>> out;
    for (std::size_t i = 0; i < stages_.size(); ++i) {
      out.push_back({"stage" + std::to_string(i + 1) + ".weight", stages_[i].weight});
      out.push_back({"stage" + std::to_string(i + 1) + ".bias", stages_[i].bias});
    }
    for (std::size_t i = 0; i < head_.size(); ++i) {
      out.push_back({"head" + std::to_string(i + 1) + ".weight", head_[i].weight});
      out.push_back({"head" + std::to_string(i + 1) + ".bias", head_[i].bias});
    }
    return out;
  }

  std::vector<Tensor<T>> parameter_tensors() const {
    std::vector<Tensor<T>> out;
    for (auto& p : parameters()) out.push_back(p.tensor);
    return out;
  }

  const DiscriminatorSpec& spec() const { return spec_; }
  const std::vector<LinearLayer<T>>& stages() const { return stages_; }
  const std::vector<LinearLayer<T>>& head() const { return head_; }
  std::vector<LinearLayer<T>>& stages() { return stages_; }
  std::vector<LinearLayer<T>>& head() { return head_; }

 private:
  std::size_t stage_input(std::size_t l) const {
    const std::size_t w = spec_.tap_widths[l];
    return (l > 0 && spec_.fusion == Fusion::concat) ? 2 * w : w;
  }

  Tensor<T> activate(const Tensor<T>& x) const {
    return spec_.activation == Activation::relu ? relu(x) : leaky_relu(x, static_cast<T>(spec_.slope));
  }

  static LinearLayer<T> make_linear(std::size_t in, std::size_t out, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    auto w = Tensor<T>::zeros({in, out}, true);
    for (auto& v : w.data()) v = static_cast<T>(rng.uniform(-bound, bound));
    return {w, Tensor<T>::zeros({out}, true)};
  }

  DiscriminatorSpec spec_;
  std::vector<LinearLayer<T>> stages_;
  std::vector<LinearLayer<T>> head_;
};

/// Probability that each logit denotes the source domain.
template <typename T>
Tensor<T> disc_prob(const Tensor<T>& logits) {
  return sigmoid(logits);
}

}  // namespace xfer
