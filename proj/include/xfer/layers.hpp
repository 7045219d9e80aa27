#pragma once

// Sequential networks assembled from declarative layer lists, with named
// activation taps exposed for the domain discriminator.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "xfer/errors.hpp"
#include "xfer/ops.hpp"
#include "xfer/rng.hpp"
#include "xfer/tensor.hpp"

namespace xfer {

enum class LayerKind { conv, maxpool, batchnorm, relu, leaky_relu, flatten, linear };

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv: return "conv";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::relu: return "relu";
    case LayerKind::leaky_relu: return "leaky_relu";
    case LayerKind::flatten: return "flatten";
    case LayerKind::linear: return "linear";
  }
  return "?";
}

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::string name;
  std::size_t width = 0;   // conv filters / linear outputs
  std::size_t kernel = 0;  // conv kernel or pool window (square)
  std::size_t stride = 1;
  std::size_t padding = 0;
  double slope = 0.2;      // leaky_relu
  bool head = false;       // part of the classifier head

  static LayerSpec conv(std::string name, std::size_t filters, std::size_t kernel, std::size_t stride = 1,
                        std::size_t padding = 0) {
    return {LayerKind::conv, std::move(name), filters, kernel, stride, padding};
  }
  static LayerSpec maxpool(std::string name, std::size_t size = 2, std::size_t stride = 2) {
    return {LayerKind::maxpool, std::move(name), 0, size, stride, 0};
  }
  static LayerSpec batchnorm(std::string name) { return {LayerKind::batchnorm, std::move(name)}; }
  static LayerSpec relu(std::string name) { return {LayerKind::relu, std::move(name)}; }
  static LayerSpec leaky_relu(std::string name, double slope = 0.2) {
    LayerSpec s{LayerKind::leaky_relu, std::move(name)};
    s.slope = slope;
    return s;
  }
  static LayerSpec flatten(std::string name) { return {LayerKind::flatten, std::move(name)}; }
  static LayerSpec linear(std::string name, std::size_t out, bool head = false) {
    LayerSpec s{LayerKind::linear, std::move(name), out};
    s.head = head;
    return s;
  }
};

struct NetworkSpec {
  std::string name;
  Shape input;  // C, H, W
  std::vector<LayerSpec> layers;
  std::vector<std::string> taps;  // shallow -> deep
  std::string embedding;          // layer whose output feeds the similarity losses
};

/// Per-example output shape of every layer. Throws BuildError naming the
/// first layer whose input geometry it cannot accept.
inline std::vector<Shape> infer_shapes(const NetworkSpec& spec) {
  if (spec.input.size() != 3) throw BuildError(spec.name + ": input must be C,H,W, got " + shape_str(spec.input));
  std::vector<Shape> shapes;
  Shape cur = spec.input;
  for (const LayerSpec& l : spec.layers) {
    auto fail = [&](const std::string& why) {
      return BuildError(spec.name + ": layer '" + l.name + "' (" + to_string(l.kind) + ") " + why +
                        " on input " + shape_str(cur));
    };
    switch (l.kind) {
      case LayerKind::conv: {
        if (cur.size() != 3) throw fail("needs C,H,W input");
        if (l.width == 0 || l.kernel == 0) throw fail("needs positive filters and kernel");
        try {
          const auto g = conv2d_geometry({1, cur[0], cur[1], cur[2]}, {l.width, cur[0], l.kernel, l.kernel},
                                         l.stride, l.padding);
          cur = {l.width, g.OH, g.OW};
        } catch (const std::exception& e) {
          throw fail(e.what());
        }
        break;
      }
      case LayerKind::maxpool: {
        if (cur.size() != 3) throw fail("needs C,H,W input");
        if (l.kernel == 0 || l.stride == 0 || cur[1] % l.stride || cur[2] % l.stride || cur[1] < l.kernel ||
            cur[2] < l.kernel || (cur[1] - l.kernel) % l.stride || (cur[2] - l.kernel) % l.stride)
          throw fail("window does not tile");
        cur = {cur[0], (cur[1] - l.kernel) / l.stride + 1, (cur[2] - l.kernel) / l.stride + 1};
        break;
      }
      case LayerKind::batchnorm:
        if (cur.size() != 3) throw fail("needs C,H,W input");
        break;
      case LayerKind::relu:
      case LayerKind::leaky_relu:
        break;
      case LayerKind::flatten:
        cur = {shape_numel(cur)};
        break;
      case LayerKind::linear:
        if (cur.size() != 1) throw fail("needs flat input");
        if (l.width == 0) throw fail("needs positive width");
        cur = {l.width};
        break;
    }
    shapes.push_back(cur);
  }
  if (shapes.empty()) throw BuildError(spec.name + ": no layers");
  if (shapes.back().size() != 1) throw BuildError(spec.name + ": final layer must produce flat logits");

  std::size_t last = 0;
  bool first = true;
  for (const auto& tap : spec.taps) {
    std::size_t at = spec.layers.size();
    for (std::size_t i = 0; i < spec.layers.size(); ++i)
      if (spec.layers[i].name == tap) at = i;
    if (at == spec.layers.size()) throw BuildError(spec.name + ": unknown tap layer '" + tap + "'");
    if (!first && at <= last) throw BuildError(spec.name + ": taps must be ordered shallow to deep at '" + tap + "'");
    last = at;
    first = false;
  }
  if (!spec.embedding.empty()) {
    bool found = false;
    for (const auto& l : spec.layers) found = found || l.name == spec.embedding;
    if (!found) throw BuildError(spec.name + ": unknown embedding layer '" + spec.embedding + "'");
  }
  return shapes;
}

/// Embedding network for the digit transfer experiment: four
/// conv3x3(64)-bn-relu-pool blocks on 1x32x32, then fc 64 -> 64 -> classes.
/// Four halvings leave a 2x2 map; a final 2x2 max pool reduces it to the
/// 64-wide vector that the tabulated fc1 (64x64) consumes.
/// `shared_labels` selects the deeper tap set used when source and target
/// classes coincide.
inline NetworkSpec svhn_mnist_spec(std::size_t classes = 5, bool shared_labels = false) {
  NetworkSpec s;
  s.name = "svhn_mnist";
  s.input = {1, 32, 32};
  for (int b = 1; b <= 4; ++b) {
    const std::string i = std::to_string(b);
    s.layers.push_back(LayerSpec::conv("conv" + i, 64, 3, 1, 1));
    s.layers.push_back(LayerSpec::batchnorm("bn" + i));
    s.layers.push_back(LayerSpec::relu("relu" + i));
    s.layers.push_back(LayerSpec::maxpool("pool" + i, 2, 2));
  }
  s.layers.push_back(LayerSpec::maxpool("pool-global", 2, 2));
  s.layers.push_back(LayerSpec::flatten("pool4-flat"));
  s.layers.push_back(LayerSpec::linear("fc1", 64));
  s.layers.push_back(LayerSpec::relu("fc1.relu"));
  s.layers.push_back(LayerSpec::linear("fc2", classes, true));
  s.taps = shared_labels ? std::vector<std::string>{"pool4-flat", "fc1.relu", "fc2"}
                         : std::vector<std::string>{"pool4-flat", "fc1.relu"};
  s.embedding = "fc1.relu";
  return s;
}

/// LeNet-style network for the unsupervised adaptation run on 1x28x28.
inline NetworkSpec lenet_uda_spec(std::size_t classes = 10) {
  NetworkSpec s;
  s.name = "lenet_uda";
  s.input = {1, 28, 28};
  s.layers = {LayerSpec::conv("conv1", 20, 5), LayerSpec::relu("relu1"), LayerSpec::maxpool("pool1"),
              LayerSpec::conv("conv2", 50, 5), LayerSpec::relu("relu2"), LayerSpec::maxpool("pool2"),
              LayerSpec::flatten("pool2-flat"), LayerSpec::linear("fc1", 500), LayerSpec::relu("fc1.relu"),
              LayerSpec::linear("fc2", classes, true)};
  s.taps = {"pool2-flat", "fc1.relu", "fc2"};
  s.embedding = "fc1.relu";
  return s;
}

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

struct HeadReinit {
  std::size_t classes;
  std::uint64_t seed;
};

template <typename T = float>
class EmbeddingNetwork {
 public:
  struct Layer {
    LayerSpec spec;
    Tensor<T> weight;
    Tensor<T> bias;
    std::optional<RunningStats<T>> stats;
  };

  struct Output {
    Tensor<T> logits;
    std::vector<Tensor<T>> taps;
    Tensor<T> embedding;
  };

  EmbeddingNetwork() = default;

  /// Conv/linear weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases 0,
  /// batchnorm gamma 1 and beta 0.
  static EmbeddingNetwork build(const NetworkSpec& spec, std::uint64_t seed) {
    EmbeddingNetwork net;
    net.spec_ = spec;
    net.shapes_ = infer_shapes(spec);
    Rng rng(seed);
    Shape in = spec.input;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
      Layer layer{spec.layers[i], {}, {}, std::nullopt};
      net.init_layer(layer, in, rng);
      net.layers_.push_back(std::move(layer));
      in = net.shapes_[i];
    }
    return net;
  }

  Output forward(const Tensor<T>& x, Mode mode) {
    if (x.rank() != 4 || Shape(x.shape().begin() + 1, x.shape().end()) != spec_.input) {
      throw ShapeError(spec_.name + ": expected input [N x " + shape_str(spec_.input) + "], got " +
                       shape_str(x.shape()));
    }
    Output out;
    out.taps.resize(spec_.taps.size());
    Tensor<T> h = x;
    for (auto& layer : layers_) {
      const LayerSpec& l = layer.spec;
      switch (l.kind) {
        case LayerKind::conv: h = conv2d(h, layer.weight, layer.bias, l.stride, l.padding); break;
        case LayerKind::maxpool: h = maxpool2d(h, l.kernel, l.stride); break;
        case LayerKind::batchnorm: h = batchnorm2d(h, layer.weight, layer.bias, *layer.stats, mode); break;
        case LayerKind::relu: h = relu(h); break;
        case LayerKind::leaky_relu: h = leaky_relu(h, static_cast<T>(l.slope)); break;
        case LayerKind::flatten: h = flatten(h); break;
        case LayerKind::linear: h = linear(h, layer.weight, layer.bias); break;
      }
      for (std::size_t t = 0; t < spec_.taps.size(); ++t)
        if (spec_.taps[t] == l.name) out.taps[t] = h.rank() == 2 ? h : flatten(h);
      if (l.name == spec_.embedding) out.embedding = h.rank() == 2 ? h : flatten(h);
    }
    out.logits = h;
    return out;
  }

  const NetworkSpec& spec() const { return spec_; }
  const std::vector<Shape>& shapes() const { return shapes_; }
  std::size_t num_classes() const { return shapes_.back()[0]; }

  std::vector<std::size_t> tap_widths() const {
    std::vector<std::size_t> w;
    for (const auto& tap : spec_.taps)
      for (std::size_t i = 0; i < layers_.size(); ++i)
        if (layers_[i].spec.name == tap) w.push_back(shape_numel(shapes_[i]));
    return w;
  }

  std::size_t embedding_width() const {
    for (std::size_t i = 0; i < layers_.size(); ++i)
      if (layers_[i].spec.name == spec_.embedding) return shape_numel(shapes_[i]);
    return 0;
  }

  /// Learnable tensors named "<layer>.weight" / "<layer>.bias".
  std::vector<NamedTensor<T>> parameters() const {
    std::vector<NamedTensor<T>> out;
    for (const auto& l : layers_) {
      if (l.weight.defined()) out.push_back({l.spec.name + ".weight", l.weight});
      if (l.bias.defined()) out.push_back({l.spec.name + ".bias", l.bias});
    }
    return out;
  }

  /// Batchnorm running statistics.
  std::vector<NamedTensor<T>> buffers() const {
    std::vector<NamedTensor<T>> out;
    for (const auto& l : layers_) {
      if (l.stats) {
        out.push_back({l.spec.name + ".running_mean", l.stats->mean});
        out.push_back({l.spec.name + ".running_var", l.stats->var});
      }
    }
    return out;
  }

  /// parameters() followed by buffers(); the checkpointed state.
  std::vector<NamedTensor<T>> state() const {
    auto s = parameters();
    for (auto& b : buffers()) s.push_back(std::move(b));
    return s;
  }

  std::vector<Tensor<T>> body_parameters() const { return select(false); }
  std::vector<Tensor<T>> head_parameters() const { return select(true); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.tensor.numel();
    return n;
  }

  /// Fully independent deep copy.
  EmbeddingNetwork clone() const {
    EmbeddingNetwork c;
    c.spec_ = spec_;
    c.shapes_ = shapes_;
    for (const auto& l : layers_) {
      Layer copy{l.spec, {}, {}, std::nullopt};
      if (l.weight.defined()) copy.weight = l.weight.clone();
      if (l.bias.defined()) copy.bias = l.bias.clone();
      if (l.stats) copy.stats = RunningStats<T>{l.stats->mean.clone(), l.stats->var.clone()};
      c.layers_.push_back(std::move(copy));
    }
    return c;
  }

  /// Fresh weights for every head layer; the last head layer gets `classes`
  /// outputs.
  void reinit_head(std::size_t classes, std::uint64_t seed) {
    std::size_t last_head = layers_.size();
    for (std::size_t i = 0; i < layers_.size(); ++i)
      if (layers_[i].spec.head) last_head = i;
    if (last_head == layers_.size()) throw BuildError(spec_.name + ": no head layers to reinitialize");
    layers_[last_head].spec.width = classes;
    spec_.layers[last_head].width = classes;
    shapes_ = infer_shapes(spec_);
    Rng rng(seed);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      if (!layers_[i].spec.head) continue;
      init_layer(layers_[i], i == 0 ? spec_.input : shapes_[i - 1], rng);
    }
  }

  /// Copies values from `state` into matching tensors (by name and shape).
  void load_state(const std::vector<NamedTensor<T>>& state) {
    std::map<std::string, const Tensor<T>*> by_name;
    for (const auto& s : state) by_name[s.name] = &s.tensor;
    for (auto& mine : this->state()) {
      auto it = by_name.find(mine.name);
      if (it == by_name.end()) throw ShapeError(spec_.name + ": state is missing '" + mine.name + "'");
      if (it->second->shape() != mine.tensor.shape()) {
        throw ShapeError(spec_.name + ": '" + mine.name + "' has shape " + shape_str(it->second->shape()) +
                         ", expected " + shape_str(mine.tensor.shape()));
      }
      auto dst = mine.tensor.data();
      auto src = it->second->data();
      std::copy(src.begin(), src.end(), dst.begin());
    }
  }

 private:
  void init_layer(Layer& layer, const Shape& in, Rng& rng) {
    const LayerSpec& l = layer.spec;
    auto uniform = [&](Shape shape, std::size_t fan_in) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      auto t = Tensor<T>::zeros(std::move(shape), true);
      for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
      return t;
    };
    if (l.kind == LayerKind::conv) {
      layer.weight = uniform({l.width, in[0], l.kernel, l.kernel}, in[0] * l.kernel * l.kernel);
      layer.bias = Tensor<T>::zeros({l.width}, true);
    } else if (l.kind == LayerKind::linear) {
      layer.weight = uniform({in[0], l.width}, in[0]);
      layer.bias = Tensor<T>::zeros({l.width}, true);
    } else if (l.kind == LayerKind::batchnorm) {
      layer.weight = Tensor<T>::full({in[0]}, T(1), true);
      layer.bias = Tensor<T>::zeros({in[0]}, true);
      layer.stats = RunningStats<T>::create(in[0]);
    }
  }

  std::vector<Tensor<T>> select(bool head) const {
    std::vector<Tensor<T>> out;
    for (const auto& l : layers_) {
      if (l.spec.head != head) continue;
      if (l.weight.defined()) out.push_back(l.weight);
      if (l.bias.defined()) out.push_back(l.bias);
    }
    return out;
  }

  NetworkSpec spec_;
  std::vector<Shape> shapes_;
  std::vector<Layer> layers_;
};

/// Deep copy of a pretrained source network to seed the target model. With
/// `reinit`, the classifier head is rebuilt for the target label set while
/// the body stays bit-identical.
template <typename T>
EmbeddingNetwork<T> clone_into_target(const EmbeddingNetwork<T>& source,
                                      std::optional<HeadReinit> reinit = std::nullopt) {
  EmbeddingNetwork<T> target = source.clone();
  if (reinit) target.reinit_head(reinit->classes, reinit->seed);
  return target;
}

enum class ParamGroup { source_encoder, target_encoder, classifier_head, discriminator };

inline const char* to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::source_encoder: return "source-encoder";
    case ParamGroup::target_encoder: return "target-encoder";
    case ParamGroup::classifier_head: return "classifier-head";
    case ParamGroup::discriminator: return "discriminator";
  }
  return "?";
}

/// Registry of every learnable tensor, each owned by exactly one group.
template <typename T = float>
class ParamStore {
 public:
  void add(const std::string& name, const Tensor<T>& t, ParamGroup group) {
    for (const auto& e : entries_) {
      if (e.name == name) throw BuildError("ParamStore: duplicate parameter name '" + name + "'");
      if (e.tensor.node() == t.node()) {
        throw BuildError("ParamStore: tensor '" + name + "' already registered as '" + e.name + "'");
      }
    }
    entries_.push_back({name, t, group});
  }

  void add_all(const std::string& prefix, const std::vector<NamedTensor<T>>& ts, ParamGroup group) {
    for (const auto& nt : ts) add(prefix + nt.name, nt.tensor, group);
  }

  std::vector<Tensor<T>> group(ParamGroup g) const {
    std::vector<Tensor<T>> out;
    for (const auto& e : entries_)
      if (e.group == g) out.push_back(e.tensor);
    return out;
  }

  void zero_grad(ParamGroup g) {
    for (auto& e : entries_)
      if (e.group == g) e.tensor.zero_grad();
  }

  std::size_t size() const { return entries_.size(); }

 private:
  struct Entry {
    std::string name;
    Tensor<T> tensor;
    ParamGroup group;
  };
  std::vector<Entry> entries_;
};

}  // namespace xfer
