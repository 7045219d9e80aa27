#pragma once

// Registry of finite-difference checks: every differentiable op and every
// composite loss, each over a batch of random instances in double.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "xfer/discriminator.hpp"
#include "xfer/gradcheck.hpp"
#include "xfer/layers.hpp"
#include "xfer/losses.hpp"
#include "xfer/ops.hpp"
#include "xfer/rng.hpp"

namespace xfer {

using DTensor = Tensor<double>;

struct GradCase {
  std::string name;
  std::function<GradCheckResult(Rng&)> run;  // one random instance
};

struct GradCaseReport {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t instances = 0;
  std::size_t checked = 0;
  std::size_t excluded = 0;
  bool passed = false;
};

struct GradSuiteReport {
  std::vector<GradCaseReport> cases;
  double seconds = 0.0;
  bool passed() const {
    return std::all_of(cases.begin(), cases.end(), [](const auto& c) { return c.passed; });
  }
};

namespace gc {

inline DTensor rand(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(s));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return DTensor::from(std::move(s), std::move(v));
}

inline std::size_t dim(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.index(hi - lo + 1); }

/// Scalarizes an arbitrary output with fixed random weights so every
/// output element contributes a distinct gradient.
inline std::function<DTensor(const DTensor&)> weigher(const Shape& s, Rng& rng) {
  DTensor w = rand(s, rng);
  return [w](const DTensor& y) { return sum(mul(y, w)); };
}

/// Moves every parameter to a random value so no pre-activation sits
/// exactly on a relu kink (zero-initialized biases put dead rows there).
inline void randomize(const std::vector<DTensor>& params, Rng& rng) {
  for (auto p : params)
    for (auto& v : p.data()) v = rng.uniform(-1.0, 1.0);
}

inline std::vector<int> labels(std::size_t n, std::size_t classes, Rng& rng) {
  std::vector<int> y(n);
  for (auto& v : y) v = static_cast<int>(rng.index(classes));
  return y;
}

/// Labels covering every class at least once.
inline std::vector<int> covering_labels(std::size_t n, std::size_t classes, Rng& rng) {
  std::vector<int> y = labels(n, classes, rng);
  for (std::size_t c = 0; c < classes && c < n; ++c) y[c] = static_cast<int>(c);
  return y;
}

template <typename Op>
GradCheckResult unary(Rng& rng, Shape s, Op op, double lo = -1.0, double hi = 1.0) {
  DTensor x = rand(s, rng, lo, hi);
  auto w = weigher(op(x).shape(), rng);
  return grad_check([=] { return w(op(x)); }, std::vector<DTensor>{x});
}

/// Square with a deliberately wrong backward rule; used to prove the
/// checker catches broken gradients.
inline DTensor faulty_square(const DTensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * x[i];
  return detail::make_result<double>(x.shape(), std::move(out), "faulty_square", {&x}, [](Node<double>& self) {
    auto& in = *self.inputs[0];
    auto& g = in.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.5 * in.data[i] * self.grad[i];
  });
}

}  // namespace gc

inline std::vector<GradCase> gradcheck_registry(bool inject_fault = false) {
  using namespace gc;
  std::vector<GradCase> r;
  auto rows_cols = [](Rng& rng) { return Shape{dim(rng, 1, 4), dim(rng, 2, 5)}; };

  r.push_back({"add", [=](Rng& rng) {
                 const Shape s = rows_cols(rng);
                 DTensor a = rand(s, rng), b = rand(s, rng);
                 auto w = weigher(s, rng);
                 return grad_check([=] { return w(add(a, b)); }, {a, b});
               }});
  r.push_back({"sub", [=](Rng& rng) {
                 const Shape s = rows_cols(rng);
                 DTensor a = rand(s, rng), b = rand(s, rng);
                 auto w = weigher(s, rng);
                 return grad_check([=] { return w(sub(a, b)); }, {a, b});
               }});
  r.push_back({"mul", [=](Rng& rng) {
                 const Shape s = rows_cols(rng);
                 DTensor a = rand(s, rng), b = rand(s, rng);
                 auto w = weigher(s, rng);
                 return grad_check([=] { return w(mul(a, b)); }, {a, b});
               }});
  r.push_back({"scale", [=](Rng& rng) {
                 const double k = rng.uniform(-2.0, 2.0);
                 return unary(rng, rows_cols(rng), [k](const DTensor& x) { return scale(x, k); });
               }});
  r.push_back({"add_rowvec", [=](Rng& rng) {
                 const Shape s = rows_cols(rng);
                 DTensor x = rand(s, rng), b = rand({s[1]}, rng);
                 auto w = weigher(s, rng);
                 return grad_check([=] { return w(add_rowvec(x, b)); }, {x, b});
               }});
  r.push_back({"reshape", [=](Rng& rng) {
                 const Shape s = rows_cols(rng);
                 return unary(rng, s, [s](const DTensor& x) { return reshape(x, Shape{s[0] * s[1]}); });
               }});
  r.push_back({"flatten", [=](Rng& rng) {
                 return unary(rng, {dim(rng, 1, 3), dim(rng, 1, 3), dim(rng, 1, 3), dim(rng, 1, 3)},
                              [](const DTensor& x) { return flatten(x); });
               }});
  r.push_back({"transpose", [=](Rng& rng) {
                 return unary(rng, rows_cols(rng), [](const DTensor& x) { return transpose(x); });
               }});
  r.push_back({"concat_cols", [=](Rng& rng) {
                 const std::size_t n = dim(rng, 1, 4);
                 DTensor a = rand({n, dim(rng, 1, 4)}, rng), b = rand({n, dim(rng, 1, 4)}, rng);
                 auto w = weigher({n, a.dim(1) + b.dim(1)}, rng);
                 return grad_check([=] { return w(concat_cols(a, b)); }, {a, b});
               }});
  r.push_back({"sum", [=](Rng& rng) { return unary(rng, rows_cols(rng), [](const DTensor& x) { return sum(x); }); }});
  r.push_back({"mean", [=](Rng& rng) { return unary(rng, rows_cols(rng), [](const DTensor& x) { return mean(x); }); }});
  r.push_back({"pick", [=](Rng& rng) {
                 const Shape s = rows_cols(rng);
                 std::vector<std::size_t> idx(s[0]);
                 for (auto& i : idx) i = rng.index(s[1]);
                 return unary(rng, s, [idx](const DTensor& x) { return pick(x, idx); });
               }});
  r.push_back({"matmul", [=](Rng& rng) {
                 const std::size_t m = dim(rng, 1, 4), k = dim(rng, 1, 5), n = dim(rng, 1, 4);
                 DTensor a = rand({m, k}, rng), b = rand({k, n}, rng);
                 auto w = weigher({m, n}, rng);
                 return grad_check([=] { return w(matmul(a, b)); }, {a, b});
               }});
  r.push_back({"linear", [=](Rng& rng) {
                 const std::size_t m = dim(rng, 1, 4), k = dim(rng, 1, 5), n = dim(rng, 1, 4);
                 DTensor x = rand({m, k}, rng), wt = rand({k, n}, rng), b = rand({n}, rng);
                 auto w = weigher({m, n}, rng);
                 return grad_check([=] { return w(linear(x, wt, b)); }, {x, wt, b});
               }});
  r.push_back({"conv2d", [=](Rng& rng) {
                 const std::size_t n = dim(rng, 1, 2), c = dim(rng, 1, 2), o = dim(rng, 1, 3);
                 const std::size_t k = dim(rng, 1, 3), stride = dim(rng, 1, 2), out_hw = dim(rng, 1, 3);
                 std::size_t pad = std::min<std::size_t>(rng.index(2), k - 1);
                 if ((out_hw - 1) * stride + k <= 2 * pad) pad = 0;
                 const std::size_t h = (out_hw - 1) * stride + k - 2 * pad;
                 DTensor x = rand({n, c, h, h}, rng), wt = rand({o, c, k, k}, rng), b = rand({o}, rng);
                 Shape out = conv2d(x, wt, b, stride, pad).shape();
                 auto w = weigher(out, rng);
                 return grad_check([=] { return w(conv2d(x, wt, b, stride, pad)); }, {x, wt, b});
               }});
  r.push_back({"maxpool2d", [=](Rng& rng) {
                 const std::size_t size = dim(rng, 2, 3);
                 const std::size_t h = size * dim(rng, 1, 3), wd = size * dim(rng, 1, 3);
                 return unary(rng, {dim(rng, 1, 2), dim(rng, 1, 2), h, wd},
                              [size](const DTensor& x) { return maxpool2d(x, size, size); });
               }});
  r.push_back({"batchnorm2d.train", [=](Rng& rng) {
                 const std::size_t c = dim(rng, 1, 3);
                 DTensor x = rand({dim(rng, 2, 3), c, dim(rng, 1, 3), dim(rng, 1, 3)}, rng);
                 DTensor g = rand({c}, rng, 0.5, 1.5), b = rand({c}, rng);
                 auto w = weigher(x.shape(), rng);
                 return grad_check(
                     [=] {
                       auto stats = RunningStats<double>::create(c);
                       return w(batchnorm2d(x, g, b, stats, Mode::train));
                     },
                     {x, g, b});
               }});
  r.push_back({"batchnorm2d.eval", [=](Rng& rng) {
                 const std::size_t c = dim(rng, 1, 3);
                 DTensor x = rand({dim(rng, 1, 3), c, dim(rng, 1, 3), dim(rng, 1, 3)}, rng);
                 DTensor g = rand({c}, rng, 0.5, 1.5), b = rand({c}, rng);
                 RunningStats<double> stats{rand({c}, rng), rand({c}, rng, 0.5, 2.0)};
                 auto w = weigher(x.shape(), rng);
                 return grad_check(
                     [=]() mutable { return w(batchnorm2d(x, g, b, stats, Mode::eval)); }, {x, g, b});
               }});
  r.push_back({"relu", [=](Rng& rng) { return unary(rng, rows_cols(rng), [](const DTensor& x) { return relu(x); }); }});
  r.push_back({"leaky_relu", [=](Rng& rng) {
                 return unary(rng, rows_cols(rng), [](const DTensor& x) { return leaky_relu(x, 0.2); });
               }});
  r.push_back({"sigmoid", [=](Rng& rng) {
                 return unary(rng, rows_cols(rng), [](const DTensor& x) { return sigmoid(x); }, -6.0, 6.0);
               }});
  r.push_back({"log_sigmoid", [=](Rng& rng) {
                 return unary(rng, rows_cols(rng), [](const DTensor& x) { return log_sigmoid(x); }, -6.0, 6.0);
               }});
  r.push_back({"softmax", [=](Rng& rng) {
                 const double tau = rng.uniform(0.5, 3.0);
                 return unary(rng, rows_cols(rng), [tau](const DTensor& x) { return softmax(x, tau); }, -3.0, 3.0);
               }});
  r.push_back({"log_softmax", [=](Rng& rng) {
                 const double tau = rng.uniform(0.5, 3.0);
                 return unary(rng, rows_cols(rng), [tau](const DTensor& x) { return log_softmax(x, tau); }, -3.0,
                              3.0);
               }});
  // Probabilities are produced inside the checked function so perturbations
  // keep every row on the simplex.
  r.push_back({"entropy", [=](Rng& rng) {
                 return unary(rng, rows_cols(rng), [](const DTensor& x) { return entropy(softmax(x, 1.0)); }, -3.0,
                              3.0);
               }});
  r.push_back({"softmax_entropy", [=](Rng& rng) {
                 const double tau = rng.uniform(0.5, 3.0);
                 return unary(rng, rows_cols(rng), [tau](const DTensor& x) { return softmax_entropy(x, tau); }, -3.0,
                              3.0);
               }});
  r.push_back({"l2_normalize_rows", [=](Rng& rng) {
                 return unary(rng, rows_cols(rng), [](const DTensor& x) { return l2_normalize_rows(x); }, 0.2, 1.0);
               }});

  // Composite objective terms.
  r.push_back({"supervised_ce", [=](Rng& rng) {
                 const Shape s{dim(rng, 1, 5), dim(rng, 2, 5)};
                 const auto y = labels(s[0], s[1], rng);
                 DTensor z = rand(s, rng, -3.0, 3.0);
                 return grad_check([=] { return supervised_ce(z, y); }, {z});
               }});
  r.push_back({"domain_loss_D", [=](Rng& rng) {
                 DTensor s = rand({dim(rng, 1, 6)}, rng, -4.0, 4.0), t = rand({dim(rng, 1, 6)}, rng, -4.0, 4.0);
                 return grad_check([=] { return domain_loss_D(s, t); }, {s, t});
               }});
  r.push_back({"domain_loss_E", [=](Rng& rng) {
                 DTensor s = rand({dim(rng, 1, 6)}, rng, -4.0, 4.0), t = rand({dim(rng, 1, 6)}, rng, -4.0, 4.0);
                 return grad_check([=] { return domain_loss_E(s, t); }, {s, t});
               }});
  r.push_back({"compute_prototypes", [=](Rng& rng) {
                 const std::size_t C = dim(rng, 1, 3), n = C + dim(rng, 0, 3), D = dim(rng, 1, 4);
                 const auto y = covering_labels(n, C, rng);
                 DTensor e = rand({n, D}, rng);
                 auto w = weigher({C, D}, rng);
                 return grad_check([=] { return w(compute_prototypes(e, y, C).centroids); }, {e});
               }});
  r.push_back({"similarity", [=](Rng& rng) {
                 const std::size_t D = dim(rng, 1, 4);
                 DTensor q = rand({dim(rng, 1, 4), D}, rng), s = rand({dim(rng, 1, 4), D}, rng, 0.2, 1.0);
                 auto w = weigher({q.dim(0), s.dim(0)}, rng);
                 return grad_check([=] { return w(similarity(q, s)); }, {q, s});
               }});
  r.push_back({"entropy_transfer", [=](Rng& rng) {
                 const std::size_t D = dim(rng, 2, 4);
                 DTensor q = rand({dim(rng, 1, 4), D}, rng, -2.0, 2.0), s = rand({dim(rng, 2, 4), D}, rng, 0.2, 1.0);
                 return grad_check([=] { return entropy_transfer(q, s, 2.0); }, {q, s});
               }});
  r.push_back({"metric_ce", [=](Rng& rng) {
                 const std::size_t C = dim(rng, 2, 3), D = dim(rng, 2, 4), n = C + dim(rng, 0, 3);
                 const auto y = covering_labels(n, C, rng);
                 DTensor q = rand({n, D}, rng, -2.0, 2.0), e = rand({n, D}, rng, 0.2, 1.0);
                 return grad_check([=] { return metric_ce(q, y, compute_prototypes(e, y, C)); }, {q, e});
               }});
  r.push_back({"semantic_total", [=](Rng& rng) {
                 const std::size_t C = dim(rng, 2, 3), D = dim(rng, 2, 4), n = C + dim(rng, 0, 2);
                 const auto y = covering_labels(n, C, rng);
                 DTensor src = rand({C, D}, rng, 0.2, 1.0);
                 DTensor lab = rand({n, D}, rng, 0.2, 1.0), unl = rand({dim(rng, 1, 4), D}, rng, -1.0, 1.0);
                 return grad_check([=] { return semantic_total(src, lab, y, C, unl, 2.0, 1.0).total; }, {src, lab, unl});
               }});
  r.push_back({"total_objective", [=](Rng& rng) {
                 const Shape s{dim(rng, 1, 4), dim(rng, 2, 4)};
                 const auto y = labels(s[0], s[1], rng);
                 DTensor z = rand(s, rng, -2.0, 2.0), ds = rand({s[0]}, rng, -2.0, 2.0), dt = rand({s[0]}, rng, -2.0, 2.0);
                 DTensor q = rand({s[0], s[1]}, rng), sup = rand({s[1], s[1]}, rng, 0.2, 1.0);
                 return grad_check(
                     [=] {
                       return total_objective(supervised_ce(z, y), domain_loss_E(ds, dt), entropy_transfer(q, sup, 2.0),
                                              0.1, 0.1);
                     },
                     {z, ds, dt, q, sup});
               }});
  for (Fusion fusion : {Fusion::sum, Fusion::concat}) {
    r.push_back({std::string("discriminator.") + (fusion == Fusion::sum ? "sum" : "concat"), [=](Rng& rng) {
                   const std::size_t n = dim(rng, 1, 3);
                   DiscriminatorSpec spec{{dim(rng, 2, 4), dim(rng, 2, 4), dim(rng, 2, 4)}, {3}, 0.1, fusion,
                                          rng.index(2) ? Activation::relu : Activation::leaky_relu, 0.2};
                   auto d = MultiLayerDiscriminator<double>::build(spec, rng.next_u64());
                   std::vector<DTensor> taps;
                   for (auto w : spec.tap_widths) taps.push_back(rand({n, w}, rng));
                   randomize(d.parameter_tensors(), rng);
                   std::vector<DTensor> wrt = taps;
                   for (auto& p : d.parameter_tensors()) wrt.push_back(p);
                   auto w = weigher({n}, rng);
                   return grad_check([=] { return w(d.forward(taps)); }, wrt);
                 }});
  }
  r.push_back({"embedding_network", [=](Rng& rng) {
                 NetworkSpec spec;
                 spec.name = "tiny";
                 spec.input = {1, 6, 6};
                 spec.layers = {LayerSpec::conv("conv1", 2, 3, 1, 1), LayerSpec::batchnorm("bn1"),
                                LayerSpec::relu("relu1"),           LayerSpec::maxpool("pool1", 2, 2),
                                LayerSpec::flatten("flat"),         LayerSpec::linear("fc1", 4),
                                LayerSpec::leaky_relu("fc1.act"),   LayerSpec::linear("fc2", 3, true)};
                 spec.taps = {"flat", "fc1.act"};
                 spec.embedding = "fc1.act";
                 auto net = EmbeddingNetwork<double>::build(spec, rng.next_u64());
                 DTensor x = rand({2, 1, 6, 6}, rng);
                 const auto y = labels(2, 3, rng);
                 std::vector<DTensor> wrt{x};
                 for (auto& p : net.parameters()) wrt.push_back(p.tensor);
                 randomize(std::vector<DTensor>(wrt.begin() + 1, wrt.end()), rng);
                 return grad_check([=]() mutable { return supervised_ce(net.forward(x, Mode::train).logits, y); }, wrt);
               }});
  if (inject_fault) {
    r.push_back({"faulty_square", [=](Rng& rng) { return unary(rng, rows_cols(rng), faulty_square); }});
  }
  return r;
}

struct GradSuiteOptions {
  std::size_t instances = 10;
  double tolerance = 1e-4;
  std::uint64_t seed = 20240601;
  bool inject_fault = false;
};

inline GradSuiteReport run_gradcheck_suite(const GradSuiteOptions& opt = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  GradSuiteReport report;
  for (const auto& c : gradcheck_registry(opt.inject_fault)) {
    GradCaseReport cr{c.name};
    std::uint64_t tag = 0xcbf29ce484222325ULL;  // FNV-1a of the case name
    for (unsigned char ch : c.name) tag = (tag ^ ch) * 0x100000001b3ULL;
    Rng rng(mix_seed(opt.seed, tag));
    for (std::size_t i = 0; i < opt.instances; ++i) {
      const GradCheckResult res = c.run(rng);
      cr.max_rel_error = std::max(cr.max_rel_error, res.max_rel_error);
      cr.checked += res.checked;
      cr.excluded += res.excluded;
      ++cr.instances;
    }
    cr.passed = cr.checked > 0 && cr.max_rel_error <= opt.tolerance;
    report.cases.push_back(cr);
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace xfer
