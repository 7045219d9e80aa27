#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "xfer/data.hpp"
#include "xfer/errors.hpp"
#include "xfer/layers.hpp"

namespace xfer {

struct EvalResult {
  double accuracy = 0.0;
  std::size_t n_examples = 0;
  std::vector<double> per_class;          // accuracy per true class
  std::vector<std::size_t> class_counts;  // examples per true class
  std::uint64_t seed = 0;
};

/// Accuracy of row-wise argmax (first index on ties) against `labels`.
template <typename T>
EvalResult score_logits(const Tensor<T>& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw ShapeError("score_logits: logits " + shape_str(logits.shape()) + " for " +
                     std::to_string(labels.size()) + " labels");
  }
  if (labels.empty()) throw ParameterError("evaluate: empty dataset");
  const std::size_t N = logits.dim(0), K = logits.dim(1);
  EvalResult r;
  r.n_examples = N;
  std::size_t classes = K;
  for (int y : labels) classes = std::max(classes, static_cast<std::size_t>(y) + 1);
  std::vector<std::size_t> correct(classes, 0);
  r.class_counts.assign(classes, 0);
  std::size_t total = 0;
  for (std::size_t i = 0; i < N; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < K; ++j)
      if (logits[i * K + j] > logits[i * K + best]) best = j;
    const auto y = static_cast<std::size_t>(labels[i]);
    ++r.class_counts[y];
    if (best == y) {
      ++correct[y];
      ++total;
    }
  }
  r.accuracy = static_cast<double>(total) / static_cast<double>(N);
  r.per_class.resize(classes);
  for (std::size_t c = 0; c < classes; ++c)
    r.per_class[c] = r.class_counts[c] ? static_cast<double>(correct[c]) / static_cast<double>(r.class_counts[c]) : 0.0;
  return r;
}

/// Eval-mode accuracy over a labeled dataset. `label_map`, when given,
/// translates dataset labels into the network's class indices.
template <typename T>
EvalResult evaluate(EmbeddingNetwork<T>& net, const LabeledDataset& ds,
                    const std::optional<std::vector<int>>& label_map = std::nullopt, std::size_t batch = 256) {
  if (ds.size() == 0) throw ParameterError("evaluate: empty dataset");
  NoGradGuard no_grad;
  std::vector<int> labels = ds.labels;
  if (label_map) {
    for (int& y : labels) y = label_map->at(static_cast<std::size_t>(y));
  }
  const std::size_t K = net.num_classes();
  std::vector<T> all;
  all.reserve(ds.size() * K);
  for (std::size_t at = 0; at < ds.size(); at += batch) {
    std::vector<std::size_t> idx;
    for (std::size_t i = at; i < std::min(ds.size(), at + batch); ++i) idx.push_back(i);
    auto out = net.forward(normalize_batch<T>(ds, idx), Mode::eval);
    all.insert(all.end(), out.logits.data().begin(), out.logits.data().end());
  }
  return score_logits(Tensor<T>::from({ds.size(), K}, std::move(all)), labels);
}

struct Aggregate {
  double mean = 0.0;
  double std_error = 0.0;  // sample stddev (n-1) / sqrt(n)
  std::size_t n_seeds = 0;
};

inline Aggregate aggregate(const std::vector<double>& values) {
  if (values.size() < 2) {
    throw ParameterError("aggregate: need at least 2 results, got " + std::to_string(values.size()));
  }
  // Sorted summation so the result does not depend on input order.
  std::vector<double> v = values;
  std::sort(v.begin(), v.end());
  const double n = static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += x;
  const double mean = s / n;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / (n - 1.0)) / std::sqrt(n), v.size()};
}

inline Aggregate aggregate(const std::vector<EvalResult>& results) {
  std::vector<double> acc;
  for (const auto& r : results) acc.push_back(r.accuracy);
  return aggregate(acc);
}

}  // namespace xfer
