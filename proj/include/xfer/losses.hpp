#pragma once

// Training objective terms. Every batch loss is mean-reduced over examples
// so magnitudes do not depend on batch size.

#include <cstddef>
#include <string>
#include <vector>

#include "xfer/errors.hpp"
#include "xfer/ops.hpp"

namespace xfer {

namespace detail {

inline std::vector<std::size_t> checked_labels(const std::vector<int>& labels, std::size_t classes,
                                               const char* op) {
  std::vector<std::size_t> idx(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw ParameterError(std::string(op) + ": label " + std::to_string(labels[i]) + " outside [0, " +
                           std::to_string(classes) + ")");
    }
    idx[i] = static_cast<std::size_t>(labels[i]);
  }
  return idx;
}

}  // namespace detail

/// Mean negative log-likelihood of softmax(logits) at the labels.
template <typename T>
Tensor<T> supervised_ce(const Tensor<T>& logits, const std::vector<int>& labels) {
  detail::require_rank(logits, 2, "supervised_ce");
  if (labels.size() != logits.dim(0)) {
    throw ShapeError("supervised_ce: " + std::to_string(labels.size()) + " labels for logits " +
                     shape_str(logits.shape()));
  }
  const auto idx = detail::checked_labels(labels, logits.dim(1), "supervised_ce");
  return scale(mean(pick(log_softmax(logits, T(1)), idx)), T(-1));
}

/// Discriminator objective: -E[log d_src] - E[log(1 - d_tgt)], with d the
/// sigmoid of the logits.
template <typename T>
Tensor<T> domain_loss_D(const Tensor<T>& src_logits, const Tensor<T>& tgt_logits) {
  return scale(add(mean(log_sigmoid(src_logits)), mean(log_sigmoid(scale(tgt_logits, T(-1))))), T(-1));
}

/// Encoder objective with the domain labels inverted:
/// -E[log(1 - d_src)] - E[log d_tgt].
template <typename T>
Tensor<T> domain_loss_E(const Tensor<T>& src_logits, const Tensor<T>& tgt_logits) {
  return scale(add(mean(log_sigmoid(scale(src_logits, T(-1)))), mean(log_sigmoid(tgt_logits))), T(-1));
}

template <typename T>
struct PrototypeSet {
  Tensor<T> centroids;              // classes x D, unnormalized means
  std::vector<std::size_t> counts;  // support examples per class

  std::size_t classes() const { return counts.size(); }
};

/// Class means of `embeddings` [N x D]. Differentiable in the embeddings.
template <typename T>
PrototypeSet<T> compute_prototypes(const Tensor<T>& embeddings, const std::vector<int>& labels,
                                   std::size_t classes) {
  detail::require_rank(embeddings, 2, "compute_prototypes");
  const std::size_t N = embeddings.dim(0);
  if (labels.size() != N) throw ShapeError("compute_prototypes: label count does not match embeddings");
  const auto idx = detail::checked_labels(labels, classes, "compute_prototypes");
  std::vector<std::size_t> counts(classes, 0);
  for (auto c : idx) ++counts[c];
  for (std::size_t c = 0; c < classes; ++c) {
    if (counts[c] == 0) throw ParameterError("compute_prototypes: class " + std::to_string(c) + " has no support");
  }
  auto avg = Tensor<T>::zeros({classes, N});
  for (std::size_t i = 0; i < N; ++i) avg[idx[i] * N + i] = T(1) / static_cast<T>(counts[idx[i]]);
  return {matmul(avg, embeddings), std::move(counts)};
}

/// Similarity vectors [N x C]: dot products of the unnormalized queries with
/// L2-normalized supports.
template <typename T>
Tensor<T> similarity(const Tensor<T>& queries, const Tensor<T>& support) {
  detail::require_rank(queries, 2, "similarity");
  detail::require_rank(support, 2, "similarity");
  if (queries.dim(1) != support.dim(1)) {
    throw ShapeError("similarity: query " + shape_str(queries.shape()) + " vs support " +
                     shape_str(support.shape()));
  }
  return matmul(queries, transpose(l2_normalize_rows(support)));
}

/// Mean entropy of softmax(similarity / tau) over the query batch; 0 when
/// the batch is empty.
template <typename T>
Tensor<T> entropy_transfer(const Tensor<T>& queries, const Tensor<T>& support, T tau) {
  require_temperature(tau, "entropy_transfer");
  if (queries.rank() == 2 && queries.dim(0) == 0) return Tensor<T>::scalar(T(0));
  return mean(softmax_entropy(similarity(queries, support), tau));
}

/// Cross entropy with similarity-to-prototype scores as logits.
template <typename T>
Tensor<T> metric_ce(const Tensor<T>& queries, const std::vector<int>& labels, const PrototypeSet<T>& prototypes,
                    T tau = T(1)) {
  require_temperature(tau, "metric_ce");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= prototypes.classes() || prototypes.counts[y] == 0) {
      throw ParameterError("metric_ce: no prototype for class " + std::to_string(y));
    }
  }
  Tensor<T> sim = similarity(queries, prototypes.centroids);
  return supervised_ce(tau == T(1) ? sim : scale(sim, T(1) / tau), labels);
}

template <typename T>
struct SemanticLosses {
  Tensor<T> source_to_target;   // unlabeled target vs source prototypes
  Tensor<T> target_supervised;  // metric CE on labeled target
  Tensor<T> target_unlabeled;   // unlabeled target vs target prototypes
  Tensor<T> total;
};

/// The three semantic-transfer terms and their unweighted sum. Target
/// prototypes are rebuilt from the labeled target embeddings; with
/// `stop_grad_prototypes` they are treated as constants.
template <typename T>
SemanticLosses<T> semantic_total(const Tensor<T>& source_prototypes, const Tensor<T>& target_labeled,
                                 const std::vector<int>& target_labels, std::size_t target_classes,
                                 const Tensor<T>& target_unlabeled, T tau_st, T tau_tt,
                                 bool stop_grad_prototypes = false) {
  PrototypeSet<T> protos = compute_prototypes(target_labeled, target_labels, target_classes);
  if (stop_grad_prototypes) protos.centroids = protos.centroids.detach();
  SemanticLosses<T> out;
  out.source_to_target = entropy_transfer(target_unlabeled, source_prototypes, tau_st);
  out.target_supervised = metric_ce(target_labeled, target_labels, protos, T(1));
  out.target_unlabeled = entropy_transfer(target_unlabeled, protos.centroids, tau_tt);
  out.total = add(add(out.source_to_target, out.target_supervised), out.target_unlabeled);
  return out;
}

/// Scalar values of every objective term, in nats.
struct LossReport {
  double sup = 0.0;
  double dt_d = 0.0;
  double dt_e = 0.0;
  double st_src = 0.0;
  double st_sup = 0.0;
  double st_unsup = 0.0;
  double total = 0.0;
};

inline void require_weights(double alpha, double beta) {
  if (!(alpha >= 0.0) || !(beta >= 0.0)) {
    throw ParameterError("total_objective: weights must be >= 0, got alpha=" + std::to_string(alpha) +
                         " beta=" + std::to_string(beta));
  }
}

/// sup + alpha * adversarial(encoder side) + beta * semantic.
template <typename T>
Tensor<T> total_objective(const Tensor<T>& sup, const Tensor<T>& dt_e, const Tensor<T>& st, double alpha,
                          double beta) {
  require_weights(alpha, beta);
  return add(add(sup, scale(dt_e, static_cast<T>(alpha))), scale(st, static_cast<T>(beta)));
}

inline double total_objective(const LossReport& r, double alpha, double beta) {
  require_weights(alpha, beta);
  return r.sup + alpha * r.dt_e + beta * (r.st_src + r.st_sup + r.st_unsup);
}

}  // namespace xfer
