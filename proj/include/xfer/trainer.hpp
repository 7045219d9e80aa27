#pragma once

// Training procedures: source pretraining, joint adaptation (supervised +
// adversarial + semantic transfer), the supervised baselines and the
// unsupervised adversarial-only adaptation.

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "xfer/data.hpp"
#include "xfer/discriminator.hpp"
#include "xfer/layers.hpp"
#include "xfer/losses.hpp"
#include "xfer/metrics.hpp"
#include "xfer/optim.hpp"

namespace xfer {

struct TrainConfig {
  double alpha = 0.1;
  double beta = 0.1;
  double tau_st = 2.0;
  double tau_tt = 1.0;
  double gamma = 0.1;
  Fusion fusion = Fusion::sum;
  std::vector<std::string> taps;         // empty: network default
  std::string embedding;                 // empty: network default
  std::vector<std::size_t> head_hidden;  // empty: architecture default
  double lr = 1e-3;
  double grad_clip = 0.0;
  std::size_t batch_source = 128;
  std::size_t batch_unlabeled = 128;
  std::size_t batch_labeled = 0;  // 0: all of D2 every step
  std::size_t pretrain_steps = 2000;
  std::size_t adapt_steps = 2000;
  std::size_t eval_every = 0;
  std::size_t source_protos_per_class = 1000;
  std::size_t snapshot_every = 50;
  std::uint64_t seed = 0;
  bool reinit_head = true;
  bool stop_grad_prototypes = false;
  bool deterministic = true;
  // Source support for the source-to-target term: class prototypes, or the
  // embeddings of the current source batch.
  enum class SourceSupport { prototypes, examples } source_support = SourceSupport::prototypes;

  void validate() const {
    if (!(alpha >= 0.0) || !(beta >= 0.0)) throw ParameterError("alpha and beta must be >= 0");
    if (!(tau_st > 0.0) || !(tau_tt > 0.0)) throw ParameterError("temperatures must be > 0");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ParameterError("gamma must lie in (0, 1]");
    if (!(lr > 0.0)) throw ParameterError("lr must be > 0");
    if (batch_source == 0 || batch_unlabeled == 0) throw ParameterError("batch sizes must be >= 1");
  }
};

inline std::string join(const std::vector<std::string>& v, char sep = ',') {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? std::string(1, sep) : "") + v[i];
  return s;
}

/// key=value rendering of the training configuration.
inline std::string describe(const TrainConfig& c) {
  std::ostringstream os;
  os.precision(17);
  std::vector<std::string> hidden;
  for (auto h : c.head_hidden) hidden.push_back(std::to_string(h));
  os << "alpha=" << c.alpha << "\nbeta=" << c.beta << "\ntau_st=" << c.tau_st << "\ntau_tt=" << c.tau_tt
     << "\ngamma=" << c.gamma << "\nfusion=" << (c.fusion == Fusion::sum ? "sum" : "concat")
     << "\ntaps=" << join(c.taps) << "\nembedding=" << c.embedding << "\nhead_hidden=" << join(hidden)
     << "\nlr=" << c.lr << "\ngrad_clip=" << c.grad_clip << "\nbatch_source=" << c.batch_source
     << "\nbatch_unlabeled=" << c.batch_unlabeled << "\nbatch_labeled=" << c.batch_labeled
     << "\npretrain_steps=" << c.pretrain_steps << "\nadapt_steps=" << c.adapt_steps
     << "\neval_every=" << c.eval_every << "\nsource_protos_per_class=" << c.source_protos_per_class
     << "\nseed=" << c.seed << "\nreinit_head=" << (c.reinit_head ? "true" : "false")
     << "\nstop_grad_prototypes=" << (c.stop_grad_prototypes ? "true" : "false")
     << "\ndeterministic=" << (c.deterministic ? "true" : "false")
     << "\nsource_support=" << (c.source_support == TrainConfig::SourceSupport::prototypes ? "prototypes" : "examples")
     << "\n";
  return os.str();
}

struct StepLog {
  std::size_t step = 0;
  LossReport losses;
  std::optional<double> eval_acc;
};

/// Append-only log of one training run.
struct TrainRecord {
  std::vector<StepLog> steps;
  double wall_seconds = 0.0;
  std::string config_snapshot;
  std::uint64_t seed = 0;

  static constexpr const char* kCsvHeader =
      "step,loss_sup,loss_dt_d,loss_dt_e,loss_st_src,loss_st_sup,loss_st_unsup,loss_total,eval_acc";

  std::string csv() const {
    std::string out = std::string(kCsvHeader) + "\n";
    char buf[64];
    auto num = [&](double v) {
      std::snprintf(buf, sizeof buf, "%.9g", v);
      return std::string(buf);
    };
    for (const auto& s : steps) {
      const auto& l = s.losses;
      out += std::to_string(s.step) + "," + num(l.sup) + "," + num(l.dt_d) + "," + num(l.dt_e) + "," +
             num(l.st_src) + "," + num(l.st_sup) + "," + num(l.st_unsup) + "," + num(l.total) + "," +
             (s.eval_acc ? num(*s.eval_acc) : std::string()) + "\n";
    }
    return out;
  }

  void write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << csv();
  }
};

/// Thrown when a loss becomes non-finite; carries the most recent finite
/// parameter snapshot.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t step, std::vector<NamedTensor<float>> last_good)
      : std::runtime_error("training diverged (non-finite loss) at step " + std::to_string(step)),
        step_(step),
        last_good_(std::move(last_good)) {}
  std::size_t step() const { return step_; }
  const std::vector<NamedTensor<float>>& last_good() const { return last_good_; }

 private:
  std::size_t step_;
  std::vector<NamedTensor<float>> last_good_;
};

namespace detail {

inline std::vector<NamedTensor<float>> snapshot(const EmbeddingNetwork<float>& net) {
  std::vector<NamedTensor<float>> s;
  for (const auto& nt : net.state()) s.push_back({nt.name, nt.tensor.detach()});
  return s;
}

inline void check_finite(double v, std::size_t step, const std::vector<NamedTensor<float>>& last_good) {
  if (!std::isfinite(v)) throw TrainingDiverged(step, last_good);
}

/// Skips single-example batches, which batchnorm cannot normalize.
inline std::vector<std::size_t> next_batch(BatchIterator& it) {
  auto b = it.next();
  if (b.size() < 2) b = it.next();
  if (b.size() < 2) throw ParameterError("training needs at least 2 examples per batch");
  return b;
}

inline NetworkSpec apply_overrides(NetworkSpec spec, const TrainConfig& cfg) {
  if (!cfg.taps.empty()) spec.taps = cfg.taps;
  if (!cfg.embedding.empty()) spec.embedding = cfg.embedding;
  infer_shapes(spec);
  return spec;
}

/// Rebuilds `net` under an overridden tap/embedding selection, keeping weights.
inline EmbeddingNetwork<float> with_taps(const EmbeddingNetwork<float>& net, const TrainConfig& cfg) {
  NetworkSpec spec = apply_overrides(net.spec(), cfg);
  auto out = EmbeddingNetwork<float>::build(spec, 0);
  out.load_state(net.state());
  return out;
}

inline void maybe_eval(StepLog& log, EmbeddingNetwork<float>& net, const TrainConfig& cfg,
                       const LabeledDataset* eval_set, std::size_t step, std::size_t total_steps) {
  if (!eval_set || cfg.eval_every == 0) return;
  if (step % cfg.eval_every == 0 || step == total_steps) log.eval_acc = evaluate(net, *eval_set).accuracy;
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

struct SourceModel {
  EmbeddingNetwork<float> net;
  double train_accuracy = 0.0;
  TrainRecord record;
};

/// Supervised training of embedding + head on D1.
inline SourceModel pretrain_source(const LabeledDataset& d1, const NetworkSpec& spec, const TrainConfig& cfg,
                                   const LabeledDataset* eval_set = nullptr) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  SourceModel m;
  m.net = EmbeddingNetwork<float>::build(detail::apply_overrides(spec, cfg), mix_seed(cfg.seed, 2));
  m.record.seed = cfg.seed;
  m.record.config_snapshot = describe(cfg);
  std::vector<Tensor<float>> params;
  for (auto& nt : m.net.parameters()) params.push_back(nt.tensor);
  Adam<float> opt(params, {cfg.lr, 0.9, 0.999, 1e-8, cfg.grad_clip});

  BatchIterator batches(d1.size(), cfg.batch_source, mix_seed(cfg.seed, 1));
  auto last_good = detail::snapshot(m.net);
  for (std::size_t step = 1; step <= cfg.pretrain_steps; ++step) {
    const auto idx = detail::next_batch(batches);
    auto out = m.net.forward(normalize_batch(d1, idx), Mode::train);
    auto loss = supervised_ce(out.logits, gather_labels(d1, idx));
    detail::check_finite(loss.item(), step, last_good);
    opt.zero_grad();
    backward(loss);
    opt.step();
    StepLog log{step, {}, std::nullopt};
    log.losses.sup = log.losses.total = loss.item();
    detail::maybe_eval(log, m.net, cfg, eval_set, step, cfg.pretrain_steps);
    m.record.steps.push_back(log);
    if (cfg.snapshot_every && step % cfg.snapshot_every == 0) last_good = detail::snapshot(m.net);
  }
  m.train_accuracy = evaluate(m.net, d1).accuracy;
  m.record.wall_seconds = detail::seconds_since(t0);
  return m;
}

struct AdaptResult {
  EmbeddingNetwork<float> target;
  MultiLayerDiscriminator<float> discriminator;
  TrainRecord record;
  std::size_t encoder_steps = 0;
  std::size_t discriminator_steps = 0;
};

/// Class means of frozen-source embeddings over a seeded sample of at most
/// `per_class` examples per class.
inline Tensor<float> source_prototypes(EmbeddingNetwork<float>& source, const LabeledDataset& d1,
                                       std::size_t per_class, std::uint64_t seed) {
  NoGradGuard no_grad;
  const std::size_t C = source.num_classes();
  Rng rng(seed);
  const auto perm = rng.permutation(d1.size());
  std::vector<std::size_t> take;
  std::vector<std::size_t> counts(std::max<std::size_t>(C, d1.classes.size()), 0);
  for (std::size_t i : perm) {
    const auto y = static_cast<std::size_t>(d1.labels[i]);
    if (y >= counts.size()) counts.resize(y + 1, 0);
    if (counts[y] < per_class) {
      ++counts[y];
      take.push_back(i);
    }
  }
  std::sort(take.begin(), take.end());
  std::vector<float> emb;
  std::size_t D = 0;
  for (std::size_t at = 0; at < take.size(); at += 256) {
    std::vector<std::size_t> idx(take.begin() + at, take.begin() + std::min(take.size(), at + 256));
    auto out = source.forward(normalize_batch(d1, idx), Mode::eval);
    D = out.embedding.dim(1);
    emb.insert(emb.end(), out.embedding.data().begin(), out.embedding.data().end());
  }
  std::size_t classes = 0;
  for (std::size_t c = 0; c < counts.size(); ++c)
    if (counts[c]) classes = c + 1;
  auto protos = compute_prototypes(Tensor<float>::from({take.size(), D}, std::move(emb)), gather_labels(d1, take),
                                   classes);
  return protos.centroids.detach();
}

/// Joint adaptation. Per step: one discriminator update on the adversarial
/// loss with frozen-source taps vs live-target taps, then one target
/// encoder+head update on sup + alpha*adv + beta*semantic, each with a fresh
/// forward pass. Terms with zero weight are reported but kept out of the
/// gradient.
inline AdaptResult adapt_joint(const EmbeddingNetwork<float>& source_net, const LabeledDataset& d1,
                               const LabeledDataset& d2, const UnlabeledDataset& d3, const TrainConfig& cfg,
                               const LabeledDataset* eval_set = nullptr) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t target_classes = d2.classes.empty() ? detail::class_set(d2.labels).size() : d2.classes.size();

  EmbeddingNetwork<float> source = detail::with_taps(source_net, cfg);
  AdaptResult r;
  r.target = cfg.reinit_head ? clone_into_target(source, HeadReinit{target_classes, mix_seed(cfg.seed, 3)})
                             : clone_into_target(source);
  r.record.seed = cfg.seed;
  r.record.config_snapshot = describe(cfg);

  DiscriminatorSpec dspec{source.tap_widths(),
                          cfg.head_hidden.empty() ? default_head_hidden(source.spec()) : cfg.head_hidden,
                          cfg.gamma, cfg.fusion, Activation::relu, 0.2};
  r.discriminator = MultiLayerDiscriminator<float>::build(dspec, mix_seed(cfg.seed, 4));

  std::vector<Tensor<float>> target_params;
  for (auto& nt : r.target.parameters()) target_params.push_back(nt.tensor);
  const AdamOptions adam{cfg.lr, 0.9, 0.999, 1e-8, cfg.grad_clip};
  Adam<float> opt_e(target_params, adam);
  Adam<float> opt_d(r.discriminator.parameter_tensors(), adam);

  const bool per_example = cfg.source_support == TrainConfig::SourceSupport::examples;
  const Tensor<float> src_protos =
      per_example ? Tensor<float>() : source_prototypes(source, d1, cfg.source_protos_per_class, mix_seed(cfg.seed, 12));

  BatchIterator src_batches(d1.size(), cfg.batch_source, mix_seed(cfg.seed, 10));
  BatchIterator unl_batches(d3.size(), cfg.batch_unlabeled, mix_seed(cfg.seed, 11));
  std::optional<BatchIterator> lab_batches;
  if (cfg.batch_labeled) lab_batches.emplace(d2.size(), cfg.batch_labeled, mix_seed(cfg.seed, 13));
  const auto all_d2 = iota_indices(d2.size());

  auto last_good = detail::snapshot(r.target);
  for (std::size_t step = 1; step <= cfg.adapt_steps; ++step) {
    const auto src_idx = detail::next_batch(src_batches);
    const auto unl_idx = detail::next_batch(unl_batches);
    const auto lab_idx = lab_batches ? detail::next_batch(*lab_batches) : all_d2;

    std::vector<Tensor<float>> src_taps;
    Tensor<float> src_support = src_protos;
    {
      NoGradGuard no_grad;
      auto src_out = source.forward(normalize_batch(d1, src_idx), Mode::eval);
      src_taps = std::move(src_out.taps);
      if (per_example) src_support = src_out.embedding;
    }
    const Tensor<float> unl_x = normalize_batch(d3, unl_idx);

    // Discriminator step.
    std::vector<Tensor<float>> tgt_taps_const;
    {
      NoGradGuard no_grad;
      tgt_taps_const = r.target.forward(unl_x, Mode::train).taps;
    }
    auto loss_d = domain_loss_D(r.discriminator.forward(src_taps), r.discriminator.forward(tgt_taps_const));
    detail::check_finite(loss_d.item(), step, last_good);
    opt_d.zero_grad();
    backward(loss_d);
    opt_d.step();
    ++r.discriminator_steps;

    // Encoder step.
    auto unl_out = r.target.forward(unl_x, Mode::train);
    auto lab_out = r.target.forward(normalize_batch(d2, lab_idx), Mode::train);
    const auto lab_y = gather_labels(d2, lab_idx);

    auto loss_sup = supervised_ce(lab_out.logits, lab_y);
    auto loss_e = domain_loss_E(r.discriminator.forward(src_taps), r.discriminator.forward(unl_out.taps));
    auto sem = semantic_total(src_support, lab_out.embedding, lab_y, target_classes, unl_out.embedding,
                              static_cast<float>(cfg.tau_st), static_cast<float>(cfg.tau_tt),
                              cfg.stop_grad_prototypes);

    Tensor<float> total = loss_sup;
    if (cfg.alpha > 0.0) total = add(total, scale(loss_e, static_cast<float>(cfg.alpha)));
    if (cfg.beta > 0.0) total = add(total, scale(sem.total, static_cast<float>(cfg.beta)));
    detail::check_finite(total.item(), step, last_good);

    opt_e.zero_grad();
    backward(total);
    opt_e.step();
    ++r.encoder_steps;

    StepLog log{step, {}, std::nullopt};
    log.losses = {loss_sup.item(),
                  loss_d.item(),
                  loss_e.item(),
                  sem.source_to_target.item(),
                  sem.target_supervised.item(),
                  sem.target_unlabeled.item(),
                  total.item()};
    detail::maybe_eval(log, r.target, cfg, eval_set, step, cfg.adapt_steps);
    r.record.steps.push_back(log);
    if (cfg.snapshot_every && step % cfg.snapshot_every == 0) last_good = detail::snapshot(r.target);
  }
  r.record.wall_seconds = detail::seconds_since(t0);
  return r;
}

enum class BaselineKind { target_only, fine_tune };

/// Supervised training on D2 alone, from scratch (target_only, needs
/// `spec`) or from the source network with a fresh head (fine_tune).
inline AdaptResult run_baseline(BaselineKind kind, const EmbeddingNetwork<float>* source_net, const NetworkSpec& spec,
                                const LabeledDataset& d2, const TrainConfig& cfg,
                                const LabeledDataset* eval_set = nullptr) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t target_classes = d2.classes.empty() ? detail::class_set(d2.labels).size() : d2.classes.size();
  AdaptResult r;
  if (kind == BaselineKind::fine_tune) {
    if (!source_net) throw ParameterError("run_baseline: fine_tune needs a source network");
    EmbeddingNetwork<float> source = detail::with_taps(*source_net, cfg);
    r.target = cfg.reinit_head ? clone_into_target(source, HeadReinit{target_classes, mix_seed(cfg.seed, 3)})
                               : clone_into_target(source);
  } else {
    NetworkSpec s = detail::apply_overrides(spec, cfg);
    s.layers.back().width = target_classes;
    r.target = EmbeddingNetwork<float>::build(s, mix_seed(cfg.seed, 5));
  }
  r.record.seed = cfg.seed;
  r.record.config_snapshot = describe(cfg);

  std::vector<Tensor<float>> params;
  for (auto& nt : r.target.parameters()) params.push_back(nt.tensor);
  Adam<float> opt(params, {cfg.lr, 0.9, 0.999, 1e-8, cfg.grad_clip});
  std::optional<BatchIterator> lab_batches;
  if (cfg.batch_labeled) lab_batches.emplace(d2.size(), cfg.batch_labeled, mix_seed(cfg.seed, 13));
  const auto all_d2 = iota_indices(d2.size());

  auto last_good = detail::snapshot(r.target);
  for (std::size_t step = 1; step <= cfg.adapt_steps; ++step) {
    const auto idx = lab_batches ? detail::next_batch(*lab_batches) : all_d2;
    auto out = r.target.forward(normalize_batch(d2, idx), Mode::train);
    auto loss = supervised_ce(out.logits, gather_labels(d2, idx));
    detail::check_finite(loss.item(), step, last_good);
    opt.zero_grad();
    backward(loss);
    opt.step();
    ++r.encoder_steps;
    StepLog log{step, {}, std::nullopt};
    log.losses.sup = log.losses.total = loss.item();
    detail::maybe_eval(log, r.target, cfg, eval_set, step, cfg.adapt_steps);
    r.record.steps.push_back(log);
    if (cfg.snapshot_every && step % cfg.snapshot_every == 0) last_good = detail::snapshot(r.target);
  }
  r.record.wall_seconds = detail::seconds_since(t0);
  return r;
}

/// Adversarial-only adaptation for a shared label space: the target encoder
/// starts from the source, the classifier head is copied and frozen, and
/// only alpha * encoder-side adversarial loss drives the encoder.
inline AdaptResult adapt_unsupervised(const EmbeddingNetwork<float>& source_net, const LabeledDataset& d1,
                                      const UnlabeledDataset& d3, const TrainConfig& cfg,
                                      const LabeledDataset* eval_set = nullptr) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  EmbeddingNetwork<float> source = detail::with_taps(source_net, cfg);
  AdaptResult r;
  r.target = clone_into_target(source);
  r.record.seed = cfg.seed;
  r.record.config_snapshot = describe(cfg);

  DiscriminatorSpec dspec{source.tap_widths(),
                          cfg.head_hidden.empty() ? default_head_hidden(source.spec()) : cfg.head_hidden,
                          cfg.gamma, cfg.fusion, Activation::relu, 0.2};
  r.discriminator = MultiLayerDiscriminator<float>::build(dspec, mix_seed(cfg.seed, 4));

  const AdamOptions adam{cfg.lr, 0.9, 0.999, 1e-8, cfg.grad_clip};
  Adam<float> opt_e(r.target.body_parameters(), adam);
  Adam<float> opt_d(r.discriminator.parameter_tensors(), adam);
  auto head = r.target.head_parameters();

  BatchIterator src_batches(d1.size(), cfg.batch_source, mix_seed(cfg.seed, 10));
  BatchIterator unl_batches(d3.size(), cfg.batch_unlabeled, mix_seed(cfg.seed, 11));

  auto last_good = detail::snapshot(r.target);
  for (std::size_t step = 1; step <= cfg.adapt_steps; ++step) {
    const auto src_idx = detail::next_batch(src_batches);
    const auto unl_idx = detail::next_batch(unl_batches);
    std::vector<Tensor<float>> src_taps;
    std::vector<Tensor<float>> tgt_taps_const;
    const Tensor<float> unl_x = normalize_batch(d3, unl_idx);
    {
      NoGradGuard no_grad;
      src_taps = source.forward(normalize_batch(d1, src_idx), Mode::eval).taps;
      tgt_taps_const = r.target.forward(unl_x, Mode::train).taps;
    }
    auto loss_d = domain_loss_D(r.discriminator.forward(src_taps), r.discriminator.forward(tgt_taps_const));
    detail::check_finite(loss_d.item(), step, last_good);
    opt_d.zero_grad();
    backward(loss_d);
    opt_d.step();
    ++r.discriminator_steps;

    auto unl_out = r.target.forward(unl_x, Mode::train);
    auto loss_e = domain_loss_E(r.discriminator.forward(src_taps), r.discriminator.forward(unl_out.taps));
    auto total = scale(loss_e, static_cast<float>(cfg.alpha));
    detail::check_finite(total.item(), step, last_good);
    opt_e.zero_grad();
    zero_grads(head);
    backward(total);
    opt_e.step();
    ++r.encoder_steps;

    StepLog log{step, {}, std::nullopt};
    log.losses.dt_d = loss_d.item();
    log.losses.dt_e = loss_e.item();
    log.losses.total = total.item();
    detail::maybe_eval(log, r.target, cfg, eval_set, step, cfg.adapt_steps);
    r.record.steps.push_back(log);
    if (cfg.snapshot_every && step % cfg.snapshot_every == 0) last_good = detail::snapshot(r.target);
  }
  r.record.wall_seconds = detail::seconds_since(t0);
  return r;
}

}  // namespace xfer
