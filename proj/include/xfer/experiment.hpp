#pragma once

// Experiment orchestration shared by the command-line tool and the
// acceptance checks: dataset preparation, method dispatch, run directories
// and result tables.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "xfer/checkpoint.hpp"
#include "xfer/config.hpp"
#include "xfer/data.hpp"
#include "xfer/metrics.hpp"
#include "xfer/trainer.hpp"

namespace xfer {

/// Raised when a configured input file does not exist.
class DataPathError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

inline void require_file(const std::string& key, const std::string& path) {
  if (path.empty()) throw DataPathError("data path '" + key + "' is not set");
  if (!std::filesystem::is_regular_file(path)) throw DataPathError("data file not found: '" + path + "' (" + key + ")");
}

inline LabeledDataset load_labeled(const std::string& key, const std::string& images, const std::string& labels) {
  require_file(key + "_images", images);
  require_file(key + "_labels", labels);
  auto ds = load_idx_labeled(images, labels);
  ds.name = key;
  return ds;
}

/// Keeps `classes` (remapped to 0..n-1 in ascending order) when non-empty
/// and resamples to the network input geometry.
inline LabeledDataset prepare(LabeledDataset ds, const std::vector<int>& classes, const NetworkSpec& spec) {
  if (!classes.empty()) ds = filter_classes(ds, classes);
  return resized(ds, spec.input[1], spec.input[2]);
}

struct TransferData {
  LabeledDataset source;  // D1
  LabeledDataset pool;    // target training pool, split into D2/D3
  LabeledDataset test;
};

inline TransferData load_transfer_data(const Config& c, const NetworkSpec& spec) {
  TransferData d;
  d.source = prepare(load_labeled("source", c.source_images, c.source_labels), c.source_classes, spec);
  if (c.source_subsample && d.source.size() > c.source_subsample) {
    d.source = subsample(d.source, c.source_subsample, mix_seed(c.train.seed, 0xD1));
  }
  d.pool = prepare(load_labeled("target", c.target_images, c.target_labels), c.target_classes, spec);
  d.test = prepare(load_labeled("test", c.test_images, c.test_labels), c.target_classes, spec);
  return d;
}

/// Builds the architecture named in `c` with the class count read from a
/// checkpoint's final head layer, then loads the state.
inline EmbeddingNetwork<float> network_from_checkpoint(const Config& c, const Checkpoint& ck) {
  NetworkSpec spec = network_spec(c, 1);
  const std::string head = spec.layers.back().name + ".weight";
  const Tensor<float>* w = ck.find(head);
  if (!w || w->rank() != 2) throw FormatError("checkpoint has no '" + head + "' tensor for arch " + c.arch);
  spec.layers.back().width = w->dim(1);
  auto net = EmbeddingNetwork<float>::build(spec, 0);
  net.load_state(ck.tensors);
  return net;
}

/// Run directory writer: config echo, metrics, checkpoint, seeds manifest.
struct RunDir {
  std::filesystem::path path;

  explicit RunDir(std::filesystem::path p) : path(std::move(p)) { std::filesystem::create_directories(path); }

  void write_text(const std::string& file, const std::string& text) const {
    std::ofstream out(path / file, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + (path / file).string() + "'");
    out << text;
  }

  void write_run(const std::string& resolved_config, const TrainRecord& record, const Checkpoint& ck,
                 const std::string& ckpt_name) const {
    write_text("config.txt", resolved_config);
    record.write_csv((path / "metrics.csv").string());
    save_checkpoint((path / ckpt_name).string(), ck);
    write_text("seeds.txt", seeds_manifest(record.seed));
  }

  static std::string seeds_manifest(std::uint64_t seed) {
    std::string s = "seed = " + std::to_string(seed) + "\n";
    const std::pair<const char*, std::uint64_t> streams[] = {
        {"batches.source", 10}, {"batches.unlabeled", 11}, {"batches.labeled", 13}, {"init.network", 2},
        {"init.head", 3},       {"init.discriminator", 4}, {"init.scratch", 5},     {"prototypes.sample", 12}};
    for (const auto& [name, tag] : streams) s += std::string(name) + " = " + std::to_string(mix_seed(seed, tag)) + "\n";
    return s;
  }
};

struct RunOutcome {
  std::string method;
  std::size_t k = 0;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  TrainRecord record;
  std::optional<EmbeddingNetwork<float>> model;
};

/// One (method, k, seed) cell of the transfer table.
inline RunOutcome run_transfer_method(const std::string& method, const EmbeddingNetwork<float>& source,
                                      const NetworkSpec& spec, const TransferData& data, std::size_t k,
                                      TrainConfig cfg) {
  const SplitBundle splits = make_splits(data.pool, k, cfg.seed);
  AdaptResult r;
  if (method == "target_only") {
    r = run_baseline(BaselineKind::target_only, nullptr, spec, splits.d2, cfg);
  } else if (method == "fine_tune") {
    r = run_baseline(BaselineKind::fine_tune, &source, spec, splits.d2, cfg);
  } else if (method == "fine_tune_adv") {
    cfg.beta = 0.0;
    r = adapt_joint(source, data.source, splits.d2, splits.d3, cfg);
  } else if (method == "full") {
    r = adapt_joint(source, data.source, splits.d2, splits.d3, cfg);
  } else {
    throw ConfigError("unknown method '" + method + "'");
  }
  RunOutcome out{method, k, cfg.seed, evaluate(r.target, data.test).accuracy, std::move(r.record), std::nullopt};
  out.model = std::move(r.target);
  return out;
}

struct AggregateRow {
  std::string method;
  std::size_t k = 0;
  double mean = 0.0;
  std::optional<double> std_error;  // needs >= 2 seeds
  std::size_t n_seeds = 0;
};

/// Mean (and standard error when defined) per (method, k), in first-seen order.
inline std::vector<AggregateRow> aggregate_outcomes(const std::vector<RunOutcome>& outcomes) {
  std::vector<std::pair<std::string, std::size_t>> order;
  std::map<std::pair<std::string, std::size_t>, std::vector<double>> acc;
  for (const auto& o : outcomes) {
    auto key = std::make_pair(o.method, o.k);
    if (!acc.count(key)) order.push_back(key);
    acc[key].push_back(o.accuracy);
  }
  std::vector<AggregateRow> rows;
  for (const auto& key : order) {
    const auto& v = acc[key];
    AggregateRow row{key.first, key.second, 0.0, std::nullopt, v.size()};
    if (v.size() >= 2) {
      const Aggregate a = aggregate(v);
      row.mean = a.mean;
      row.std_error = a.std_error;
    } else {
      row.mean = v.front();
    }
    rows.push_back(row);
  }
  return rows;
}

inline std::string aggregate_csv(const std::vector<AggregateRow>& rows) {
  std::string s = "method,k,mean,std_error,n_seeds\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.6f", r.mean);
    std::string line = r.method + "," + std::to_string(r.k) + "," + buf + ",";
    if (r.std_error) {
      std::snprintf(buf, sizeof buf, "%.6f", *r.std_error);
      line += buf;
    }
    s += line + "," + std::to_string(r.n_seeds) + "\n";
  }
  return s;
}

inline std::string results_csv(const std::vector<RunOutcome>& outcomes) {
  std::string s = "method,k,seed,accuracy\n";
  char buf[64];
  for (const auto& o : outcomes) {
    std::snprintf(buf, sizeof buf, "%.6f", o.accuracy);
    s += o.method + "," + std::to_string(o.k) + "," + std::to_string(o.seed) + "," + buf + "\n";
  }
  return s;
}

struct UdaOutcome {
  std::uint64_t seed = 0;
  double source_only = 0.0;
  double adapted = 0.0;
};

/// Unsupervised adaptation for one seed: the source set is subsampled with
/// the seed, a source network is pretrained on it and evaluated on the
/// target test set, then adapted on unlabeled target images.
inline UdaOutcome run_uda_seed(const LabeledDataset& source_full, const LabeledDataset& target_train,
                               const LabeledDataset& target_test, const Config& c, std::uint64_t seed,
                               const RunDir* dir = nullptr) {
  TrainConfig cfg = c.train;
  cfg.seed = seed;
  const LabeledDataset source = c.source_subsample && source_full.size() > c.source_subsample
                                    ? subsample(source_full, c.source_subsample, mix_seed(seed, 0xD1))
                                    : source_full;
  const NetworkSpec spec = network_spec(c, source.classes.empty() ? 10 : source.classes.size());
  auto src = pretrain_source(source, spec, cfg);
  UdaOutcome out{seed, evaluate(src.net, target_test).accuracy, 0.0};
  auto adapted = adapt_unsupervised(src.net, source, drop_labels(target_train), cfg);
  out.adapted = evaluate(adapted.target, target_test).accuracy;
  if (dir) {
    Config echo = c;
    echo.train = cfg;
    RunDir(dir->path / ("source_s" + std::to_string(seed)))
        .write_run(render(echo), src.record, make_checkpoint(src.net, render(echo), cfg.pretrain_steps), "source.ckpt");
    RunDir(dir->path / ("adapted_s" + std::to_string(seed)))
        .write_run(render(echo), adapted.record, make_checkpoint(adapted.target, render(echo), cfg.adapt_steps),
                   "target.ckpt");
  }
  return out;
}

inline std::string uda_csv(const std::vector<UdaOutcome>& rows) {
  std::string s = "seed,source_only,adapted\n";
  char buf[96];
  std::vector<double> so, ad;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.6f,%.6f", r.source_only, r.adapted);
    s += std::to_string(r.seed) + "," + buf + "\n";
    so.push_back(r.source_only);
    ad.push_back(r.adapted);
  }
  if (rows.size() >= 2) {
    const auto a = aggregate(so), b = aggregate(ad);
    std::snprintf(buf, sizeof buf, "%.6f,%.6f", a.mean, b.mean);
    s += std::string("mean,") + buf + "\n";
    std::snprintf(buf, sizeof buf, "%.6f,%.6f", a.std_error, b.std_error);
    s += std::string("std_error,") + buf + "\n";
  }
  return s;
}

}  // namespace xfer
