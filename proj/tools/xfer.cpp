// Command-line driver: pretrain, transfer, uda, gradcheck, eval.
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "xfer/xfer.hpp"

namespace fs = std::filesystem;
using namespace xfer;

namespace {

struct ConfigOptions {
  std::string file;
  std::map<std::string, std::string> overrides;
};

void add_config_options(CLI::App* sub, ConfigOptions& opts) {
  sub->add_option("--config", opts.file, "key=value config file");
  for (const auto& key : config_keys()) sub->add_option("--" + key, opts.overrides[key], "override '" + key + "'");
}

Config resolve(const std::string& command, CLI::App* sub, const ConfigOptions& opts) {
  Config c = preset(command);
  if (!opts.file.empty()) apply_file(c, opts.file);
  for (const auto& [key, value] : opts.overrides)
    if (sub->count("--" + key)) set_value(c, key, value);
  c.train.validate();
  return c;
}

fs::path run_root(const Config& c) { return fs::path(c.out_dir) / c.name; }

int cmd_pretrain(const Config& c) {
  const NetworkSpec spec = network_spec(c, c.source_classes.empty() ? 10 : c.source_classes.size());
  LabeledDataset source = prepare(load_labeled("source", c.source_images, c.source_labels), c.source_classes, spec);
  if (c.source_subsample && source.size() > c.source_subsample) {
    source = subsample(source, c.source_subsample, mix_seed(c.train.seed, 0xD1));
  }
  std::cout << "pretrain: " << source.size() << " source images, " << c.train.pretrain_steps << " steps\n";
  const RunDir dir(run_root(c));
  try {
    auto m = pretrain_source(source, spec, c.train);
    dir.write_run(render(c), m.record, make_checkpoint(m.net, render(c), c.train.pretrain_steps), "source.ckpt");
    std::printf("source train accuracy %.4f (%.1fs)\nwrote %s\n", m.train_accuracy, m.record.wall_seconds,
                (dir.path / "source.ckpt").string().c_str());
  } catch (const TrainingDiverged& e) {
    Checkpoint ck{kCheckpointVersion, e.last_good(), render(c), e.step()};
    save_checkpoint((dir.path / "last_good.ckpt").string(), ck);
    throw;
  }
  return 0;
}

int cmd_transfer(const Config& c) {
  require_file("source_checkpoint", c.source_checkpoint);
  const Checkpoint ck = load_checkpoint(c.source_checkpoint);
  const EmbeddingNetwork<float> source = network_from_checkpoint(c, ck);
  const NetworkSpec spec = network_spec(c, c.target_classes.empty() ? source.num_classes() : c.target_classes.size());
  const TransferData data = load_transfer_data(c, spec);
  const RunDir root(run_root(c));
  root.write_text("config.txt", render(c));

  std::vector<RunOutcome> outcomes;
  for (std::size_t k : c.ks) {
    for (std::uint64_t seed : c.seeds) {
      for (const auto& method : c.methods) {
        TrainConfig tc = c.train;
        tc.seed = seed;
        Config echo = c;
        echo.train = tc;
        auto o = run_transfer_method(method, source, spec, data, k, tc);
        RunDir(root.path / (method + "_k" + std::to_string(k) + "_s" + std::to_string(seed)))
            .write_run(render(echo), o.record, make_checkpoint(*o.model, render(echo), tc.adapt_steps), "target.ckpt");
        std::printf("%-14s k=%zu seed=%llu accuracy %.4f (%.1fs)\n", method.c_str(), k,
                    static_cast<unsigned long long>(seed), o.accuracy, o.record.wall_seconds);
        o.model.reset();
        outcomes.push_back(std::move(o));
      }
    }
  }
  root.write_text("results.csv", results_csv(outcomes));
  const std::string agg = aggregate_csv(aggregate_outcomes(outcomes));
  root.write_text("aggregate.csv", agg);
  std::cout << agg;
  return 0;
}

int cmd_uda(const Config& c) {
  const NetworkSpec spec = network_spec(c, c.source_classes.empty() ? 10 : c.source_classes.size());
  const LabeledDataset source = prepare(load_labeled("source", c.source_images, c.source_labels), c.source_classes, spec);
  const LabeledDataset target = prepare(load_labeled("target", c.target_images, c.target_labels), c.target_classes, spec);
  const LabeledDataset test = prepare(load_labeled("test", c.test_images, c.test_labels), c.target_classes, spec);
  const RunDir root(run_root(c));
  root.write_text("config.txt", render(c));
  std::vector<UdaOutcome> rows;
  for (std::uint64_t seed : c.seeds) {
    rows.push_back(run_uda_seed(source, target, test, c, seed, &root));
    std::printf("seed=%llu source_only %.4f adapted %.4f\n", static_cast<unsigned long long>(seed),
                rows.back().source_only, rows.back().adapted);
  }
  const std::string table = uda_csv(rows);
  root.write_text("uda.csv", table);
  std::cout << table;
  return 0;
}

int cmd_eval(const Config& c) {
  require_file("checkpoint", c.checkpoint);
  const Checkpoint ck = load_checkpoint(c.checkpoint);
  auto net = network_from_checkpoint(c, ck);
  const LabeledDataset test = prepare(load_labeled("test", c.test_images, c.test_labels), c.target_classes, net.spec());
  const EvalResult r = evaluate(net, test);
  std::printf("accuracy %.4f on %zu examples\n", r.accuracy, r.n_examples);
  for (std::size_t k = 0; k < r.per_class.size(); ++k)
    std::printf("  class %zu: %.4f (%zu)\n", k, r.per_class[k], r.class_counts[k]);
  return 0;
}

int cmd_gradcheck(const GradSuiteOptions& opt) {
  const GradSuiteReport report = run_gradcheck_suite(opt);
  std::printf("%-24s %12s %9s %8s %s\n", "op", "max_rel_err", "checked", "kinks", "status");
  for (const auto& c : report.cases) {
    std::printf("%-24s %12.3e %9zu %8zu %s\n", c.name.c_str(), c.max_rel_error, c.checked, c.excluded,
                c.passed ? "ok" : "FAIL");
  }
  std::printf("%zu ops, %zu instances each, tolerance %.0e, %.1fs: %s\n", report.cases.size(), opt.instances,
              opt.tolerance, report.seconds, report.passed() ? "PASS" : "FAIL");
  return report.passed() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Domain-adversarial and semantic transfer training"};
  app.require_subcommand(1);

  std::map<std::string, ConfigOptions> opts;
  std::map<std::string, CLI::App*> subs;
  const std::pair<const char*, const char*> commands[] = {
      {"pretrain", "train the source network"},
      {"transfer", "few-shot transfer: baselines and the full model over seeds and k"},
      {"uda", "unsupervised adaptation vs source-only"},
      {"eval", "evaluate a checkpoint"}};
  for (const auto& [name, help] : commands) {
    subs[name] = app.add_subcommand(name, help);
    add_config_options(subs[name], opts[name]);
  }
  GradSuiteOptions gopt;
  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every op and loss");
  grad->add_option("--instances", gopt.instances, "random instances per op")->check(CLI::PositiveNumber);
  grad->add_option("--tolerance", gopt.tolerance, "max relative error");
  grad->add_option("--seed", gopt.seed, "instance seed");
  grad->add_flag("--inject-fault", gopt.inject_fault, "register an op with a broken backward rule");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (grad->parsed()) return cmd_gradcheck(gopt);
    for (const auto& [name, sub] : subs) {
      if (!sub->parsed()) continue;
      const Config c = resolve(name, sub, opts[name]);
      if (name == "pretrain") return cmd_pretrain(c);
      if (name == "transfer") return cmd_transfer(c);
      if (name == "uda") return cmd_uda(c);
      if (name == "eval") return cmd_eval(c);
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
