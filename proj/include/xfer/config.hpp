#pragma once

// Flat key=value experiment configuration. Lines are "key = value"; '#'
// starts a comment. Unknown keys are rejected.

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "xfer/errors.hpp"
#include "xfer/layers.hpp"
#include "xfer/trainer.hpp"

namespace xfer {

struct Config {
  TrainConfig train;
  std::string name = "run";
  std::string out_dir = "runs";
  std::string arch = "svhn_mnist";  // svhn_mnist | lenet_uda
  std::string source_images, source_labels;
  std::string target_images, target_labels;
  std::string test_images, test_labels;
  std::string source_checkpoint;
  std::string checkpoint;  // model to evaluate
  std::vector<int> source_classes;
  std::vector<int> target_classes;
  std::size_t source_subsample = 10000;  // 0 keeps everything
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::vector<std::size_t> ks{2, 5};
  std::vector<std::string> methods{"target_only", "fine_tune", "fine_tune_adv", "full"};
};

/// Defaults for each subcommand; file values and flags are layered on top.
inline Config preset(const std::string& command) {
  Config c;
  c.name = command;
  if (command == "uda") {
    c.arch = "lenet_uda";
    c.train.reinit_head = false;
    c.train.pretrain_steps = 3000;
    c.train.adapt_steps = 2000;
  } else {
    c.source_classes = {0, 1, 2, 3, 4};
    c.target_classes = {5, 6, 7, 8, 9};
    c.train.pretrain_steps = 3000;
    c.train.adapt_steps = 1000;
  }
  return c;
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename U>
U parse_number(const std::string& key, const std::string& v) {
  std::istringstream in(v);
  U out{};
  in >> out;
  if (!in || !(in >> std::ws).eof()) throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
  if constexpr (std::is_unsigned_v<U>) {
    if (!v.empty() && v[0] == '-') throw ConfigError("config: '" + key + "' must be non-negative, got '" + v + "'");
  }
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config: '" + key + "' expects true/false, got '" + v + "'");
}

template <typename U>
std::vector<U> parse_list(const std::string& key, const std::string& v) {
  std::vector<U> out;
  for (const auto& item : split_list(v)) out.push_back(parse_number<U>(key, item));
  return out;
}

template <typename U>
std::string render_list(const std::vector<U>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    if constexpr (std::is_same_v<U, std::string>) {
      s += v[i];
    } else {
      s += std::to_string(v[i]);
    }
  }
  return s;
}

inline std::string render_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

struct Field {
  std::string key;
  std::function<void(Config&, const std::string&)> set;
  std::function<std::string(const Config&)> get;
};

#define XFER_STR(member)                                                                \
  Field {                                                                               \
    #member, [](Config& c, const std::string& v) { c.member = v; },                     \
        [](const Config& c) { return c.member; }                                        \
  }
#define XFER_NUM(key, member, type)                                                        \
  Field {                                                                                  \
    key, [](Config& c, const std::string& v) { c.member = parse_number<type>(key, v); },   \
        [](const Config& c) { return render_double(static_cast<double>(c.member)); }      \
  }
#define XFER_INT(key, member, type)                                                        \
  Field {                                                                                  \
    key, [](Config& c, const std::string& v) { c.member = parse_number<type>(key, v); },   \
        [](const Config& c) { return std::to_string(c.member); }                           \
  }
#define XFER_BOOL(key, member)                                                         \
  Field {                                                                              \
    key, [](Config& c, const std::string& v) { c.member = parse_bool(key, v); },       \
        [](const Config& c) { return std::string(c.member ? "true" : "false"); }       \
  }

inline const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      XFER_STR(name),
      XFER_STR(out_dir),
      Field{"arch",
            [](Config& c, const std::string& v) {
              if (v != "svhn_mnist" && v != "lenet_uda") throw ConfigError("config: unknown arch '" + v + "'");
              c.arch = v;
            },
            [](const Config& c) { return c.arch; }},
      XFER_STR(source_images),
      XFER_STR(source_labels),
      XFER_STR(target_images),
      XFER_STR(target_labels),
      XFER_STR(test_images),
      XFER_STR(test_labels),
      XFER_STR(source_checkpoint),
      XFER_STR(checkpoint),
      Field{"source_classes", [](Config& c, const std::string& v) { c.source_classes = parse_list<int>("source_classes", v); },
            [](const Config& c) { return render_list(c.source_classes); }},
      Field{"target_classes", [](Config& c, const std::string& v) { c.target_classes = parse_list<int>("target_classes", v); },
            [](const Config& c) { return render_list(c.target_classes); }},
      XFER_INT("source_subsample", source_subsample, std::size_t),
      Field{"seeds", [](Config& c, const std::string& v) { c.seeds = parse_list<std::uint64_t>("seeds", v); },
            [](const Config& c) { return render_list(c.seeds); }},
      Field{"ks", [](Config& c, const std::string& v) { c.ks = parse_list<std::size_t>("ks", v); },
            [](const Config& c) { return render_list(c.ks); }},
      Field{"methods",
            [](Config& c, const std::string& v) {
              c.methods = split_list(v);
              for (const auto& m : c.methods) {
                if (m != "target_only" && m != "fine_tune" && m != "fine_tune_adv" && m != "full") {
                  throw ConfigError("config: unknown method '" + m + "'");
                }
              }
            },
            [](const Config& c) { return render_list(c.methods); }},
      XFER_NUM("alpha", train.alpha, double),
      XFER_NUM("beta", train.beta, double),
      XFER_NUM("tau_st", train.tau_st, double),
      XFER_NUM("tau_tt", train.tau_tt, double),
      XFER_NUM("gamma", train.gamma, double),
      Field{"fusion",
            [](Config& c, const std::string& v) {
              if (v == "sum") c.train.fusion = Fusion::sum;
              else if (v == "concat") c.train.fusion = Fusion::concat;
              else throw ConfigError("config: fusion must be sum or concat, got '" + v + "'");
            },
            [](const Config& c) { return std::string(c.train.fusion == Fusion::sum ? "sum" : "concat"); }},
      Field{"taps", [](Config& c, const std::string& v) { c.train.taps = split_list(v); },
            [](const Config& c) { return render_list(c.train.taps); }},
      Field{"embedding", [](Config& c, const std::string& v) { c.train.embedding = v; },
            [](const Config& c) { return c.train.embedding; }},
      Field{"head_hidden",
            [](Config& c, const std::string& v) { c.train.head_hidden = parse_list<std::size_t>("head_hidden", v); },
            [](const Config& c) { return render_list(c.train.head_hidden); }},
      XFER_NUM("lr", train.lr, double),
      XFER_NUM("grad_clip", train.grad_clip, double),
      XFER_INT("batch_source", train.batch_source, std::size_t),
      XFER_INT("batch_unlabeled", train.batch_unlabeled, std::size_t),
      XFER_INT("batch_labeled", train.batch_labeled, std::size_t),
      XFER_INT("pretrain_steps", train.pretrain_steps, std::size_t),
      XFER_INT("adapt_steps", train.adapt_steps, std::size_t),
      XFER_INT("eval_every", train.eval_every, std::size_t),
      XFER_INT("source_protos_per_class", train.source_protos_per_class, std::size_t),
      XFER_INT("snapshot_every", train.snapshot_every, std::size_t),
      XFER_INT("seed", train.seed, std::uint64_t),
      XFER_BOOL("reinit_head", train.reinit_head),
      XFER_BOOL("stop_grad_prototypes", train.stop_grad_prototypes),
      XFER_BOOL("deterministic", train.deterministic),
      Field{"source_support",
            [](Config& c, const std::string& v) {
              if (v == "prototypes") c.train.source_support = TrainConfig::SourceSupport::prototypes;
              else if (v == "examples") c.train.source_support = TrainConfig::SourceSupport::examples;
              else throw ConfigError("config: source_support must be prototypes or examples, got '" + v + "'");
            },
            [](const Config& c) {
              return std::string(c.train.source_support == TrainConfig::SourceSupport::prototypes ? "prototypes"
                                                                                                  : "examples");
            }},
  };
  return table;
}

#undef XFER_STR
#undef XFER_NUM
#undef XFER_INT
#undef XFER_BOOL

}  // namespace detail

inline std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : detail::fields()) keys.push_back(f.key);
  return keys;
}

inline void set_value(Config& c, const std::string& key, const std::string& value) {
  for (const auto& f : detail::fields()) {
    if (f.key == key) {
      f.set(c, detail::trim(value));
      return;
    }
  }
  throw ConfigError("config: unknown key '" + key + "'");
}

/// Applies key=value text on top of `c`.
inline void apply_text(Config& c, const std::string& text, const std::string& origin = "<text>") {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
    }
    try {
      set_value(c, detail::trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

inline void apply_file(Config& c, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config file not found: '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  apply_text(c, ss.str(), path);
}

/// Fully resolved configuration, one key per line in table order.
inline std::string render(const Config& c) {
  std::string out;
  for (const auto& f : detail::fields()) out += f.key + " = " + f.get(c) + "\n";
  return out;
}

inline NetworkSpec network_spec(const Config& c, std::size_t classes) {
  if (c.arch == "lenet_uda") return lenet_uda_spec(classes);
  return svhn_mnist_spec(classes, c.source_classes == c.target_classes);
}

}  // namespace xfer
