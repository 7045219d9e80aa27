// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Real-data criteria read IDX files below $XFER_DATA_DIR (default ./data):
//   mnist/{train,t10k}-{images-idx3,labels-idx1}-ubyte
//   svhn/train-{images-idx3,labels-idx1}-ubyte   (see tools/svhn_to_idx.py)

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <functional>
#include <numbers>
#include <string>

#include "xfer/xfer.hpp"

using namespace xfer;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances and budgets.
constexpr double kGradTol = 1e-4;
constexpr std::size_t kGradInstances = 10;
constexpr double kGradBudgetSeconds = 120.0;
constexpr double kLn2Tol = 1e-9;
constexpr double kCeTol = 1e-7;
constexpr double kEntropyTol = 1e-9;
constexpr double kMonotoneSlack = 1e-12;
constexpr double kOracleTol = 1e-5;
constexpr double kUnrollTol = 1e-6;
constexpr double kUdaMargin = 0.08;
constexpr double kUdaBudgetSeconds = 60 * 60;
constexpr double kTransferMarginK2 = 0.10;
constexpr double kTransferMarginK5 = 0.05;
constexpr double kAdvOnlyBand = 0.02;
constexpr double kTransferBudgetSeconds = 2 * 60 * 60;
constexpr std::size_t kMaxSteps = 5000;
constexpr std::size_t kSourceImages = 10000;

int failures = 0;

void report(int id, bool pass, const std::string& detail) {
  std::printf("criterion %d: %s  %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Runs a criterion body; any exception is a FAIL carrying its message.
void guarded(int id, const std::function<void()>& body) {
  try {
    body();
  } catch (const std::exception& e) {
    report(id, false, std::string("error: ") + e.what());
  }
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

Tensor<double> random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor<double>::from(std::move(s), std::move(v));
}

// ---- data -----------------------------------------------------------------

fs::path data_dir() {
  const char* env = std::getenv("XFER_DATA_DIR");
  return env && *env ? fs::path(env) : fs::path("data");
}

struct IdxPair {
  fs::path images, labels;
  bool present() const { return fs::exists(images) && fs::exists(labels); }
};

IdxPair mnist_train() { return {data_dir() / "mnist/train-images-idx3-ubyte", data_dir() / "mnist/train-labels-idx1-ubyte"}; }
IdxPair mnist_test() { return {data_dir() / "mnist/t10k-images-idx3-ubyte", data_dir() / "mnist/t10k-labels-idx1-ubyte"}; }
IdxPair svhn_train() { return {data_dir() / "svhn/train-images-idx3-ubyte", data_dir() / "svhn/train-labels-idx1-ubyte"}; }

std::string missing(std::initializer_list<IdxPair> pairs) {
  std::string out;
  for (const auto& p : pairs)
    for (const auto& f : {p.images, p.labels})
      if (!fs::exists(f)) out += (out.empty() ? "" : ", ") + f.string();
  return out;
}

LabeledDataset load(const IdxPair& p) { return load_idx_labeled(p.images.string(), p.labels.string()); }

// ---- synthetic fixture shared by criteria 8 and 9 -------------------------

NetworkSpec small_spec(std::size_t classes) {
  NetworkSpec s;
  s.name = "small";
  s.input = {1, 16, 16};
  s.layers = {LayerSpec::conv("conv1", 8, 3, 1, 1), LayerSpec::batchnorm("bn1"), LayerSpec::relu("relu1"),
              LayerSpec::maxpool("pool1"),           LayerSpec::conv("conv2", 8, 3, 1, 1), LayerSpec::batchnorm("bn2"),
              LayerSpec::relu("relu2"),              LayerSpec::maxpool("pool2"),
              LayerSpec::flatten("flat"),            LayerSpec::linear("fc1", 16),
              LayerSpec::relu("fc1.relu"),           LayerSpec::linear("fc2", classes, true)};
  s.taps = {"flat", "fc1.relu"};
  s.embedding = "fc1.relu";
  return s;
}

TrainConfig small_config() {
  TrainConfig c;
  c.batch_source = 32;
  c.batch_unlabeled = 32;
  c.pretrain_steps = 100;
  c.adapt_steps = 40;
  c.head_hidden = {32, 32};
  c.source_protos_per_class = 50;
  c.lr = 3e-3;
  c.seed = 7;
  return c;
}

struct Synth {
  LabeledDataset source, pool, test;
  SplitBundle splits;
};

Synth synth() {
  Synth s;
  s.source = filter_classes(synth_digits(60, {0, 1, 2, 3, 4}, 16, 1), {0, 1, 2, 3, 4});
  s.pool = filter_classes(perturb_domain(synth_digits(30, {5, 6, 7, 8, 9}, 16, 2)), {5, 6, 7, 8, 9});
  s.test = filter_classes(perturb_domain(synth_digits(20, {5, 6, 7, 8, 9}, 16, 3)), {5, 6, 7, 8, 9});
  s.splits = make_splits(s.pool, 2, 3);
  return s;
}

bool same_bits(const std::vector<NamedTensor<float>>& a, const std::vector<NamedTensor<float>>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto da = a[i].tensor.data(), db = b[i].tensor.data();
    if (a[i].name != b[i].name || da.size() != db.size() ||
        std::memcmp(da.data(), db.data(), da.size() * sizeof(float)) != 0)
      return false;
  }
  return true;
}

// ---- criteria -------------------------------------------------------------

void gradient_suite() {
  GradSuiteOptions opt;
  opt.instances = kGradInstances;
  opt.tolerance = kGradTol;
  const auto r = run_gradcheck_suite(opt);
  double worst = 0.0;
  std::string failed;
  for (const auto& c : r.cases) {
    worst = std::max(worst, c.max_rel_error);
    if (!c.passed) failed += " " + c.name;
  }
  const bool pass = r.passed() && r.seconds <= kGradBudgetSeconds;
  report(1, pass,
         fmt("%zu cases x %zu instances, worst rel err %.2e (tol %.0e), %.1fs (budget %.0fs)%s", r.cases.size(),
             kGradInstances, worst, kGradTol, r.seconds, kGradBudgetSeconds,
             failed.empty() ? "" : (" failing:" + failed).c_str()));
}

void loss_identities() {
  const double ln2x2 = 2.0 * std::numbers::ln2;
  auto zeros = Tensor<double>::zeros({6});
  const double d = domain_loss_D(zeros, zeros)[0];
  const double e = domain_loss_E(zeros, zeros)[0];
  const double ce = supervised_ce(Tensor<double>::zeros({4, 5}), {0, 1, 2, 4})[0];
  double ent_err = 0.0;
  for (std::size_t K : {2u, 5u, 10u}) {
    auto p = Tensor<double>::from({1, K}, std::vector<double>(K, 1.0 / static_cast<double>(K)));
    ent_err = std::max(ent_err, std::abs(entropy(p)[0] - std::log(static_cast<double>(K))));
  }
  Rng rng(91);
  double metric_err = 0.0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t C = 2 + rng.index(5), D = 2 + rng.index(8), N = C + rng.index(6);
    std::vector<int> labels(N);
    for (std::size_t j = 0; j < N; ++j) labels[j] = static_cast<int>(j < C ? j : rng.index(C));
    auto support = random_tensor({N, D}, rng);
    auto queries = random_tensor({N, D}, rng);
    auto protos = compute_prototypes(support, labels, C);
    const double a = metric_ce(queries, labels, protos, 1.0)[0];
    const double b = supervised_ce(similarity(queries, protos.centroids), labels)[0];
    metric_err = std::max(metric_err, std::abs(a - b));
  }
  const double d_err = std::abs(d - ln2x2), e_err = std::abs(e - ln2x2), ce_err = std::abs(ce - std::log(5.0));
  const bool pass = d_err <= kLn2Tol && e_err <= kLn2Tol && ce_err <= kCeTol && ent_err <= kEntropyTol &&
                    metric_err <= kCeTol;
  report(2, pass,
         fmt("|D-2ln2| %.1e |E-2ln2| %.1e |ce-ln5| %.1e |H-lnK| %.1e |metric-ce| %.1e", d_err, e_err, ce_err, ent_err,
             metric_err));
}

void temperature_property() {
  const std::vector<double> taus = {0.25, 0.5, 1.0, 2.0, 4.0, 8.0};
  Rng rng(92);
  std::size_t violations = 0;
  std::vector<double> h_sharp, h_flat;
  for (int i = 0; i < 100; ++i) {
    const std::size_t K = 5;
    Tensor<double> v;
    do {
      v = random_tensor({1, K}, rng, -3.0, 3.0);
    } while (*std::ranges::max_element(v.data()) == *std::ranges::min_element(v.data()));
    double prev = -1.0;
    for (double tau : taus) {
      const double h = entropy(softmax(v, tau))[0];
      if (h < prev - kMonotoneSlack) ++violations;
      prev = h;
      if (tau == 0.25) h_sharp.push_back(h);
      if (tau == 4.0) h_flat.push_back(h);
    }
  }
  auto variance = [](const std::vector<double>& x) {
    double m = 0, s = 0;
    for (double v : x) m += v;
    m /= static_cast<double>(x.size());
    for (double v : x) s += (v - m) * (v - m);
    return s / static_cast<double>(x.size() - 1);
  };
  const double vs = variance(h_sharp), vf = variance(h_flat);
  report(3, violations == 0 && vs > vf,
         fmt("monotonicity violations %zu/100, entropy variance tau=0.25 %.4e vs tau=4 %.4e", violations, vs, vf));
}

double naive_conv_err(Rng& rng) {
  // Output extent first, so every drawn geometry is valid.
  const std::size_t N = 1 + rng.index(3), C = 1 + rng.index(3), F = 1 + rng.index(4);
  const std::size_t K = 1 + rng.index(3), stride = 1 + rng.index(2), pad = rng.index(K / 2 + 1);
  const std::size_t H = (1 + rng.index(6)) * stride + K - 2 * pad;
  const std::size_t W = (1 + rng.index(6)) * stride + K - 2 * pad;
  auto x = random_tensor({N, C, H, W}, rng);
  auto w = random_tensor({F, C, K, K}, rng);
  auto b = random_tensor({F}, rng);
  auto y = conv2d(x, w, b, stride, pad);
  const std::size_t OH = (H + 2 * pad - K) / stride + 1, OW = (W + 2 * pad - K) / stride + 1;
  double err = 0.0;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t oy = 0; oy < OH; ++oy)
        for (std::size_t ox = 0; ox < OW; ++ox) {
          double acc = b[f];
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t ky = 0; ky < K; ++ky)
              for (std::size_t kx = 0; kx < K; ++kx) {
                const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(H) || ix >= static_cast<long>(W)) continue;
                acc += x[((n * C + c) * H + static_cast<std::size_t>(iy)) * W + static_cast<std::size_t>(ix)] *
                       w[((f * C + c) * K + ky) * K + kx];
              }
          err = std::max(err, rel_err(y[((n * F + f) * OH + oy) * OW + ox], acc));
        }
  return err;
}

double naive_pool_err(Rng& rng) {
  const std::size_t N = 1 + rng.index(3), C = 1 + rng.index(3), H = 2 * (1 + rng.index(5)), W = 2 * (1 + rng.index(5));
  auto x = random_tensor({N, C, H, W}, rng);
  auto y = maxpool2d(x, 2, 2);
  double err = 0.0;
  for (std::size_t nc = 0; nc < N * C; ++nc)
    for (std::size_t oy = 0; oy < H / 2; ++oy)
      for (std::size_t ox = 0; ox < W / 2; ++ox) {
        double m = -1e300;
        for (std::size_t ky = 0; ky < 2; ++ky)
          for (std::size_t kx = 0; kx < 2; ++kx) m = std::max(m, x[(nc * H + 2 * oy + ky) * W + 2 * ox + kx]);
        err = std::max(err, rel_err(y[(nc * (H / 2) + oy) * (W / 2) + ox], m));
      }
  return err;
}

double naive_matmul_err(Rng& rng) {
  const std::size_t M = 1 + rng.index(20), K = 1 + rng.index(20), N = 1 + rng.index(20);
  auto a = random_tensor({M, K}, rng);
  auto b = random_tensor({K, N}, rng);
  auto c = matmul(a, b);
  double err = 0.0;
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t j = 0; j < N; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < K; ++k) acc += a[i * K + k] * b[k * N + j];
      err = std::max(err, rel_err(c[i * N + j], acc));
    }
  return err;
}

std::vector<double> dense(const std::vector<double>& x, const LinearLayer<double>& l) {
  std::vector<double> y(l.out());
  for (std::size_t j = 0; j < l.out(); ++j) {
    double acc = l.bias[j];
    for (std::size_t i = 0; i < l.in(); ++i) acc += x[i] * l.weight[i * l.out() + j];
    y[j] = acc;
  }
  return y;
}

double unrolled_discriminator_err(Fusion fusion) {
  DiscriminatorSpec spec;
  spec.tap_widths = {64, 64, 5};
  spec.head_hidden = {500, 500, 500};
  spec.gamma = 0.1;
  spec.fusion = fusion;
  auto d = MultiLayerDiscriminator<double>::build(spec, 21);
  Rng rng(22);
  for (auto& p : d.parameters())
    if (p.name.ends_with(".bias"))
      for (auto& v : p.tensor.data()) v = rng.uniform(-0.3, 0.3);
  const std::size_t n = 4;
  std::vector<Tensor<double>> taps;
  for (auto w : spec.tap_widths) taps.push_back(random_tensor({n, w}, rng));
  auto out = d.forward(taps);
  auto relu = [](std::vector<double> v) {
    for (auto& x : v) x = std::max(x, 0.0);
    return v;
  };
  double err = 0.0;
  for (std::size_t row = 0; row < n; ++row) {
    auto tap = [&](std::size_t l) {
      const std::size_t w = taps[l].dim(1);
      return std::vector<double>(taps[l].data().begin() + row * w, taps[l].data().begin() + (row + 1) * w);
    };
    auto h = relu(tap(0));
    for (std::size_t l = 1; l < taps.size(); ++l) {
      auto s = dense(h, d.stages()[l - 1]);
      auto t = tap(l);
      std::vector<double> f;
      if (fusion == Fusion::sum) {
        for (std::size_t i = 0; i < t.size(); ++i) f.push_back(spec.gamma * s[i] + t[i]);
      } else {
        for (double v : s) f.push_back(spec.gamma * v);
        f.insert(f.end(), t.begin(), t.end());
      }
      h = relu(f);
    }
    for (std::size_t i = 0; i < d.head().size(); ++i) {
      h = dense(h, d.head()[i]);
      if (i + 1 < d.head().size()) h = relu(h);
    }
    err = std::max(err, std::abs(out[row] - h[0]));
  }
  return err;
}

void oracle_equivalence() {
  Rng rng(93);
  double conv = 0, pool = 0, mm = 0;
  for (int i = 0; i < 20; ++i) {
    conv = std::max(conv, naive_conv_err(rng));
    pool = std::max(pool, naive_pool_err(rng));
    mm = std::max(mm, naive_matmul_err(rng));
  }
  const double disc = std::max(unrolled_discriminator_err(Fusion::sum), unrolled_discriminator_err(Fusion::concat));
  const bool pass = conv <= kOracleTol && pool <= kOracleTol && mm <= kOracleTol && disc <= kUnrollTol;
  report(4, pass, fmt("20 shapes each: conv %.1e pool %.1e matmul %.1e; discriminator unroll %.1e", conv, pool, mm,
                      disc));
}

void uda_ordering() {
  if (auto m = missing({svhn_train(), mnist_train(), mnist_test()}); !m.empty()) {
    report(5, false, "dataset not found: " + m);
    return;
  }
  const auto t0 = std::chrono::steady_clock::now();
  Config c = preset("uda");
  c.source_subsample = kSourceImages;
  c.seeds = {0, 1, 2};
  c.train.adapt_steps = std::min(c.train.adapt_steps, kMaxSteps);
  const NetworkSpec spec = network_spec(c, 10);
  const auto source = prepare(load(svhn_train()), {}, spec);
  const auto target = prepare(load(mnist_train()), {}, spec);
  const auto test = prepare(load(mnist_test()), {}, spec);
  std::vector<double> so, ad;
  for (auto seed : c.seeds) {
    const auto r = run_uda_seed(source, target, test, c, seed);
    so.push_back(r.source_only);
    ad.push_back(r.adapted);
    std::printf("  uda seed %llu: source_only %.4f adapted %.4f\n", static_cast<unsigned long long>(seed),
                r.source_only, r.adapted);
  }
  const double s = aggregate(so).mean, a = aggregate(ad).mean, secs = seconds_since(t0);
  report(5, a - s >= kUdaMargin && secs <= kUdaBudgetSeconds,
         fmt("adapted %.4f vs source-only %.4f (gain %+.1f pts, need %.0f), %.0fs (budget %.0fs)", a, s,
             100 * (a - s), 100 * kUdaMargin, secs, kUdaBudgetSeconds));
}

void transfer_ordering() {
  if (auto m = missing({svhn_train(), mnist_train(), mnist_test()}); !m.empty()) {
    report(6, false, "dataset not found: " + m);
    return;
  }
  const auto t0 = std::chrono::steady_clock::now();
  Config c = preset("transfer");
  c.source_subsample = kSourceImages;
  c.train.adapt_steps = std::min(c.train.adapt_steps, kMaxSteps);
  const NetworkSpec spec = network_spec(c, 5);
  TransferData data;
  data.source = subsample(prepare(load(svhn_train()), c.source_classes, spec), kSourceImages, mix_seed(0, 0xD1));
  data.pool = prepare(load(mnist_train()), c.target_classes, spec);
  data.test = prepare(load(mnist_test()), c.target_classes, spec);
  const auto source = pretrain_source(data.source, spec, c.train);
  std::map<std::pair<std::string, std::size_t>, std::vector<double>> acc;
  for (std::size_t k : {2u, 5u})
    for (std::uint64_t seed : {0u, 1u, 2u})
      for (const std::string method : {"fine_tune", "fine_tune_adv", "full"}) {
        TrainConfig tc = c.train;
        tc.seed = seed;
        const auto o = run_transfer_method(method, source.net, spec, data, k, tc);
        acc[{method, k}].push_back(o.accuracy);
        std::printf("  transfer %s k=%zu seed=%llu: %.4f\n", method.c_str(), k, static_cast<unsigned long long>(seed),
                    o.accuracy);
      }
  auto mean = [&](const std::string& m, std::size_t k) { return aggregate(acc[{m, k}]).mean; };
  bool pass = true;
  std::string detail;
  for (std::size_t k : {2u, 5u}) {
    const double ft = mean("fine_tune", k), adv = mean("fine_tune_adv", k), full = mean("full", k);
    const double margin = k == 2 ? kTransferMarginK2 : kTransferMarginK5;
    const bool between = (adv >= ft && adv <= full) || (k >= 4 && std::abs(adv - full) <= kAdvOnlyBand);
    pass = pass && full - ft >= margin && between;
    detail += fmt("k=%zu ft %.4f adv %.4f full %.4f; ", k, ft, adv, full);
  }
  const double secs = seconds_since(t0);
  report(6, pass && secs <= kTransferBudgetSeconds,
         detail + fmt("%.0fs (budget %.0fs)", secs, kTransferBudgetSeconds));
}

void protocol_exactness() {
  // Split cardinalities on a synthetic pool, then the MNIST counts.
  const auto pool = filter_classes(synth_digits(40, {5, 6, 7, 8, 9}, 16, 4), {5, 6, 7, 8, 9});
  bool splits_ok = true;
  for (std::size_t k : {2u, 3u, 4u, 5u}) {
    const auto s = make_splits(pool, k, 5);
    std::vector<std::size_t> all = s.d2_indices;
    all.insert(all.end(), s.d3_indices.begin(), s.d3_indices.end());
    std::ranges::sort(all);
    splits_ok = splits_ok && s.d2.size() == 5 * k && all == iota_indices(pool.size());
  }
  if (auto m = missing({mnist_train(), mnist_test()}); !m.empty()) {
    report(7, false, fmt("splits %s; dataset not found: ", splits_ok ? "ok" : "WRONG") + m);
    return;
  }
  const auto train = load(mnist_train()), test = load(mnist_test());
  const bool counts_ok = train.size() == 60000 && test.size() == 10000;
  report(7, splits_ok && counts_ok,
         fmt("splits %s; MNIST %zu/%zu (want 60000/10000)", splits_ok ? "ok" : "WRONG", train.size(), test.size()));
}

void determinism_and_persistence(const Synth& s, const SourceModel& src) {
  const auto cfg = small_config();
  const auto a = adapt_joint(src.net, s.source, s.splits.d2, s.splits.d3, cfg);
  const auto b = adapt_joint(src.net, s.source, s.splits.d2, s.splits.d3, cfg);
  const bool csv_same = a.record.csv() == b.record.csv();

  const auto ck = make_checkpoint(a.target, describe(cfg), cfg.adapt_steps);
  const auto bytes = encode_checkpoint(ck);
  const auto back = decode_checkpoint(bytes);
  const bool roundtrip = encode_checkpoint(back) == bytes && same_bits(back.tensors, ck.tensors);

  auto reloaded = EmbeddingNetwork<float>::build(a.target.spec(), 99);
  reloaded.load_state(back.tensors);
  auto original = a.target;
  const auto x = normalize_batch<float>(s.test, iota_indices(s.test.size()));
  const auto la = original.forward(x, Mode::eval).logits;
  const auto lb = reloaded.forward(x, Mode::eval).logits;
  const bool same_eval = std::memcmp(la.data().data(), lb.data().data(), la.numel() * sizeof(float)) == 0 &&
                         evaluate(original, s.test).accuracy == evaluate(reloaded, s.test).accuracy;
  report(8, csv_same && roundtrip && same_eval,
         fmt("metrics CSV identical %s, checkpoint round-trip %s, reloaded logits identical %s",
             csv_same ? "yes" : "no", roundtrip ? "yes" : "no", same_eval ? "yes" : "no"));
}

void degeneracy(const Synth& s, const SourceModel& src) {
  auto cfg = small_config();
  cfg.alpha = 0.0;
  cfg.beta = 0.0;
  const auto joint = adapt_joint(src.net, s.source, s.splits.d2, s.splits.d3, cfg);
  const auto ft = run_baseline(BaselineKind::fine_tune, &src.net, src.net.spec(), s.splits.d2, cfg);
  bool same = joint.record.steps.size() == ft.record.steps.size() && !ft.record.steps.empty();
  std::size_t first_diff = 0;
  for (std::size_t i = 0; same && i < ft.record.steps.size(); ++i) {
    const auto& p = joint.record.steps[i].losses;
    const auto& q = ft.record.steps[i].losses;
    if (p.sup != q.sup || p.total != q.total) {
      same = false;
      first_diff = i;
    }
  }
  report(9, same,
         same ? fmt("%zu steps, supervised and total loss bit-identical", ft.record.steps.size())
              : fmt("trajectories diverge at step %zu", first_diff));
}

}  // namespace

int main() {
  guarded(1, gradient_suite);
  guarded(2, loss_identities);
  guarded(3, temperature_property);
  guarded(4, oracle_equivalence);
  guarded(5, uda_ordering);
  guarded(6, transfer_ordering);
  guarded(7, protocol_exactness);
  const Synth s = synth();
  const SourceModel src = pretrain_source(s.source, small_spec(5), small_config());
  guarded(8, [&] { determinism_and_persistence(s, src); });
  guarded(9, [&] { degeneracy(s, src); });
  std::printf("%d of 9 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
