#pragma once

// Dataset ingestion (IDX), class filtering, k-shot splits, batching and a
// synthetic digit-like fixture.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "xfer/errors.hpp"
#include "xfer/rng.hpp"
#include "xfer/tensor.hpp"

namespace xfer {

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;  // 2051
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;  // 2049

/// Single-channel 8-bit images, N x 1 x rows x cols, row-major.
struct LabeledDataset {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> pixels;
  std::vector<int> labels;
  std::vector<int> classes;  // declared class ids, ascending

  std::size_t size() const { return labels.size(); }
  std::size_t image_size() const { return rows * cols; }
};

struct UnlabeledDataset {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> pixels;

  std::size_t size() const { return rows * cols != 0 ? pixels.size() / (rows * cols) : 0; }
  std::size_t image_size() const { return rows * cols; }
};

namespace detail {

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
         std::uint32_t{b[at + 3]};
}

inline void put_be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  b.push_back(static_cast<std::uint8_t>(v >> 24));
  b.push_back(static_cast<std::uint8_t>(v >> 16));
  b.push_back(static_cast<std::uint8_t>(v >> 8));
  b.push_back(static_cast<std::uint8_t>(v));
}

inline void check_length(const std::string& path, std::size_t expected, std::size_t actual) {
  if (actual < expected) {
    throw TruncatedError("'" + path + "': truncated, expected " + std::to_string(expected) + " bytes, got " +
                         std::to_string(actual));
  }
  if (actual > expected) {
    throw FormatError("'" + path + "': expected " + std::to_string(expected) + " bytes, got " +
                      std::to_string(actual));
  }
}

inline void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline std::vector<int> class_set(const std::vector<int>& labels) {
  std::set<int> s(labels.begin(), labels.end());
  return {s.begin(), s.end()};
}

}  // namespace detail

struct IdxImages {
  std::size_t count = 0, rows = 0, cols = 0;
  std::vector<std::uint8_t> pixels;
};

/// Big-endian IDX3 unsigned-byte image file.
inline IdxImages read_idx_images(const std::string& path) {
  const auto b = detail::read_file(path);
  if (b.size() < 16) detail::check_length(path, 16, b.size());
  const std::uint32_t magic = detail::read_be32(b, 0);
  if (magic != kIdxImagesMagic) {
    throw BadMagicError("'" + path + "': bad IDX image magic " + std::to_string(magic) + ", expected 2051");
  }
  IdxImages img;
  img.count = detail::read_be32(b, 4);
  img.rows = detail::read_be32(b, 8);
  img.cols = detail::read_be32(b, 12);
  detail::check_length(path, 16 + img.count * img.rows * img.cols, b.size());
  img.pixels.assign(b.begin() + 16, b.end());
  return img;
}

/// Big-endian IDX1 unsigned-byte label file.
inline std::vector<int> read_idx_labels(const std::string& path) {
  const auto b = detail::read_file(path);
  if (b.size() < 8) detail::check_length(path, 8, b.size());
  const std::uint32_t magic = detail::read_be32(b, 0);
  if (magic != kIdxLabelsMagic) {
    throw BadMagicError("'" + path + "': bad IDX label magic " + std::to_string(magic) + ", expected 2049");
  }
  const std::size_t n = detail::read_be32(b, 4);
  detail::check_length(path, 8 + n, b.size());
  return {b.begin() + 8, b.end()};
}

inline void write_idx_images(const std::string& path, std::size_t count, std::size_t rows, std::size_t cols,
                             const std::vector<std::uint8_t>& pixels) {
  if (pixels.size() != count * rows * cols) throw ShapeError("write_idx_images: pixel count mismatch");
  std::vector<std::uint8_t> b;
  b.reserve(16 + pixels.size());
  detail::put_be32(b, kIdxImagesMagic);
  detail::put_be32(b, static_cast<std::uint32_t>(count));
  detail::put_be32(b, static_cast<std::uint32_t>(rows));
  detail::put_be32(b, static_cast<std::uint32_t>(cols));
  b.insert(b.end(), pixels.begin(), pixels.end());
  detail::write_file(path, b);
}

inline void write_idx_labels(const std::string& path, const std::vector<int>& labels) {
  std::vector<std::uint8_t> b;
  b.reserve(8 + labels.size());
  detail::put_be32(b, kIdxLabelsMagic);
  detail::put_be32(b, static_cast<std::uint32_t>(labels.size()));
  for (int l : labels) {
    if (l < 0 || l > 255) throw ParameterError("write_idx_labels: label " + std::to_string(l) + " not a byte");
    b.push_back(static_cast<std::uint8_t>(l));
  }
  detail::write_file(path, b);
}

inline void write_idx(const std::string& images_path, const std::string& labels_path, const LabeledDataset& ds) {
  write_idx_images(images_path, ds.size(), ds.rows, ds.cols, ds.pixels);
  write_idx_labels(labels_path, ds.labels);
}

inline LabeledDataset load_idx_labeled(const std::string& images_path, const std::string& labels_path) {
  IdxImages img = read_idx_images(images_path);
  std::vector<int> labels = read_idx_labels(labels_path);
  if (labels.size() != img.count) {
    throw CountMismatchError("'" + images_path + "' has " + std::to_string(img.count) + " images but '" +
                             labels_path + "' has " + std::to_string(labels.size()) + " labels");
  }
  LabeledDataset ds;
  ds.name = images_path;
  ds.rows = img.rows;
  ds.cols = img.cols;
  ds.pixels = std::move(img.pixels);
  ds.labels = std::move(labels);
  ds.classes = detail::class_set(ds.labels);
  return ds;
}

inline UnlabeledDataset load_idx_unlabeled(const std::string& images_path) {
  IdxImages img = read_idx_images(images_path);
  return {images_path, img.rows, img.cols, std::move(img.pixels)};
}

inline std::variant<LabeledDataset, UnlabeledDataset> load_idx(const std::string& images_path,
                                                               const std::optional<std::string>& labels_path) {
  if (labels_path) return load_idx_labeled(images_path, *labels_path);
  return load_idx_unlabeled(images_path);
}

/// Keeps examples whose label is in `classes`, relabelled 0..C-1 in
/// ascending order of the original ids. Example order is preserved.
inline LabeledDataset filter_classes(const LabeledDataset& ds, std::vector<int> classes) {
  if (classes.empty()) throw ParameterError("filter_classes: empty class list");
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  LabeledDataset out;
  out.name = ds.name;
  out.rows = ds.rows;
  out.cols = ds.cols;
  const std::size_t px = ds.image_size();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto it = std::lower_bound(classes.begin(), classes.end(), ds.labels[i]);
    if (it == classes.end() || *it != ds.labels[i]) continue;
    out.labels.push_back(static_cast<int>(it - classes.begin()));
    out.pixels.insert(out.pixels.end(), ds.pixels.begin() + i * px, ds.pixels.begin() + (i + 1) * px);
  }
  if (out.labels.empty()) throw ParameterError("filter_classes: no examples left in '" + ds.name + "'");
  for (std::size_t c = 0; c < classes.size(); ++c) out.classes.push_back(static_cast<int>(c));
  return out;
}

inline LabeledDataset select(const LabeledDataset& ds, const std::vector<std::size_t>& idx) {
  LabeledDataset out{ds.name, ds.rows, ds.cols, {}, {}, ds.classes};
  const std::size_t px = ds.image_size();
  out.pixels.reserve(idx.size() * px);
  for (std::size_t i : idx) {
    out.labels.push_back(ds.labels.at(i));
    out.pixels.insert(out.pixels.end(), ds.pixels.begin() + i * px, ds.pixels.begin() + (i + 1) * px);
  }
  return out;
}

inline UnlabeledDataset drop_labels(const LabeledDataset& ds) { return {ds.name, ds.rows, ds.cols, ds.pixels}; }

/// Uniform random subset of `n` examples (original order kept); the whole
/// dataset when n >= size.
inline LabeledDataset subsample(const LabeledDataset& ds, std::size_t n, std::uint64_t seed) {
  if (n >= ds.size()) return ds;
  Rng rng(seed);
  auto perm = rng.permutation(ds.size());
  perm.resize(n);
  std::sort(perm.begin(), perm.end());
  return select(ds, perm);
}

/// D1 labeled source, D2 k-shot labeled target, D3 unlabeled remainder.
struct SplitBundle {
  LabeledDataset d1;
  LabeledDataset d2;
  UnlabeledDataset d3;
  std::vector<std::size_t> d2_indices;  // into the target pool, ascending
  std::vector<std::size_t> d3_indices;
  std::uint64_t seed = 0;
  std::size_t k = 0;
};

/// Seeded choice of exactly k examples per class for D2; everything else in
/// the pool becomes D3. D1 is left empty for the caller to fill.
inline SplitBundle make_splits(const LabeledDataset& pool, std::size_t k, std::uint64_t seed) {
  if (k == 0) throw ParameterError("make_splits: k must be positive");
  Rng rng(seed);
  std::vector<int> classes = pool.classes.empty() ? detail::class_set(pool.labels) : pool.classes;
  std::vector<char> chosen(pool.size(), 0);
  for (int c : classes) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < pool.size(); ++i)
      if (pool.labels[i] == c) members.push_back(i);
    if (members.size() < k) {
      throw ParameterError("make_splits: class " + std::to_string(c) + " has " + std::to_string(members.size()) +
                           " examples, need k=" + std::to_string(k));
    }
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t pick = j + rng.index(members.size() - j);
      std::swap(members[j], members[pick]);
      chosen[members[j]] = 1;
    }
  }
  SplitBundle s;
  s.seed = seed;
  s.k = k;
  for (std::size_t i = 0; i < pool.size(); ++i) (chosen[i] ? s.d2_indices : s.d3_indices).push_back(i);
  s.d2 = select(pool, s.d2_indices);
  s.d2.classes = classes;
  s.d3 = drop_labels(select(pool, s.d3_indices));
  return s;
}

/// Maps 8-bit pixels to [-1, 1] via (x/255 - 0.5)/0.5, shape N x 1 x rows x cols.
template <typename T = float>
Tensor<T> normalize_batch(const std::vector<std::uint8_t>& pixels, std::size_t rows, std::size_t cols,
                          const std::vector<std::size_t>& idx) {
  const std::size_t px = rows * cols;
  std::vector<T> out(idx.size() * px);
  for (std::size_t n = 0; n < idx.size(); ++n)
    for (std::size_t p = 0; p < px; ++p) {
      const double v = static_cast<double>(pixels.at(idx[n] * px + p)) / 255.0;
      out[n * px + p] = static_cast<T>((v - 0.5) / 0.5);
    }
  return Tensor<T>::from({idx.size(), 1, rows, cols}, std::move(out));
}

template <typename T = float, typename Dataset>
Tensor<T> normalize_batch(const Dataset& ds, const std::vector<std::size_t>& idx) {
  return normalize_batch<T>(ds.pixels, ds.rows, ds.cols, idx);
}

template <typename Dataset>
std::vector<int> gather_labels(const Dataset& ds, const std::vector<std::size_t>& idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(ds.labels.at(i));
  return out;
}

inline std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

enum class BatchMode { shuffle, sequential };

/// Endless stream of index batches. Each epoch is a fresh permutation seeded
/// by (seed, epoch); the final partial batch of an epoch is kept.
class BatchIterator {
 public:
  BatchIterator(std::size_t n, std::size_t batch_size, std::uint64_t seed, BatchMode mode = BatchMode::shuffle)
      : n_(n), batch_(batch_size), seed_(seed), mode_(mode) {
    if (batch_size == 0) throw ParameterError("BatchIterator: batch size must be >= 1");
    if (n == 0) throw ParameterError("BatchIterator: empty dataset");
    start_epoch(0);
  }

  std::vector<std::vector<std::size_t>> epoch_batches(std::size_t epoch) const {
    const auto order = epoch_order(epoch);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t at = 0; at < n_; at += batch_)
      out.emplace_back(order.begin() + at, order.begin() + std::min(n_, at + batch_));
    return out;
  }

  std::vector<std::size_t> next() {
    if (pos_ >= n_) start_epoch(epoch_ + 1);
    const std::size_t end = std::min(n_, pos_ + batch_);
    std::vector<std::size_t> b(order_.begin() + pos_, order_.begin() + end);
    pos_ = end;
    return b;
  }

  std::size_t epoch() const { return epoch_; }

 private:
  std::vector<std::size_t> epoch_order(std::size_t epoch) const {
    if (mode_ == BatchMode::sequential) return iota_indices(n_);
    Rng rng(mix_seed(seed_, epoch));
    return rng.permutation(n_);
  }

  void start_epoch(std::size_t e) {
    epoch_ = e;
    order_ = epoch_order(e);
    pos_ = 0;
  }

  std::size_t n_, batch_;
  std::uint64_t seed_;
  BatchMode mode_;
  std::size_t epoch_ = 0;
  std::size_t pos_ = 0;
  std::vector<std::size_t> order_;
};

/// Bilinear resampling (half-pixel centers, edge clamped), rounded half-up
/// and clamped to [0, 255].
inline std::vector<std::uint8_t> resize_bilinear(const std::vector<std::uint8_t>& pixels, std::size_t count,
                                                 std::size_t rows, std::size_t cols, std::size_t out_rows,
                                                 std::size_t out_cols) {
  std::vector<std::uint8_t> out(count * out_rows * out_cols);
  const double sy = static_cast<double>(rows) / static_cast<double>(out_rows);
  const double sx = static_cast<double>(cols) / static_cast<double>(out_cols);
  for (std::size_t n = 0; n < count; ++n) {
    const std::uint8_t* src = pixels.data() + n * rows * cols;
    std::uint8_t* dst = out.data() + n * out_rows * out_cols;
    for (std::size_t y = 0; y < out_rows; ++y) {
      const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(rows - 1));
      const std::size_t y0 = static_cast<std::size_t>(fy);
      const std::size_t y1 = std::min(y0 + 1, rows - 1);
      const double wy = fy - static_cast<double>(y0);
      for (std::size_t x = 0; x < out_cols; ++x) {
        const double fx =
            std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(cols - 1));
        const std::size_t x0 = static_cast<std::size_t>(fx);
        const std::size_t x1 = std::min(x0 + 1, cols - 1);
        const double wx = fx - static_cast<double>(x0);
        const double v = (1 - wy) * ((1 - wx) * src[y0 * cols + x0] + wx * src[y0 * cols + x1]) +
                         wy * ((1 - wx) * src[y1 * cols + x0] + wx * src[y1 * cols + x1]);
        dst[y * out_cols + x] = static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
      }
    }
  }
  return out;
}

template <typename Dataset>
Dataset resized(const Dataset& ds, std::size_t rows, std::size_t cols) {
  if (ds.rows == rows && ds.cols == cols) return ds;
  Dataset out = ds;
  out.pixels = resize_bilinear(ds.pixels, ds.size(), ds.rows, ds.cols, rows, cols);
  out.rows = rows;
  out.cols = cols;
  return out;
}

/// Grayscale conversion used when preparing colour sources as IDX:
/// 0.299 R + 0.587 G + 0.114 B, rounded half-up.
inline std::uint8_t luminance(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  const double y = 0.299 * r + 0.587 * g + 0.114 * b;
  return static_cast<std::uint8_t>(std::min(255.0, std::floor(y + 0.5)));
}

/// Class-conditional blob images: each class id owns a fixed arrangement of
/// three Gaussian blobs; examples add position jitter, amplitude variation
/// and pixel noise. Labels are the raw class ids.
inline LabeledDataset synth_digits(std::size_t n_per_class, const std::vector<int>& classes, std::size_t image_size,
                                   std::uint64_t seed) {
  LabeledDataset ds;
  ds.name = "synth";
  ds.rows = ds.cols = image_size;
  ds.classes = detail::class_set(classes);
  const double S = static_cast<double>(image_size);
  Rng rng(seed);
  struct Blob {
    double cy, cx, sigma;
  };
  for (std::size_t i = 0; i < n_per_class; ++i) {
    for (int c : ds.classes) {
      Rng shape_rng(mix_seed(0x5EED, static_cast<std::uint64_t>(c)));
      std::array<Blob, 3> blobs{};
      for (auto& b : blobs) b = {shape_rng.uniform(0.2, 0.8) * S, shape_rng.uniform(0.2, 0.8) * S,
                                 shape_rng.uniform(0.06, 0.12) * S};
      const double jy = rng.uniform(-1.0, 1.0), jx = rng.uniform(-1.0, 1.0);
      const double amp = rng.uniform(0.75, 1.0);
      for (std::size_t y = 0; y < image_size; ++y)
        for (std::size_t x = 0; x < image_size; ++x) {
          double v = 0.0;
          for (const auto& b : blobs) {
            const double dy = static_cast<double>(y) - b.cy - jy, dx = static_cast<double>(x) - b.cx - jx;
            v += std::exp(-(dy * dy + dx * dx) / (2 * b.sigma * b.sigma));
          }
          v = amp * std::min(v, 1.0) + 0.05 * rng.normal();
          ds.pixels.push_back(static_cast<std::uint8_t>(std::clamp(std::floor(255.0 * v + 0.5), 0.0, 255.0)));
        }
      ds.labels.push_back(c);
    }
  }
  return ds;
}

struct DomainShift {
  int shift_y = 1;
  int shift_x = 2;
  bool invert = true;
  double contrast = 0.8;
};

/// Fixed appearance change for building a second domain from a synthetic
/// set: translation (zero fill), optional inversion, contrast scaling.
/// Labels are untouched.
inline LabeledDataset perturb_domain(const LabeledDataset& ds, const DomainShift& shift = {}) {
  LabeledDataset out = ds;
  out.name = ds.name + "+shift";
  const std::size_t R = ds.rows, C = ds.cols;
  for (std::size_t n = 0; n < ds.size(); ++n) {
    const std::uint8_t* src = ds.pixels.data() + n * R * C;
    std::uint8_t* dst = out.pixels.data() + n * R * C;
    for (std::size_t y = 0; y < R; ++y)
      for (std::size_t x = 0; x < C; ++x) {
        const long sy = static_cast<long>(y) - shift.shift_y, sx = static_cast<long>(x) - shift.shift_x;
        double v = (sy >= 0 && sy < static_cast<long>(R) && sx >= 0 && sx < static_cast<long>(C))
                       ? src[sy * static_cast<long>(C) + sx]
                       : 0.0;
        v *= shift.contrast;
        if (shift.invert) v = 255.0 - v;
        dst[y * C + x] = static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
      }
  }
  return out;
}

}  // namespace xfer
