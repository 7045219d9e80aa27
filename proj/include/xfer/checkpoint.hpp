#pragma once

// Binary checkpoint: "XFERCKPT", u32 version, u32 tensor count, then per
// tensor u16 name length + name, u8 rank, u32 dims, float32 values, then a
// u32-length-prefixed config text. All integers and floats little-endian.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <optional>
#include <string>
#include <vector>

#include "xfer/data.hpp"
#include "xfer/errors.hpp"
#include "xfer/layers.hpp"

namespace xfer {

inline constexpr std::array<char, 8> kCheckpointMagic{'X', 'F', 'E', 'R', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::vector<NamedTensor<float>> tensors;
  std::string config;  // key=value text
  std::size_t step = 0;

  const Tensor<float>* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t.tensor;
    return nullptr;
  }
};

namespace detail {

class Writer {
 public:
  template <typename U>
  void put(U v) {
    static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes.insert(bytes.end(), p, p + sizeof(U));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes.insert(bytes.end(), p, p + n);
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& b, std::string path) : b_(b), path_(std::move(path)) {}

  template <typename U>
  U get(const char* what) {
    U v;
    std::memcpy(&v, take(sizeof(U), what), sizeof(U));
    return v;
  }
  const std::uint8_t* take(std::size_t n, const char* what) {
    if (b_.size() - at_ < n) {
      throw TruncatedError(path_ + ": truncated checkpoint while reading " + what + " at byte " + std::to_string(at_) +
                           " (need " + std::to_string(n) + ", have " + std::to_string(b_.size() - at_) + ")");
    }
    const auto* p = b_.data() + at_;
    at_ += n;
    return p;
  }
  std::size_t remaining() const { return b_.size() - at_; }

 private:
  const std::vector<std::uint8_t>& b_;
  std::string path_;
  std::size_t at_ = 0;
};

inline std::string config_with_step(const std::string& config, std::size_t step) {
  return "# step=" + std::to_string(step) + "\n" + config;
}

inline std::pair<std::string, std::size_t> split_step(const std::string& text) {
  const std::string prefix = "# step=";
  if (text.rfind(prefix, 0) != 0) return {text, 0};
  const auto nl = text.find('\n');
  const std::size_t step = std::stoull(text.substr(prefix.size(), nl - prefix.size()));
  return {nl == std::string::npos ? std::string() : text.substr(nl + 1), step};
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
  detail::Writer w;
  w.put_bytes(kCheckpointMagic.data(), kCheckpointMagic.size());
  w.put<std::uint32_t>(ck.version);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& nt : ck.tensors) {
    if (nt.name.size() > 0xFFFF) throw ParameterError("checkpoint: tensor name too long: " + nt.name.substr(0, 32));
    w.put<std::uint16_t>(static_cast<std::uint16_t>(nt.name.size()));
    w.put_bytes(nt.name.data(), nt.name.size());
    w.put<std::uint8_t>(static_cast<std::uint8_t>(nt.tensor.rank()));
    for (auto d : nt.tensor.shape()) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    const auto data = nt.tensor.data();
    w.put_bytes(data.data(), data.size() * sizeof(float));
  }
  const std::string text = detail::config_with_step(ck.config, ck.step);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(text.size()));
  w.put_bytes(text.data(), text.size());
  return std::move(w.bytes);
}

inline Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& path = "<memory>") {
  detail::Reader r(bytes, path);
  const auto* magic = r.take(kCheckpointMagic.size(), "magic");
  if (std::memcmp(magic, kCheckpointMagic.data(), kCheckpointMagic.size()) != 0) {
    throw BadMagicError(path + ": not a checkpoint (bad magic)");
  }
  Checkpoint ck;
  ck.version = r.get<std::uint32_t>("version");
  if (ck.version != kCheckpointVersion) {
    throw VersionError(path + ": checkpoint version " + std::to_string(ck.version) + ", supported " +
                       std::to_string(kCheckpointVersion));
  }
  const auto count = r.get<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint16_t>("name length");
    const auto* name = r.take(len, "name");
    const auto rank = r.get<std::uint8_t>("rank");
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint32_t>("dims");
    const std::size_t n = shape_numel(shape);
    std::vector<float> values(n);
    const auto* raw = r.take(n * sizeof(float), "tensor values");
    std::memcpy(values.data(), raw, n * sizeof(float));
    ck.tensors.push_back({std::string(reinterpret_cast<const char*>(name), len),
                          Tensor<float>::from(std::move(shape), std::move(values))});
  }
  const auto text_len = r.get<std::uint32_t>("config length");
  const auto* text = r.take(text_len, "config text");
  if (r.remaining() != 0) {
    throw FormatError(path + ": " + std::to_string(r.remaining()) + " trailing bytes after checkpoint");
  }
  std::tie(ck.config, ck.step) = detail::split_step(std::string(reinterpret_cast<const char*>(text), text_len));
  return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  detail::write_file(path, encode_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(detail::read_file(path), path); }

/// Snapshot of a network's parameters and batchnorm buffers.
inline Checkpoint make_checkpoint(const EmbeddingNetwork<float>& net, std::string config, std::size_t step) {
  Checkpoint ck;
  for (const auto& nt : net.state()) ck.tensors.push_back({nt.name, nt.tensor.detach()});
  ck.config = std::move(config);
  ck.step = step;
  return ck;
}

}  // namespace xfer
