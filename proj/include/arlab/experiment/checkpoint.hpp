// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint file, all integers little-endian:
//
//   "RAEARCKP"             8 bytes
//   version                u32
//   entry count            u64
//   per entry:
//     name length          u64, then the name bytes
//     rank                 u64, then rank dims as i64
//     values               numel x f32
//   config length          u64, then the config text
//
// The training-step counter travels as the entry "meta.step" (one f32,
// exact below 2^24).
#pragma once

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <string>

#include "arlab/experiment/config.hpp"
#include "arlab/tensor/params.hpp"

namespace arlab {

inline constexpr std::array<char, 8> kCheckpointMagic = {'R', 'A', 'E', 'A', 'R', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr const char* kStepEntry = "meta.step";

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::map<std::string, Tensor> tensors;
  std::string config_text;
  std::int64_t step = 0;

  ExperimentConfig config() const { return parse_config(config_text); }
};

namespace detail {

template <class U>
void put_le(std::string& out, U v) {
  using Raw = std::conditional_t<sizeof(U) == 4, std::uint32_t, std::uint64_t>;
  const auto raw = std::bit_cast<Raw>(v);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((raw >> (8 * i)) & 0xFF));
}

class ByteReader {
 public:
  explicit ByteReader(const std::string& bytes) : b_(bytes) {}

  template <class U>
  U get() {
    need(sizeof(U));
    using Raw = std::conditional_t<sizeof(U) == 4, std::uint32_t, std::uint64_t>;
    Raw raw = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
      raw |= static_cast<Raw>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return std::bit_cast<U>(raw);
  }

  std::string bytes(std::uint64_t n) {
    need(n);
    std::string s = b_.substr(pos_, static_cast<std::size_t>(n));
    pos_ += static_cast<std::size_t>(n);
    return s;
  }

  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (n > b_.size() - pos_) throw IntegrityError("checkpoint truncated at byte " + std::to_string(pos_));
  }

  const std::string& b_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const std::map<std::string, Tensor>& tensors, const std::string& config_text,
                                     std::int64_t step) {
  ARLAB_REQUIRE(!tensors.count(kStepEntry), "tensor name meta.step is reserved");
  ARLAB_REQUIRE(step >= 0 && step < (1 << 24), "step counter out of range");
  std::string out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  detail::put_le(out, kCheckpointVersion);
  detail::put_le(out, static_cast<std::uint64_t>(tensors.size() + 1));
  auto entry = [&](const std::string& name, const Tensor& t) {
    detail::put_le(out, static_cast<std::uint64_t>(name.size()));
    out += name;
    detail::put_le(out, static_cast<std::uint64_t>(t.rank()));
    for (auto d : t.shape()) detail::put_le(out, static_cast<std::int64_t>(d));
    for (float v : t.data()) detail::put_le(out, v);
  };
  for (const auto& [name, t] : tensors) entry(name, t);
  entry(kStepEntry, Tensor::scalar(static_cast<float>(step)));
  detail::put_le(out, static_cast<std::uint64_t>(config_text.size()));
  out += config_text;
  return out;
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < kCheckpointMagic.size() ||
      std::memcmp(bytes.data(), kCheckpointMagic.data(), kCheckpointMagic.size()) != 0)
    throw FormatError("not a checkpoint: bad magic bytes");
  detail::ByteReader r(bytes);
  r.bytes(kCheckpointMagic.size());
  Checkpoint ck;
  ck.version = r.get<std::uint32_t>();
  if (ck.version != kCheckpointVersion)
    throw UnsupportedVersionError("unsupported checkpoint version " + std::to_string(ck.version));
  const auto count = r.get<std::uint64_t>();
  bool have_step = false;
  for (std::uint64_t e = 0; e < count; ++e) {
    const auto name = r.bytes(r.get<std::uint64_t>());
    const auto rank = r.get<std::uint64_t>();
    if (rank == 0 || rank > 8) throw IntegrityError("entry " + name + " has invalid rank");
    Shape shape;
    std::int64_t numel = 1;
    for (std::uint64_t i = 0; i < rank; ++i) {
      const auto d = r.get<std::int64_t>();
      if (d <= 0 || d > (std::int64_t{1} << 32)) throw IntegrityError("entry " + name + " has invalid dims");
      shape.push_back(d);
      numel *= d;
      if (numel > (std::int64_t{1} << 34)) throw IntegrityError("entry " + name + " is implausibly large");
    }
    std::vector<float> values(static_cast<std::size_t>(numel));
    for (auto& v : values) v = r.get<float>();
    if (name == kStepEntry) {
      if (numel != 1) throw IntegrityError("meta.step must hold one value");
      ck.step = static_cast<std::int64_t>(values[0]);
      have_step = true;
      continue;
    }
    if (!ck.tensors.emplace(name, Tensor(std::move(shape), std::move(values))).second)
      throw IntegrityError("duplicate entry " + name);
  }
  if (!have_step) throw IntegrityError("checkpoint has no step counter");
  ck.config_text = r.bytes(r.get<std::uint64_t>());
  if (!r.done()) throw IntegrityError("trailing bytes after config block");
  return ck;
}

/// Writes through a temporary file so a failed write never leaves a partial
/// checkpoint under `path`.
inline void save_checkpoint(const std::map<std::string, Tensor>& tensors, const ExperimentConfig& cfg,
                            const std::string& path, std::int64_t step = 0) {
  const auto bytes = encode_checkpoint(tensors, to_text(cfg), step);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write checkpoint " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw InputError("short write to " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw InputError("cannot move checkpoint into " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read checkpoint " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

/// Backbone and head parameters in one table; names do not collide
/// ("bb." versus "head." prefixes).
inline std::map<std::string, Tensor> model_tensors(const ParamStore<float>& backbone, const ParamStore<float>& head) {
  std::map<std::string, Tensor> out = backbone.tensors();
  for (const auto& [name, t] : head.tensors()) {
    ARLAB_REQUIRE(!out.count(name), "parameter name collision: " + name);
    out.emplace(name, t);
  }
  return out;
}

/// Copies checkpoint tensors back into a parameter store with the same
/// layout.
inline void restore_params(ParamStore<float>& params, const Checkpoint& ck) {
  for (auto& [name, t] : params.tensors()) {
    auto it = ck.tensors.find(name);
    if (it == ck.tensors.end()) throw IntegrityError("checkpoint lacks parameter " + name);
    if (it->second.shape() != t.shape()) throw IntegrityError("checkpoint shape mismatch for " + name);
    t = it->second;
  }
}

}  // namespace arlab
