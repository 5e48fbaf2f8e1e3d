// Copyright (c) 2026, The rlrs-lab Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef RLRS_CHECKPOINT_HPP
#define RLRS_CHECKPOINT_HPP

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <unordered_map>
#include <vector>

#include "rlrs/errors.hpp"
#include "rlrs/model.hpp"
#include "rlrs/optimizer.hpp"

namespace rlrs {

// Checkpoint layout, all integers little-endian:
//
//   magic        8 bytes  "RLRSCKPT"
//   version      u32      1
//   config_len   u64, then config_len bytes of flat config text
//   seed         u64
//   step         u64
//   adam_steps   u64      optimizer step count
//   n_tensors    u64
//   per tensor:  name_len u32, name bytes, rank u32, rank x u64 dims,
//                prod(dims) x f64 payload (IEEE-754 bits, little-endian)
//
// Model tensors come first under their parameter names, followed by the
// optimizer moments as "adam.m.<name>" and "adam.v.<name>".

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct Checkpoint {
  std::string config_text;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  std::uint64_t adam_steps = 0;
  std::vector<NamedTensor> tensors;
};

namespace detail {

inline constexpr char kCheckpointMagic[8] = {'R', 'L', 'R', 'S', 'C', 'K', 'P', 'T'};

template <typename T>
void put_le(std::string& out, T value) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
}

class ByteReader {
 public:
  explicit ByteReader(std::string bytes) : bytes_(std::move(bytes)) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      value |= static_cast<T>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return value;
  }

  std::string take(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw IoError("checkpoint truncated");
  }

  std::string bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::string out(detail::kCheckpointMagic, 8);
  detail::put_le<std::uint32_t>(out, 1);
  detail::put_le<std::uint64_t>(out, ckpt.config_text.size());
  out += ckpt.config_text;
  detail::put_le<std::uint64_t>(out, ckpt.seed);
  detail::put_le<std::uint64_t>(out, ckpt.step);
  detail::put_le<std::uint64_t>(out, ckpt.adam_steps);
  detail::put_le<std::uint64_t>(out, ckpt.tensors.size());
  for (const auto& t : ckpt.tensors) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.tensor.rank()));
    for (auto d : t.tensor.shape()) detail::put_le<std::uint64_t>(out, d);
    for (double x : t.tensor.data()) detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(x));
  }
  return out;
}

inline Checkpoint decode_checkpoint(std::string bytes) {
  detail::ByteReader r(std::move(bytes));
  if (r.take(8) != std::string(detail::kCheckpointMagic, 8)) throw IoError("not a checkpoint file");
  if (const auto version = r.get<std::uint32_t>(); version != 1)
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  c.config_text = r.take(r.get<std::uint64_t>());
  c.seed = r.get<std::uint64_t>();
  c.step = r.get<std::uint64_t>();
  c.adam_steps = r.get<std::uint64_t>();
  const auto n = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < n; ++i) {
    NamedTensor t;
    t.name = r.take(r.get<std::uint32_t>());
    Shape shape(r.get<std::uint32_t>());
    for (auto& d : shape) d = r.get<std::uint64_t>();
    std::vector<double> data(shape_size(shape));
    for (auto& x : data) x = std::bit_cast<double>(r.get<std::uint64_t>());
    t.tensor = Tensor(std::move(shape), std::move(data));
    c.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw IoError("trailing bytes after checkpoint");
  return c;
}

inline Checkpoint make_checkpoint(std::string config_text, std::uint64_t seed, std::uint64_t step,
                                  const ParameterSet& params, const AdamWState* adam = nullptr) {
  Checkpoint c{std::move(config_text), seed, step, adam ? adam->step_count : 0, {}};
  for (const auto& p : params) c.tensors.push_back({p.name, p.tensor});
  if (adam && adam->m.size() == params.size()) {
    for (std::size_t i = 0; i < params.size(); ++i) c.tensors.push_back({"adam.m." + params[i].name, adam->m[i]});
    for (std::size_t i = 0; i < params.size(); ++i) c.tensors.push_back({"adam.v." + params[i].name, adam->v[i]});
  }
  return c;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  const std::string bytes = encode_checkpoint(ckpt);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  return decode_checkpoint(std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>()));
}

/// Copies model tensors (and moments, when present and `adam` is given) from
/// a checkpoint into an existing parameter set of the same architecture.
inline void restore_checkpoint(const Checkpoint& ckpt, ParameterSet& params, AdamWState* adam = nullptr) {
  std::unordered_map<std::string, const Tensor*> by_name;
  for (const auto& t : ckpt.tensors) by_name[t.name] = &t.tensor;
  auto fetch = [&](const std::string& name, const Tensor& like) -> const Tensor& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw IoError("checkpoint lacks tensor " + name);
    if (it->second->shape() != like.shape())
      throw IoError("checkpoint tensor " + name + " has shape " + shape_string(it->second->shape()));
    return *it->second;
  };
  for (auto& p : params) p.tensor = fetch(p.name, p.tensor);
  if (!adam || !by_name.count("adam.m." + params[0].name)) return;
  adam->reset(params);
  adam->step_count = ckpt.adam_steps;
  for (std::size_t i = 0; i < params.size(); ++i) {
    adam->m[i] = fetch("adam.m." + params[i].name, params[i].tensor);
    adam->v[i] = fetch("adam.v." + params[i].name, params[i].tensor);
  }
}

}  // namespace rlrs

#endif  // RLRS_CHECKPOINT_HPP
