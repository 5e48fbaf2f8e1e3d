// Copyright (c) 2026, The rlrs-lab Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef RLRS_DATA_HPP
#define RLRS_DATA_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "rlrs/errors.hpp"
#include "rlrs/model.hpp"

namespace rlrs {

struct TokenStream {
  std::vector<std::uint32_t> tokens;
  std::size_t vocab_size = 0;
  std::string source;
};

/// One token per byte (vocabulary 256).
inline TokenStream tokenize_bytes(std::string_view text, std::string source = "memory") {
  if (text.empty()) throw DomainError("cannot tokenize empty input");
  TokenStream s;
  s.vocab_size = 256;
  s.source = std::move(source);
  s.tokens.reserve(text.size());
  for (char c : text) s.tokens.push_back(static_cast<unsigned char>(c));
  return s;
}

inline std::string detokenize_bytes(const TokenStream& stream) {
  std::string out;
  out.reserve(stream.tokens.size());
  for (auto t : stream.tokens) {
    if (t > 255) throw DomainError("token " + std::to_string(t) + " is not a byte");
    out.push_back(static_cast<char>(static_cast<unsigned char>(t)));
  }
  return out;
}

inline TokenStream read_byte_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open data file " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("failed reading data file " + path.string());
  return tokenize_bytes(bytes, path.string());
}

struct SyntheticSpec {
  std::uint64_t seed = 1;
  std::size_t length = 200000;
  int order = 1;              // Markov order, 1 or 2
  std::size_t vocab_size = 64;
  std::size_t branching = 4;  // successors per context; 1 gives a deterministic chain

  friend bool operator==(const SyntheticSpec&, const SyntheticSpec&) = default;
};

/// Seeded sparse Markov chain over `vocab_size` symbols.
///
/// Every context's successor set contains (last + 1) mod V, which makes the
/// order-1 chain irreducible; the rest are drawn at random with random
/// weights.
class MarkovChain {
 public:
  explicit MarkovChain(const SyntheticSpec& spec) : spec_(spec) {
    if (spec.order != 1 && spec.order != 2) throw ConfigError("data.synthetic.order must be 1 or 2");
    if (spec.vocab_size < 2) throw ConfigError("data.synthetic.vocab_size must be at least 2");
    if (spec.branching < 1 || spec.branching > spec.vocab_size)
      throw ConfigError("data.synthetic.branching must lie in [1, vocab_size]");
    const std::size_t v = spec.vocab_size;
    const std::size_t contexts = spec.order == 1 ? v : v * v;
    std::mt19937_64 rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
    std::uniform_real_distribution<double> weight(0.2, 1.0);
    next_.resize(contexts);
    prob_.resize(contexts);
    for (std::size_t c = 0; c < contexts; ++c) {
      const std::size_t last = c % v;
      std::vector<std::uint32_t> succ{static_cast<std::uint32_t>((last + 1) % v)};
      std::uniform_int_distribution<std::uint32_t> pick(0, static_cast<std::uint32_t>(v - 1));
      while (succ.size() < spec.branching) {
        const auto s = pick(rng);
        if (std::find(succ.begin(), succ.end(), s) == succ.end()) succ.push_back(s);
      }
      std::vector<double> w(succ.size());
      for (auto& x : w) x = weight(rng);
      const double total = std::accumulate(w.begin(), w.end(), 0.0);
      for (auto& x : w) x /= total;
      next_[c] = std::move(succ);
      prob_[c] = std::move(w);
    }
  }

  const SyntheticSpec& spec() const { return spec_; }

  /// P(next = b | context a) for order-1 chains.
  std::vector<std::vector<double>> transition_matrix() const {
    if (spec_.order != 1) throw DomainError("transition_matrix is defined for order-1 chains");
    const std::size_t v = spec_.vocab_size;
    std::vector<std::vector<double>> t(v, std::vector<double>(v, 0.0));
    for (std::size_t a = 0; a < v; ++a)
      for (std::size_t k = 0; k < next_[a].size(); ++k) t[a][next_[a][k]] += prob_[a][k];
    return t;
  }

  std::vector<std::uint32_t> sample(std::size_t length) const {
    std::mt19937_64 rng(spec_.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const std::size_t v = spec_.vocab_size;
    std::vector<std::uint32_t> out;
    out.reserve(length);
    std::uniform_int_distribution<std::uint32_t> first(0, static_cast<std::uint32_t>(v - 1));
    for (int i = 0; i < spec_.order && out.size() < length; ++i) out.push_back(first(rng));
    while (out.size() < length) {
      const std::size_t ctx = spec_.order == 1 ? out.back() : out[out.size() - 2] * v + out.back();
      const double u = unit(rng);
      const auto& p = prob_[ctx];
      std::size_t k = 0;
      double acc = p[0];
      while (u >= acc && k + 1 < p.size()) acc += p[++k];
      out.push_back(next_[ctx][k]);
    }
    return out;
  }

 private:
  SyntheticSpec spec_;
  std::vector<std::vector<std::uint32_t>> next_;
  std::vector<std::vector<double>> prob_;
};

inline TokenStream synthetic_corpus(const SyntheticSpec& spec) {
  if (spec.length == 0) throw ConfigError("data.synthetic.length must be positive");
  MarkovChain chain(spec);
  TokenStream s;
  s.tokens = chain.sample(spec.length);
  s.vocab_size = spec.vocab_size;
  s.source = "synthetic(seed=" + std::to_string(spec.seed) + ",order=" + std::to_string(spec.order) +
             ",vocab=" + std::to_string(spec.vocab_size) + ",branching=" + std::to_string(spec.branching) + ")";
  return s;
}

struct Batch {
  TokenMatrix inputs;
  TokenMatrix targets;
};

/// Endless batch source over non-overlapping windows of `seq_len` input
/// tokens. Window k reads inputs [k*sl, (k+1)*sl) and targets shifted by one.
/// Window order is reshuffled every epoch from (seed, epoch); a trailing
/// partial batch is dropped.
class BatchIterator {
 public:
  BatchIterator(const TokenStream& stream, std::size_t batch_size, std::size_t seq_len, std::uint64_t seed,
                bool shuffle = true)
      : stream_(&stream), batch_size_(batch_size), seq_len_(seq_len), seed_(seed), shuffle_(shuffle) {
    if (batch_size == 0 || seq_len == 0) throw DomainError("batch size and sequence length must be positive");
    if (stream.tokens.size() < batch_size * (seq_len + 1))
      throw DomainError("stream of " + std::to_string(stream.tokens.size()) + " tokens is too short for batch " +
                        std::to_string(batch_size) + " x " + std::to_string(seq_len));
    windows_ = (stream.tokens.size() - 1) / seq_len;
    if (windows_ < batch_size) throw DomainError("stream holds fewer windows than one batch");
    start_epoch();
  }

  std::size_t windows_per_epoch() const { return windows_; }
  std::size_t batches_per_epoch() const { return windows_ / batch_size_; }

  Batch next() {
    if (cursor_ + batch_size_ > order_.size()) {
      ++epoch_;
      start_epoch();
    }
    Batch b;
    b.inputs = {batch_size_, seq_len_, {}};
    b.targets = {batch_size_, seq_len_, {}};
    b.inputs.ids.reserve(batch_size_ * seq_len_);
    b.targets.ids.reserve(batch_size_ * seq_len_);
    for (std::size_t r = 0; r < batch_size_; ++r) {
      const std::size_t start = order_[cursor_++] * seq_len_;
      const auto* t = stream_->tokens.data() + start;
      b.inputs.ids.insert(b.inputs.ids.end(), t, t + seq_len_);
      b.targets.ids.insert(b.targets.ids.end(), t + 1, t + 1 + seq_len_);
    }
    return b;
  }

 private:
  void start_epoch() {
    order_.resize(windows_);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    if (shuffle_) {
      std::mt19937_64 rng(seed_ * 0x100000001b3ULL + epoch_);
      std::shuffle(order_.begin(), order_.end(), rng);
    }
    cursor_ = 0;
  }

  const TokenStream* stream_;
  std::size_t batch_size_;
  std::size_t seq_len_;
  std::uint64_t seed_;
  bool shuffle_;
  std::size_t windows_ = 0;
  std::size_t epoch_ = 0;
  std::size_t cursor_ = 0;
  std::vector<std::size_t> order_;
};

}  // namespace rlrs

#endif  // RLRS_DATA_HPP
