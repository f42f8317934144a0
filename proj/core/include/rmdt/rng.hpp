// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace rmdt {

/// Deterministic random stream. All draws are derived from mt19937_64 with
/// explicit float/normal construction so that a given seed reproduces the
/// same sequence on every run. Never use std::*_distribution here: their
/// output is implementation-defined.
class Rng {
 public:
  Rng() : Rng(0) {}
  explicit Rng(uint64_t seed) : gen_(seed), seed_(seed) {}

  uint64_t next_u64() { return gen_(); }

  /// Uniform double in [0, 1), 53-bit resolution.
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi] via rejection sampling.
  int64_t uniform_int(int64_t lo, int64_t hi);

  /// Box-Muller normal with cached spare.
  double normal(double mean = 0.0, double stddev = 1.0);

  /// Derive an independent child stream. Mixing is splitmix64-style so
  /// nearby stream ids do not correlate.
  Rng split(uint64_t stream_id) const;

  uint64_t seed() const { return seed_; }

  /// Fisher-Yates shuffle driven by this stream.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(0, static_cast<int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

  /// Engine state as text, for checkpointing. Round-trips exactly.
  std::string save_state() const;
  void load_state(const std::string& state);

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
  uint64_t seed_ = 0;
};

/// Stateless seed derivation, same mixing as Rng::split. Used wherever a
/// family of independent seeds must be reproducible from a base seed (one
/// per episode, per epoch, ...).
uint64_t derive_seed(uint64_t base, uint64_t stream_id);

}  // namespace rmdt
