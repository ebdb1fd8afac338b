#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace enot {

// SplitMix64 finalizer; bijective mixing of a 64-bit word.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) { return mix64(a ^ mix64(b)); }

// Sequential generator for sampling data batches and random matrices.
// Counts how many variates it has handed out.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(mix64(seed)) {}

  double normal() {
    ++draws_;
    return normal_(engine_);
  }
  double uniform() {
    ++draws_;
    return uniform_(engine_);
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::uint64_t next_u64() {
    ++draws_;
    return engine_();
  }

  // Independent child stream keyed by `stream`; does not advance this generator.
  Rng fork(std::uint64_t stream) const { return Rng(hash_combine(seed_, stream)); }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t draws() const { return draws_; }

 private:
  std::uint64_t seed_;
  std::uint64_t draws_ = 0;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

// Counter-based Gaussian noise: the variate for (key, counter) is a pure
// function of both, so SDE increments for a given sample and step do not
// depend on how the batch is partitioned or in which order it is simulated.
class CounterNormal {
 public:
  explicit CounterNormal(std::uint64_t key) : key_(key) {}

  double operator()(std::uint64_t counter) const {
    std::uint64_t a = hash_combine(key_, 2 * counter);
    std::uint64_t b = hash_combine(key_, 2 * counter + 1);
    // 53-bit uniforms in (0,1] and [0,1).
    double u1 = (static_cast<double>(a >> 11) + 1.0) * 0x1.0p-53;
    double u2 = static_cast<double>(b >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t key() const { return key_; }

 private:
  std::uint64_t key_;
};

}  // namespace enot
