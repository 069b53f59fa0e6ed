// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <complex>
#include <cstdint>
#include <string_view>

namespace dpcsi {

/// splitmix64 finalizer; bijective 64-bit mix.
uint64_t mix64(uint64_t x);

/// Deterministic PRNG with explicit sampling transforms so streams are
/// bit-stable across platforms and standard-library versions.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64();
  double uniform01();  // [0, 1)
  double uniform(double a, double b);
  double normal();  // standard normal, Box-Muller
  std::complex<double> cnormal();  // circular CN(0, 1)
  uint32_t uniform_int(uint32_t n);  // [0, n)

 private:
  uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Named sub-stream derivation: one run seed fans out into independent
/// streams ("data", "init", ...) and per-index streams within each, so
/// per-sample work is schedule-independent.
uint64_t substream(uint64_t seed, std::string_view label);
uint64_t substream(uint64_t seed, std::string_view label, uint64_t index);

}  // namespace dpcsi
