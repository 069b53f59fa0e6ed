// SPDX-License-Identifier: Apache-2.0
#include "dpcsi/rng.hpp"

#include <cmath>

namespace dpcsi {

uint64_t mix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

uint64_t Rng::next_u64() {
  state_ += 0x9E3779B97F4A7C15ull;
  uint64_t z = state_;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

double Rng::uniform01() {
  // 53 mantissa bits
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double a, double b) { return a + (b - a) * uniform01(); }

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform01(), u2 = uniform01();
  while (u1 <= 0.0) u1 = uniform01();
  double r = std::sqrt(-2.0 * std::log(u1));
  double t = 6.283185307179586476925286766559 * u2;
  spare_ = r * std::sin(t);
  has_spare_ = true;
  return r * std::cos(t);
}

std::complex<double> Rng::cnormal() {
  double re = normal(), im = normal();
  return {re * 0.7071067811865475244, im * 0.7071067811865475244};
}

uint32_t Rng::uniform_int(uint32_t n) {
  // rejection-free Lemire reduction is overkill here; modulo bias is
  // negligible for the n used (shuffles over <= 1e6) but we reject anyway
  // to keep streams exactly uniform.
  if (n == 0) return 0;
  uint64_t threshold = (~uint64_t{0} - n + 1) % n;
  for (;;) {
    uint64_t r = next_u64();
    if (r >= threshold) return static_cast<uint32_t>(r % n);
  }
}

static uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

uint64_t substream(uint64_t seed, std::string_view label) {
  return mix64(seed ^ fnv1a64(label));
}

uint64_t substream(uint64_t seed, std::string_view label, uint64_t index) {
  return mix64(substream(seed, label) ^ mix64(index));
}

}  // namespace dpcsi
