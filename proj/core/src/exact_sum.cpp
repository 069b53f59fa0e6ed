// SPDX-License-Identifier: Apache-2.0
#include "dpcsi/exact_sum.hpp"

#include <cmath>

namespace dpcsi {

void ExactSum::add(double x) {
  size_t i = 0;
  for (double y : partials_) {
    if (std::fabs(x) < std::fabs(y)) std::swap(x, y);
    double hi = x + y;
    double lo = y - (hi - x);
    if (lo != 0.0) partials_[i++] = lo;
    x = hi;
  }
  partials_.resize(i);
  partials_.push_back(x);
}

double ExactSum::value() const {
  // partials are non-overlapping, increasing in magnitude; sum from the
  // largest down, then apply the round-half-to-even correction against the
  // next unconsumed partial so the total is the correctly rounded sum
  size_t n = partials_.size();
  if (n == 0) return 0.0;
  const double* p = partials_.data();
  double hi = p[--n];
  double lo = 0.0;
  while (n > 0) {
    double x = hi, y = p[--n];
    hi = x + y;
    double yr = hi - x;
    lo = y - yr;
    if (lo != 0.0) break;
  }
  if (n > 0 && ((lo < 0.0 && p[n - 1] < 0.0) || (lo > 0.0 && p[n - 1] > 0.0))) {
    double y = lo * 2.0;
    double x = hi + y;
    if (y == x - hi) hi = x;
  }
  return hi;
}

double exact_sum(const double* x, size_t n) {
  ExactSum acc;
  for (size_t i = 0; i < n; ++i) acc.add(x[i]);
  return acc.value();
}

}  // namespace dpcsi
