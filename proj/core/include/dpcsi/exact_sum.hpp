// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

namespace dpcsi {

/// Error-free accumulation via Shewchuk partials (the algorithm behind
/// Python's math.fsum). The result is the correctly rounded sum of all
/// inputs, so it is independent of accumulation order; reductions that
/// must be permutation-invariant use this.
class ExactSum {
 public:
  void add(double x);
  double value() const;
  void reset() { partials_.clear(); }

 private:
  std::vector<double> partials_;
};

double exact_sum(const double* x, size_t n);

}  // namespace dpcsi
