// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include <boost/rational.hpp>

namespace dpcsi {

/// Exact rational arithmetic for dimension and bit-budget formulas.
using Rational = boost::rational<long long>;

/// File and serialization failures, with a machine-checkable kind.
enum class io_errc { bad_magic, truncated, bad_dims, bad_value, io_fail };

class io_error : public std::runtime_error {
 public:
  io_error(io_errc kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  io_errc kind() const noexcept { return kind_; }

 private:
  io_errc kind_;
};

/// Shape or wiring failures; the message names the offending layer.
class shape_error : public std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Numeric failures (non-finite activations, degenerate inputs).
class numeric_error : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

long long floor_div(long long a, long long b);
long long rat_floor(const Rational& r);
long long rat_ceil(const Rational& r);

/// Round to the nearest integer, ties toward the floor.
long long rat_round_half_down(const Rational& r);

double rat_to_double(const Rational& r);

/// Parses "8", "-3", "10.5", or "8/3".
Rational rat_parse(const std::string& s);

/// Canonical text form, "n" or "n/d".
std::string rat_to_string(const Rational& r);

}  // namespace dpcsi
