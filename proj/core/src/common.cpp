// SPDX-License-Identifier: Apache-2.0
#include "dpcsi/common.hpp"

#include <cmath>
#include <cstdlib>

namespace dpcsi {

long long floor_div(long long a, long long b) {
  long long q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

long long rat_floor(const Rational& r) {
  return floor_div(r.numerator(), r.denominator());
}

long long rat_ceil(const Rational& r) {
  return -floor_div(-r.numerator(), r.denominator());
}

long long rat_round_half_down(const Rational& r) {
  // nearest integer, 0.5 resolves downward: ceil(r - 1/2)
  return rat_ceil(r - Rational(1, 2));
}

double rat_to_double(const Rational& r) {
  return static_cast<double>(r.numerator()) /
         static_cast<double>(r.denominator());
}

Rational rat_parse(const std::string& s) {
  if (s.empty()) throw std::invalid_argument("rat_parse: empty string");
  auto slash = s.find('/');
  if (slash != std::string::npos) {
    long long n = std::stoll(s.substr(0, slash));
    long long d = std::stoll(s.substr(slash + 1));
    if (d == 0) throw std::invalid_argument("rat_parse: zero denominator");
    return Rational(n, d);
  }
  auto dot = s.find('.');
  if (dot == std::string::npos) return Rational(std::stoll(s));
  std::string ip = s.substr(0, dot), fp = s.substr(dot + 1);
  if (fp.size() > 15) fp = fp.substr(0, 15);
  bool neg = !ip.empty() && ip[0] == '-';
  long long whole = ip.empty() || ip == "-" ? 0 : std::stoll(ip);
  long long den = 1;
  for (size_t i = 0; i < fp.size(); ++i) den *= 10;
  long long frac = fp.empty() ? 0 : std::stoll(fp);
  Rational mag(std::llabs(whole) * den + frac, den);
  return neg ? -mag : mag;
}

std::string rat_to_string(const Rational& r) {
  if (r.denominator() == 1) return std::to_string(r.numerator());
  return std::to_string(r.numerator()) + "/" + std::to_string(r.denominator());
}

}  // namespace dpcsi
