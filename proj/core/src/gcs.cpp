// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>

#include "dpcsi/channel.hpp"

namespace dpcsi {

namespace {

[[noreturn]] void zero_row(const char* side, Eigen::Index k) {
  throw std::domain_error("gcs: zero-norm subband row " + std::to_string(k) +
                          " in " + side + " argument");
}

}  // namespace

double gcs(const CMat& a, const CMat& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("gcs: shape mismatch");
  if (a.rows() == 0 || a.cols() == 0)
    throw std::invalid_argument("gcs: empty matrix");
  double acc = 0.0;
  for (Eigen::Index k = 0; k < a.rows(); ++k) {
    std::complex<double> dot(0.0, 0.0);
    double na = 0.0, nb = 0.0;
    for (Eigen::Index n = 0; n < a.cols(); ++n) {
      const std::complex<double> av(a(k, n));
      const std::complex<double> bv(b(k, n));
      dot += std::conj(av) * bv;
      na += std::norm(av);
      nb += std::norm(bv);
    }
    if (na == 0.0) zero_row("first", k);
    if (nb == 0.0) zero_row("second", k);
    acc += std::abs(dot) / std::sqrt(na * nb);
  }
  return acc / static_cast<double>(a.rows());
}

double gcs_real(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("gcs: shape mismatch");
  if (a.rows() == 0 || a.cols() == 0)
    throw std::invalid_argument("gcs: empty matrix");
  double acc = 0.0;
  for (Eigen::Index k = 0; k < a.rows(); ++k) {
    const double na = a.row(k).squaredNorm();
    const double nb = b.row(k).squaredNorm();
    if (na == 0.0) zero_row("first", k);
    if (nb == 0.0) zero_row("second", k);
    acc += std::abs(a.row(k).dot(b.row(k))) / std::sqrt(na * nb);
  }
  return acc / static_cast<double>(a.rows());
}

GcsProfile gcs_profile(const CsiPair& p) {
  GcsProfile out;
  out.original = gcs(p.h_v, p.h_h);

  const Eigen::Index r = p.h_v.rows(), c = p.h_v.cols();
  Eigen::MatrixXd av(r, c), bv(r, c);

  auto fill = [&](auto&& f) {
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index j = 0; j < c; ++j) {
        av(i, j) = f(std::complex<double>(p.h_v(i, j)));
        bv(i, j) = f(std::complex<double>(p.h_h(i, j)));
      }
  };

  fill([](std::complex<double> z) { return z.real(); });
  out.real_part = gcs_real(av, bv);
  fill([](std::complex<double> z) { return z.imag(); });
  out.imag_part = gcs_real(av, bv);
  fill([](std::complex<double> z) { return std::abs(z); });
  out.magnitude = gcs_real(av, bv);
  fill([](std::complex<double> z) { return std::arg(z); });
  out.phase = gcs_real(av, bv);
  return out;
}

}  // namespace dpcsi
