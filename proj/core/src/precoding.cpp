// SPDX-License-Identifier: Apache-2.0
#include "dpcsi/evalkit.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/Cholesky>

namespace dpcsi {

ZfResult zf_precode(const Eigen::MatrixXcd& h_users) {
  const Eigen::Index k = h_users.rows();
  const Eigen::Index n_t = h_users.cols();
  if (k < 1 || n_t < 1)
    throw std::invalid_argument("zf_precode: empty channel matrix");
  if (k > n_t)
    throw std::invalid_argument("zf_precode: more users than antennas");

  ZfResult out;
  out.regularized = false;
  const Eigen::MatrixXcd gram = h_users * h_users.adjoint();
  Eigen::LLT<Eigen::MatrixXcd> llt(gram);
  Eigen::MatrixXcd inv_rows;
  if (llt.info() == Eigen::Success) {
    inv_rows = llt.solve(Eigen::MatrixXcd::Identity(k, k));
    if (!inv_rows.allFinite()) out.regularized = true;
  } else {
    out.regularized = true;
  }
  if (out.regularized) {
    const Eigen::MatrixXcd ridged =
        gram + 1e-9 * Eigen::MatrixXcd::Identity(k, k);
    Eigen::LDLT<Eigen::MatrixXcd> ldlt(ridged);
    inv_rows = ldlt.solve(Eigen::MatrixXcd::Identity(k, k));
  }
  out.v = h_users.adjoint() * inv_rows;
  for (Eigen::Index c = 0; c < k; ++c) {
    const double nrm = out.v.col(c).norm();
    if (nrm > 0.0) out.v.col(c) /= nrm;
  }
  return out;
}

double achievable_rate(const Eigen::MatrixXcd& h_true,
                       const Eigen::MatrixXcd& v, double snr_linear) {
  const Eigen::Index k = h_true.rows();
  if (v.cols() != k || v.rows() != h_true.cols())
    throw shape_error("achievable_rate: precoder shape mismatch");
  if (snr_linear < 0.0)
    throw std::invalid_argument("achievable_rate: negative transmit power");
  const double per_user = snr_linear / static_cast<double>(k);
  double acc = 0.0;
  for (Eigen::Index u = 0; u < k; ++u) {
    double sig = 0.0, interf = 0.0;
    for (Eigen::Index c = 0; c < k; ++c) {
      const double g = std::norm(h_true.row(u).dot(v.col(c)));
      if (c == u)
        sig = per_user * g;
      else
        interf += per_user * g;
    }
    acc += std::log2(1.0 + sig / (interf + 1.0));
  }
  return acc / static_cast<double>(k);
}

RateTable rate_experiment(const std::vector<CsiPair>& truth,
                          const std::vector<CsiPair>& recovered,
                          int users, const std::vector<double>& snr_db,
                          int trials, std::uint64_t seed) {
  if (truth.size() != recovered.size())
    throw std::invalid_argument("rate_experiment: sample counts differ");
  if (users < 1) throw std::invalid_argument("rate_experiment: users < 1");
  if (truth.size() < static_cast<std::size_t>(users))
    throw std::invalid_argument("rate_experiment: not enough samples");
  if (trials < 1) throw std::invalid_argument("rate_experiment: trials < 1");
  if (snr_db.empty())
    throw std::invalid_argument("rate_experiment: empty snr grid");

  const int n_s = static_cast<int>(truth[0].h_v.rows());
  const int na = static_cast<int>(truth[0].h_v.cols());
  const int n_t = 2 * na;  // stacked dual-polarized transmit dimension
  const std::uint32_t n = static_cast<std::uint32_t>(truth.size());

  RateTable table;
  table.snr_db = snr_db;
  table.perfect.assign(snr_db.size(), 0.0);
  table.recovered.assign(snr_db.size(), 0.0);
  table.regularized_solves = 0;

  Rng rng(substream(seed, "rate"));
  std::vector<std::uint32_t> pick(static_cast<std::size_t>(users));
  Eigen::MatrixXcd ht(users, n_t), hr(users, n_t);
  const std::int64_t total =
      static_cast<std::int64_t>(trials) * n_s;

  for (int t = 0; t < trials; ++t) {
    for (int u = 0; u < users; ++u) {
      bool fresh = false;
      while (!fresh) {
        pick[static_cast<std::size_t>(u)] = rng.uniform_int(n);
        fresh = true;
        for (int w = 0; w < u; ++w)
          if (pick[static_cast<std::size_t>(w)] ==
              pick[static_cast<std::size_t>(u)])
            fresh = false;
      }
    }
    for (int s = 0; s < n_s; ++s) {
      for (int u = 0; u < users; ++u) {
        const auto& pt = truth[pick[static_cast<std::size_t>(u)]];
        const auto& pr = recovered[pick[static_cast<std::size_t>(u)]];
        for (int a = 0; a < na; ++a) {
          ht(u, a) = std::complex<double>(pt.h_v(s, a));
          ht(u, na + a) = std::complex<double>(pt.h_h(s, a));
          hr(u, a) = std::complex<double>(pr.h_v(s, a));
          hr(u, na + a) = std::complex<double>(pr.h_h(s, a));
        }
      }
      const ZfResult zp = zf_precode(ht);
      const ZfResult zr = zf_precode(hr);
      if (zp.regularized || zr.regularized) ++table.regularized_solves;
      for (std::size_t q = 0; q < snr_db.size(); ++q) {
        const double snr = std::pow(10.0, snr_db[q] / 10.0);
        table.perfect[q] += achievable_rate(ht, zp.v, snr);
        table.recovered[q] += achievable_rate(ht, zr.v, snr);
      }
    }
  }
  for (std::size_t q = 0; q < snr_db.size(); ++q) {
    table.perfect[q] /= static_cast<double>(total);
    table.recovered[q] /= static_cast<double>(total);
  }
  return table;
}

}  // namespace dpcsi
