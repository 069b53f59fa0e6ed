// SPDX-License-Identifier: Apache-2.0
#include "dpcsi/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/Eigenvalues>

namespace dpcsi {

double nmse_linear(const CsiPair& rec, const CsiPair& truth) {
  if (rec.h_v.rows() != truth.h_v.rows() || rec.h_v.cols() != truth.h_v.cols() ||
      rec.h_h.rows() != truth.h_h.rows() || rec.h_h.cols() != truth.h_h.cols())
    throw shape_error("nmse: shape mismatch between recovery and truth");
  auto ratio = [](const CMat& a, const CMat& b, const char* pol) {
    double num = 0.0, den = 0.0;
    const auto* pa = a.data();
    const auto* pb = b.data();
    for (Eigen::Index i = 0; i < a.size(); ++i) {
      const std::complex<double> d =
          std::complex<double>(pa[i]) - std::complex<double>(pb[i]);
      num += std::norm(d);
      den += std::norm(std::complex<double>(pb[i]));
    }
    if (den == 0.0)
      throw std::domain_error(std::string("nmse: zero-norm truth in ") + pol +
                              " polarization");
    return num / den;
  };
  return 0.5 * (ratio(rec.h_v, truth.h_v, "first") +
                ratio(rec.h_h, truth.h_h, "second"));
}

double nmse_db_from_linear(double linear) {
  if (linear < 0.0)
    throw std::invalid_argument("nmse: negative linear value");
  if (linear == 0.0) return kNmseFloorDb;
  return std::max(kNmseFloorDb, 10.0 * std::log10(linear));
}

std::vector<double> nmse_per_sample_db(const std::vector<CsiPair>& rec,
                                       const std::vector<CsiPair>& truth) {
  if (rec.size() != truth.size())
    throw std::invalid_argument("nmse: sample counts differ");
  std::vector<double> out(rec.size());
  for (std::size_t i = 0; i < rec.size(); ++i)
    out[i] = nmse_db_from_linear(nmse_linear(rec[i], truth[i]));
  return out;
}

double nmse_db(const std::vector<CsiPair>& rec,
               const std::vector<CsiPair>& truth) {
  if (rec.size() != truth.size())
    throw std::invalid_argument("nmse: sample counts differ");
  if (rec.empty()) throw std::invalid_argument("nmse: empty sample set");
  double acc = 0.0;
  for (std::size_t i = 0; i < rec.size(); ++i)
    acc += nmse_linear(rec[i], truth[i]);
  return nmse_db_from_linear(acc / static_cast<double>(rec.size()));
}

std::vector<CdfPoint> nmse_cdf(std::vector<double> per_sample_db) {
  if (per_sample_db.empty())
    throw std::invalid_argument("nmse_cdf: empty sample set");
  std::sort(per_sample_db.begin(), per_sample_db.end());
  const double n = static_cast<double>(per_sample_db.size());
  std::vector<CdfPoint> out;
  for (std::size_t i = 0; i < per_sample_db.size(); ++i) {
    const double frac = static_cast<double>(i + 1) / n;
    if (!out.empty() && out.back().value_db == per_sample_db[i])
      out.back().fraction = frac;  // keep the right-continuous step height
    else
      out.push_back({per_sample_db[i], frac});
  }
  return out;
}

std::vector<CsiPair> reconstruct(CsiAutoencoder<float>& model,
                                 const CsiDataset& normalized, int chunk) {
  if (!normalized.scaler)
    throw std::invalid_argument("reconstruct: dataset is not normalized");
  if (chunk < 1) throw std::invalid_argument("reconstruct: chunk must be >= 1");
  const auto& cfg = model.config();
  if (normalized.n_s != cfg.n_s || normalized.n_t != cfg.n_t)
    throw std::invalid_argument("reconstruct: dataset grid mismatch");

  const std::int64_t n = static_cast<std::int64_t>(normalized.size());
  const int na = cfg.n_t / 2;
  const std::int64_t plane = static_cast<std::int64_t>(cfg.n_s) * na;
  const double lo = normalized.scaler->lo;
  const double span = normalized.scaler->hi - normalized.scaler->lo;

  std::vector<CsiPair> out;
  out.reserve(static_cast<std::size_t>(n));
  ag::NoGradGuard ng;
  for (std::int64_t c0 = 0; c0 < n; c0 += chunk) {
    const std::int64_t cn = std::min<std::int64_t>(chunk, n - c0);
    std::vector<int> idx(static_cast<std::size_t>(cn));
    for (std::int64_t i = 0; i < cn; ++i)
      idx[static_cast<std::size_t>(i)] = static_cast<int>(c0 + i);
    auto hv = ag::make_const(maps_from_dataset<float>(normalized, idx, false));
    auto hh = ag::make_const(maps_from_dataset<float>(normalized, idx, true));
    auto fwd = model.forward(hv, hh, ag::BnMode::Eval);

    for (std::int64_t i = 0; i < cn; ++i) {
      const float* pv = fwd.rec_v->value.data() + i * 2 * plane;
      const float* ph = fwd.rec_h->value.data() + i * 2 * plane;
      CsiPair p;
      p.h_v.resize(cfg.n_s, na);
      p.h_h.resize(cfg.n_s, na);
      for (std::int64_t e = 0; e < plane; ++e) {
        p.h_v.data()[e] = std::complex<float>(
            static_cast<float>(pv[e] * span + lo),
            static_cast<float>(pv[plane + e] * span + lo));
        p.h_h.data()[e] = std::complex<float>(
            static_cast<float>(ph[e] * span + lo),
            static_cast<float>(ph[plane + e] * span + lo));
      }
      out.push_back(std::move(p));
    }
  }
  return out;
}

DrMpParts dr_mp_transform(const CsiPair& p) {
  const Eigen::Index r = p.h_v.rows(), c = p.h_v.cols();
  DrMpParts out;
  out.shared.resize(r, c);
  out.phase_v.resize(r, c);
  out.phase_h.resize(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) {
      const std::complex<double> v(p.h_v(i, j));
      const std::complex<double> h(p.h_h(i, j));
      out.shared(i, j) = 0.5 * (std::abs(v) + std::abs(h));
      out.phase_v(i, j) = std::arg(v);
      out.phase_h(i, j) = std::arg(h);
    }
  return out;
}

CsiPair dr_mp_inverse(const DrMpParts& parts) {
  const Eigen::Index r = parts.shared.rows(), c = parts.shared.cols();
  CsiPair out;
  out.h_v.resize(r, c);
  out.h_h.resize(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) {
      out.h_v(i, j) = static_cast<std::complex<float>>(
          std::polar(parts.shared(i, j), parts.phase_v(i, j)));
      out.h_h(i, j) = static_cast<std::complex<float>>(
          std::polar(parts.shared(i, j), parts.phase_h(i, j)));
    }
  return out;
}

DrAsParts dr_as_transform(const CsiPair& p) {
  const int n_s = static_cast<int>(p.h_v.rows());
  const int na = static_cast<int>(p.h_v.cols());
  DrAsParts out;
  out.shared = Tensor<float>({4, n_s, na});
  out.sign = Tensor<float>({4, n_s, na});
  const std::int64_t plane = static_cast<std::int64_t>(n_s) * na;
  auto fill = [&](const CMat& m, std::int64_t ch) {
    const auto* src = m.data();
    for (std::int64_t e = 0; e < plane; ++e) {
      const float re = src[e].real(), im = src[e].imag();
      out.shared[ch * plane + e] = std::fabs(re);
      out.shared[(ch + 1) * plane + e] = std::fabs(im);
      out.sign[ch * plane + e] = re < 0.0f ? -1.0f : 1.0f;
      out.sign[(ch + 1) * plane + e] = im < 0.0f ? -1.0f : 1.0f;
    }
  };
  fill(p.h_v, 0);
  fill(p.h_h, 2);
  return out;
}

CsiPair dr_as_inverse(const DrAsParts& parts) {
  const auto& s = parts.shared.shape();
  if (s.size() != 3 || s[0] != 4 || !parts.sign.same_shape(parts.shared))
    throw shape_error("dr_as_inverse: expected matching [4, n_s, n_t/2] parts");
  const int n_s = static_cast<int>(s[1]);
  const int na = static_cast<int>(s[2]);
  const std::int64_t plane = static_cast<std::int64_t>(n_s) * na;
  CsiPair out;
  out.h_v.resize(n_s, na);
  out.h_h.resize(n_s, na);
  auto emit = [&](CMat& m, std::int64_t ch) {
    auto* dst = m.data();
    for (std::int64_t e = 0; e < plane; ++e)
      dst[e] = std::complex<float>(
          parts.shared[ch * plane + e] * parts.sign[ch * plane + e],
          parts.shared[(ch + 1) * plane + e] * parts.sign[(ch + 1) * plane + e]);
  };
  emit(out.h_v, 0);
  emit(out.h_h, 2);
  return out;
}

int baseline_rank_per_pol(int n_s, int n_t, const Rational& sigma) {
  const Rational r =
      Rational(n_s) * Rational(n_t) / sigma;
  const long long k = rat_round_half_down(r);
  return static_cast<int>(std::max<long long>(1, k));
}

LinearBaseline LinearBaseline::fit(const CsiDataset& train_denorm,
                                   int rank_per_pol) {
  if (train_denorm.scaler)
    throw std::invalid_argument("baseline: expected a denormalized dataset");
  const std::int64_t n = static_cast<std::int64_t>(train_denorm.size());
  if (n < 2) throw std::invalid_argument("baseline: need at least two samples");
  LinearBaseline b;
  b.n_s_ = train_denorm.n_s;
  b.n_t_ = train_denorm.n_t;
  const std::int64_t dim =
      static_cast<std::int64_t>(train_denorm.n_s) * train_denorm.n_t;
  b.rank_ = static_cast<int>(
      std::clamp<std::int64_t>(rank_per_pol, 1, dim));

  Eigen::MatrixXd xv(n, dim), xh(n, dim);
  std::vector<double> scratch_v(static_cast<std::size_t>(dim)),
      scratch_h(static_cast<std::size_t>(dim));
  for (std::int64_t i = 0; i < n; ++i) {
    pair_to_maps<double>(train_denorm.samples[static_cast<std::size_t>(i)],
                         scratch_v.data(), scratch_h.data());
    for (std::int64_t k = 0; k < dim; ++k) {
      xv(i, k) = scratch_v[static_cast<std::size_t>(k)];
      xh(i, k) = scratch_h[static_cast<std::size_t>(k)];
    }
  }

  auto solve = [&](Eigen::MatrixXd& x, Eigen::VectorXd& mean,
                   Eigen::MatrixXd& basis) {
    mean = x.colwise().mean();
    x.rowwise() -= mean.transpose();
    const Eigen::MatrixXd cov =
        (x.transpose() * x) / static_cast<double>(n - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    if (eig.info() != Eigen::Success)
      throw numeric_error("baseline: eigendecomposition failed");
    basis = eig.eigenvectors().rightCols(b.rank_);
  };
  solve(xv, b.mean_v_, b.basis_v_);
  solve(xh, b.mean_h_, b.basis_h_);
  return b;
}

CsiPair LinearBaseline::codec(const CsiPair& p) const {
  const std::int64_t dim = static_cast<std::int64_t>(n_s_) * n_t_;
  std::vector<double> v(static_cast<std::size_t>(dim)),
      h(static_cast<std::size_t>(dim));
  pair_to_maps<double>(p, v.data(), h.data());
  Eigen::Map<Eigen::VectorXd> mv(v.data(), dim), mh(h.data(), dim);
  const Eigen::VectorXd rv =
      mean_v_ + basis_v_ * (basis_v_.transpose() * (mv - mean_v_));
  const Eigen::VectorXd rh =
      mean_h_ + basis_h_ * (basis_h_.transpose() * (mh - mean_h_));
  return maps_to_pair<double>(rv.data(), rh.data(), n_s_, n_t_);
}

std::vector<CsiPair> LinearBaseline::codec_all(
    const std::vector<CsiPair>& in) const {
  std::vector<CsiPair> out;
  out.reserve(in.size());
  for (const auto& p : in) out.push_back(codec(p));
  return out;
}

}  // namespace dpcsi
