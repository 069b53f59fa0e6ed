// SPDX-License-Identifier: Apache-2.0
#include "dpcsi/channel.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "dpcsi/rng.hpp"

namespace dpcsi {

namespace {

constexpr double kPi = std::numbers::pi;

double wrap_2pi(double x) {
  double y = std::fmod(x, 2.0 * kPi);
  if (y < 0) y += 2.0 * kPi;
  return y;
}

}  // namespace

void ScenarioConfig::validate() const {
  if (n_paths < 1) throw std::invalid_argument("scenario: n_paths must be >= 1");
  if (phase_coupling < 0.0 || phase_coupling > 1.0)
    throw std::invalid_argument("scenario: phase_coupling must lie in [0, 1]");
  if (!(delay_spread > 0.0))
    throw std::invalid_argument("scenario: delay_spread must be positive");
  if (angle_spread < 0.0)
    throw std::invalid_argument("scenario: angle_spread must be >= 0");
  if (antenna_shadow < 0.0)
    throw std::invalid_argument("scenario: antenna_shadow must be >= 0");
  if (target_gcs && (*target_gcs <= 0.0 || *target_gcs > 1.0))
    throw std::invalid_argument("scenario: target_gcs must lie in (0, 1]");
}

ScenarioConfig scenario_preset(const std::string& name) {
  ScenarioConfig c;
  c.name = name;
  if (name == "cdla") {
    c.n_paths = 8;
    c.delay_spread = 0.10;
    c.angle_spread = 0.06;
    c.phase_coupling = 0.800412;
    c.target_gcs = 0.936;
  } else if (name == "cdlb") {
    c.n_paths = 12;
    c.delay_spread = 0.14;
    c.angle_spread = 0.10;
    c.phase_coupling = 0.410807;
    c.target_gcs = 0.869;
  } else if (name == "cdlc") {
    c.n_paths = 16;
    c.delay_spread = 0.18;
    c.angle_spread = 0.14;
    c.antenna_shadow = 1.0;
    c.phase_coupling = 0.295119;
    c.target_gcs = 0.741;
  } else if (name == "custom") {
    // caller fills the knobs
  } else {
    throw std::invalid_argument("scenario: unknown preset '" + name + "'");
  }
  return c;
}

CsiDataset generate_dataset(const ScenarioConfig& scenario, int count,
                            int n_s, int n_t, std::uint64_t seed) {
  scenario.validate();
  if (count < 0) throw std::invalid_argument("generate_dataset: count < 0");
  if (n_s < 1 || n_t < 2 || n_t % 2 != 0)
    throw std::invalid_argument(
        "generate_dataset: need n_s >= 1 and even n_t >= 2");

  const int na = n_t / 2;  // antennas per polarization
  const int P = scenario.n_paths;
  const double mu = scenario.delay_spread * static_cast<double>(n_s);
  const double kappa = scenario.phase_coupling;

  using CMatd =
      Eigen::Matrix<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic,
                    Eigen::RowMajor>;
  using CVecd = Eigen::Vector<std::complex<double>, Eigen::Dynamic>;

  CsiDataset ds;
  ds.n_s = n_s;
  ds.n_t = n_t;
  ds.scenario = scenario;
  ds.seed = seed;
  ds.samples.reserve(static_cast<std::size_t>(count));

  std::vector<double> tau(P), theta(P), phi_v(P), phi_u(P), pw(P);
  std::vector<std::complex<double>> gain_v(P), gain_u(P);
  CVecd fk(n_s), gn(na);
  const double mix = std::sqrt(std::max(0.0, 1.0 - kappa * kappa));

  for (int s = 0; s < count; ++s) {
    Rng rng(substream(seed, "data", static_cast<std::uint64_t>(s)));
    const double theta_c = (rng.uniform01() * 2.0 - 1.0) * (60.0 * kPi / 180.0);

    // One fixed draw order per path keeps samples comparable across kappa.
    double psum = 0.0;
    for (int p = 0; p < P; ++p) {
      tau[p] = -mu * std::log(1.0 - rng.uniform01());
      theta[p] = theta_c + scenario.angle_spread * rng.normal();
      gain_v[p] = rng.cnormal();
      gain_u[p] = rng.cnormal();
      phi_v[p] = rng.uniform01() * 2.0 * kPi;
      phi_u[p] = rng.uniform01() * 2.0 * kPi;
      pw[p] = std::exp(-tau[p] / mu);
      psum += pw[p];
    }

    CMatd hv = CMatd::Zero(n_s, na);
    CMatd hh = CMatd::Zero(n_s, na);
    for (int p = 0; p < P; ++p) {
      const double w = std::sqrt(pw[p] / psum);
      const std::complex<double> a_v = gain_v[p] * w;
      // Correlation-kappa mixing keeps the CN(0,1) marginal of the gain.
      const std::complex<double> a_h =
          (kappa * gain_v[p] + mix * gain_u[p]) * w;
      for (int k = 0; k < n_s; ++k)
        fk(k) = std::polar(1.0, -2.0 * kPi * k * tau[p] / n_s);
      const double st = std::sin(theta[p]);
      for (int n = 0; n < na; ++n) gn(n) = std::polar(1.0, -kPi * n * st);

      const double ph = wrap_2pi(kappa * phi_v[p] + (1.0 - kappa) * phi_u[p]);
      const CMatd base = fk * gn.transpose();
      hv.noalias() += (a_v * std::polar(1.0, phi_v[p])) * base;
      hh.noalias() += (a_h * std::polar(1.0, ph)) * base;
    }

    // Per-antenna power ripple, drawn with the same kappa coupling. This is
    // what separates the polarizations' magnitude profiles once the phase
    // randomness alone has bottomed out.
    if (scenario.antenna_shadow > 0.0) {
      const double sa = scenario.antenna_shadow;
      for (int n = 0; n < na; ++n) {
        const double xv = rng.normal();
        const double xu = rng.normal();
        const double xh = kappa * xv + mix * xu;
        hv.col(n) *= std::exp(0.5 * (sa * xv - 0.5 * sa * sa));
        hh.col(n) *= std::exp(0.5 * (sa * xh - 0.5 * sa * sa));
      }
    }

    // Unit mean power per complex entry across both polarizations.
    const double pnorm =
        std::sqrt((hv.squaredNorm() + hh.squaredNorm()) /
                  static_cast<double>(n_s * n_t));
    if (pnorm > 0.0) {
      hv /= pnorm;
      hh /= pnorm;
    }

    CsiPair pair;
    pair.h_v = hv.cast<std::complex<float>>();
    pair.h_h = hh.cast<std::complex<float>>();
    ds.samples.push_back(std::move(pair));
  }
  return ds;
}

NormScaler fit_normalizer(const CsiDataset& ds) {
  if (ds.samples.empty())
    throw std::invalid_argument("fit_normalizer: empty dataset");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  auto scan = [&](const CMat& m) {
    const auto* p = m.data();
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      lo = std::min({lo, static_cast<double>(p[i].real()),
                     static_cast<double>(p[i].imag())});
      hi = std::max({hi, static_cast<double>(p[i].real()),
                     static_cast<double>(p[i].imag())});
    }
  };
  for (const auto& s : ds.samples) {
    scan(s.h_v);
    scan(s.h_h);
  }
  if (!(hi > lo))
    throw numeric_error("fit_normalizer: degenerate value range");
  return NormScaler{lo, hi};
}

NormalizeResult apply_normalizer(const CsiDataset& ds, const NormScaler& s) {
  if (ds.scaler)
    throw std::invalid_argument("apply_normalizer: dataset already normalized");
  if (!(s.hi > s.lo))
    throw std::invalid_argument("apply_normalizer: invalid scaler range");
  NormalizeResult res;
  res.data = ds;
  res.data.scaler = s;
  const double span = s.hi - s.lo;
  auto map1 = [&](double x) {
    if (x < s.lo) {
      ++res.clamped;
      return 0.0;
    }
    if (x > s.hi) {
      ++res.clamped;
      return 1.0;
    }
    return (x - s.lo) / span;
  };
  for (auto& smp : res.data.samples) {
    for (CMat* m : {&smp.h_v, &smp.h_h}) {
      auto* p = m->data();
      for (Eigen::Index i = 0; i < m->size(); ++i)
        p[i] = std::complex<float>(
            static_cast<float>(map1(p[i].real())),
            static_cast<float>(map1(p[i].imag())));
    }
  }
  return res;
}

CsiDataset invert_normalizer(const CsiDataset& ds) {
  if (!ds.scaler)
    throw std::invalid_argument("invert_normalizer: dataset is not normalized");
  CsiDataset out = ds;
  const double lo = ds.scaler->lo;
  const double span = ds.scaler->hi - ds.scaler->lo;
  out.scaler.reset();
  for (auto& smp : out.samples) {
    for (CMat* m : {&smp.h_v, &smp.h_h}) {
      auto* p = m->data();
      for (Eigen::Index i = 0; i < m->size(); ++i)
        p[i] = std::complex<float>(
            static_cast<float>(p[i].real() * span + lo),
            static_cast<float>(p[i].imag() * span + lo));
    }
  }
  return out;
}

template <typename T>
void pair_to_maps(const CsiPair& p, T* v_dst, T* h_dst) {
  const Eigen::Index n = p.h_v.size();
  const auto* pv = p.h_v.data();
  const auto* ph = p.h_h.data();
  for (Eigen::Index i = 0; i < n; ++i) {
    v_dst[i] = static_cast<T>(pv[i].real());
    v_dst[n + i] = static_cast<T>(pv[i].imag());
    h_dst[i] = static_cast<T>(ph[i].real());
    h_dst[n + i] = static_cast<T>(ph[i].imag());
  }
}

template <typename T>
Tensor<T> maps_from_dataset(const CsiDataset& ds, const std::vector<int>& idx,
                            bool horizontal) {
  const std::int64_t b = static_cast<std::int64_t>(idx.size());
  const std::int64_t plane = static_cast<std::int64_t>(ds.n_s) * (ds.n_t / 2);
  Tensor<T> out({b, 2, ds.n_s, ds.n_t / 2});
  std::vector<T> scratch(static_cast<std::size_t>(2 * plane));
  for (std::int64_t i = 0; i < b; ++i) {
    const auto& smp = ds.samples.at(static_cast<std::size_t>(idx[i]));
    T* dst = out.data() + i * 2 * plane;
    if (horizontal)
      pair_to_maps<T>(smp, scratch.data(), dst);
    else
      pair_to_maps<T>(smp, dst, scratch.data());
  }
  return out;
}

template <typename T>
CsiPair maps_to_pair(const T* v_src, const T* h_src, int n_s, int n_t) {
  const int na = n_t / 2;
  const Eigen::Index n = static_cast<Eigen::Index>(n_s) * na;
  CsiPair p;
  p.h_v.resize(n_s, na);
  p.h_h.resize(n_s, na);
  auto* pv = p.h_v.data();
  auto* ph = p.h_h.data();
  for (Eigen::Index i = 0; i < n; ++i) {
    pv[i] = std::complex<float>(static_cast<float>(v_src[i]),
                                static_cast<float>(v_src[n + i]));
    ph[i] = std::complex<float>(static_cast<float>(h_src[i]),
                                static_cast<float>(h_src[n + i]));
  }
  return p;
}

template void pair_to_maps<float>(const CsiPair&, float*, float*);
template void pair_to_maps<double>(const CsiPair&, double*, double*);
template Tensor<float> maps_from_dataset<float>(const CsiDataset&,
                                                const std::vector<int>&, bool);
template Tensor<double> maps_from_dataset<double>(const CsiDataset&,
                                                  const std::vector<int>&,
                                                  bool);
template CsiPair maps_to_pair<float>(const float*, const float*, int, int);
template CsiPair maps_to_pair<double>(const double*, const double*, int, int);

}  // namespace dpcsi
