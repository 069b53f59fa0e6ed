// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <complex>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "dpcsi/common.hpp"
#include "dpcsi/tensor.hpp"

namespace dpcsi {

// Complex channel matrix, subbands along rows, antennas along columns.
using CMat = Eigen::Matrix<std::complex<float>, Eigen::Dynamic, Eigen::Dynamic,
                           Eigen::RowMajor>;

// Clustered multipath scenario knobs. phase_coupling is the kappa coupling
// coefficient between the two polarizations' per-path randomness (complex
// gains and phase offsets): 1 makes both polarizations identical, 0 makes
// them independent.
struct ScenarioConfig {
  std::string name = "custom";
  int n_paths = 8;
  double phase_coupling = 1.0;
  double delay_spread = 0.10;   // mean path delay, in units of subband periods
  double angle_spread = 0.08;   // radians around the cluster center
  double antenna_shadow = 0.0;  // lognormal sigma of per-antenna power ripple
  std::optional<double> target_gcs;

  void validate() const;
};

// Named presets with phase_coupling calibrated against a magnitude-GCS
// target. Unknown names raise std::invalid_argument.
ScenarioConfig scenario_preset(const std::string& name);

struct CsiPair {
  CMat h_v;
  CMat h_h;
};

// Affine normalization of the real and imaginary parts into [0, 1].
struct NormScaler {
  double lo = 0.0;
  double hi = 1.0;
};

struct CsiDataset {
  int n_s = 0;
  int n_t = 0;
  std::vector<CsiPair> samples;
  ScenarioConfig scenario;
  std::uint64_t seed = 0;
  std::optional<NormScaler> scaler;  // engaged once entries are normalized

  std::size_t size() const { return samples.size(); }
};

// Draws `count` channel pairs. Each sample consumes its own derived RNG
// stream, so the i-th sample is invariant under count and under
// phase_coupling (the same underlying path randomness is reused when only
// kappa changes).
CsiDataset generate_dataset(const ScenarioConfig& scenario, int count,
                            int n_s, int n_t, std::uint64_t seed);

NormScaler fit_normalizer(const CsiDataset& ds);

struct NormalizeResult {
  CsiDataset data;
  std::int64_t clamped = 0;  // entries that fell outside [lo, hi]
};

NormalizeResult apply_normalizer(const CsiDataset& ds, const NormScaler& s);
CsiDataset invert_normalizer(const CsiDataset& ds);

// Real network-facing views: one [2, n_s, n_t/2] block per polarization,
// channel 0 holding real parts and channel 1 imaginary parts.
template <typename T>
void pair_to_maps(const CsiPair& p, T* v_dst, T* h_dst);

template <typename T>
Tensor<T> maps_from_dataset(const CsiDataset& ds, const std::vector<int>& idx,
                            bool horizontal);

template <typename T>
CsiPair maps_to_pair(const T* v_src, const T* h_src, int n_s, int n_t);

// --- spectral similarity (gcs.cpp) ---

// Mean over subbands of |<a_k, b_k>| / (|a_k| |b_k|). A zero-norm subband
// row in either argument raises std::domain_error naming the row.
double gcs(const CMat& a, const CMat& b);

// Same statistic for real-valued rows.
double gcs_real(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

struct GcsProfile {
  double original = 0.0;
  double real_part = 0.0;
  double imag_part = 0.0;
  double magnitude = 0.0;
  double phase = 0.0;
};

GcsProfile gcs_profile(const CsiPair& p);

// --- persistence (dataset_io.cpp) ---

// Binary container plus a `<path>.manifest` text sidecar.
void write_dataset(const CsiDataset& ds, const std::string& path);
CsiDataset read_dataset(const std::string& path);

}  // namespace dpcsi
