// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "dpcsi/channel.hpp"
#include "dpcsi/kv.hpp"
#include "dpcsi/model.hpp"

namespace dpcsi {

inline constexpr double kNmseFloorDb = -120.0;

// Per-sample normalized error: half the sum over polarizations of
// squared-residual over squared-norm, on denormalized complex entries.
double nmse_linear(const CsiPair& rec, const CsiPair& truth);
double nmse_db_from_linear(double linear);

std::vector<double> nmse_per_sample_db(const std::vector<CsiPair>& rec,
                                       const std::vector<CsiPair>& truth);

// Aggregate: mean of per-sample linear ratios, then decibels.
double nmse_db(const std::vector<CsiPair>& rec,
               const std::vector<CsiPair>& truth);

struct CdfPoint {
  double value_db = 0.0;
  double fraction = 0.0;
};
std::vector<CdfPoint> nmse_cdf(std::vector<double> per_sample_db);

// Runs the model in evaluation mode over a normalized dataset and returns
// denormalized reconstructions.
std::vector<CsiPair> reconstruct(CsiAutoencoder<float>& model,
                                 const CsiDataset& normalized, int chunk = 100);

// --- ablation input transforms ---

// Mean-magnitude shared part with per-polarization phases.
struct DrMpParts {
  Eigen::MatrixXd shared;  // entrywise mean of the two magnitude maps
  Eigen::MatrixXd phase_v;
  Eigen::MatrixXd phase_h;
};
DrMpParts dr_mp_transform(const CsiPair& p);
CsiPair dr_mp_inverse(const DrMpParts& parts);

// Absolute values of the stacked real/imag maps as the shared part, sign
// patterns as the specific part. sign(0) is +1 by convention, which makes
// the roundtrip exact.
struct DrAsParts {
  Tensor<float> shared;  // [4, n_s, n_t/2], both polarizations stacked
  Tensor<float> sign;    // same shape, entries in {-1, +1}
};
DrAsParts dr_as_transform(const CsiPair& p);
CsiPair dr_as_inverse(const DrAsParts& parts);

// --- truncated linear codec baseline ---

int baseline_rank_per_pol(int n_s, int n_t, const Rational& sigma);

// Orthonormal basis of the training covariance per polarization; encode
// keeps the leading coefficients, decode expands and restores the mean.
class LinearBaseline {
 public:
  static LinearBaseline fit(const CsiDataset& train_denorm, int rank_per_pol);

  CsiPair codec(const CsiPair& p) const;
  std::vector<CsiPair> codec_all(const std::vector<CsiPair>& in) const;
  int rank_per_pol() const { return rank_; }

 private:
  int n_s_ = 0, n_t_ = 0, rank_ = 0;
  Eigen::MatrixXd basis_v_, basis_h_;  // [dim, rank]
  Eigen::VectorXd mean_v_, mean_h_;
};

// --- multiuser precoding (precoding.cpp) ---

struct ZfResult {
  Eigen::MatrixXcd v;  // [n_t, K], unit-norm columns
  bool regularized = false;
};

// Zero-forcing from the (estimated) user rows; a rank-deficient Gram matrix
// falls back to a ridge of 1e-9 and is flagged.
ZfResult zf_precode(const Eigen::MatrixXcd& h_users);

// Mean per-user rate in bits/s/Hz at one linear SNR, interference treated
// as noise.
double achievable_rate(const Eigen::MatrixXcd& h_true,
                       const Eigen::MatrixXcd& v, double snr_linear);

struct RateTable {
  std::vector<double> snr_db;
  std::vector<double> perfect;
  std::vector<double> recovered;
  std::int64_t regularized_solves = 0;
};

// Draws `trials` user groups from the sample pool, precodes per subband
// from recovered CSI, and scores against the true CSI.
RateTable rate_experiment(const std::vector<CsiPair>& truth,
                          const std::vector<CsiPair>& recovered, int users,
                          const std::vector<double>& snr_db, int trials,
                          std::uint64_t seed);

// --- report emission (report.cpp) ---

struct EvalReport {
  std::vector<double> per_sample_db;
  double aggregate_db = 0.0;
  std::vector<CdfPoint> cdf;
  KvFile summary;
  RateTable rate;  // optional, empty grids when unused
};

// Writes summary.kv, per_sample.csv, cdf.csv, and rate.csv under dir.
void emit_report(const EvalReport& report, const std::string& dir);

void write_table(const std::string& path, const std::string& header,
                 const std::vector<std::vector<double>>& rows);

}  // namespace dpcsi
