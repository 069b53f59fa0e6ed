// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "dpcsi/channel.hpp"
#include "dpcsi/checkpoint.hpp"
#include "dpcsi/miest.hpp"
#include "dpcsi/model.hpp"

namespace dpcsi {

struct TrainConfig {
  double lr = 1e-3;
  double lambda = 1e-5;
  double delta_nats = 0.0;  // target gap between the two MI estimates
  int epochs = 100;
  int batch = 200;
  int chunk = 50;  // sub-batch used for normalization statistics
  double clip_norm = 5.0;
  std::uint64_t seed = 0;
  int ckpt_every = 0;        // extra rolling snapshots, 0 disables
  std::string out_dir;       // when set, checkpoints and history are written

  void validate() const;
  void to_kv(KvFile& kv) const;
  static TrainConfig from_kv(const KvFile& kv);
};

struct EpochRecord {
  int epoch = 0;
  double train_mse = 0.0;
  double train_mi = 0.0;  // squared MI-distance term, unweighted by lambda
  double val_nmse_db = 0.0;
  double mi_w = 0.0;    // estimate of I(inputs; W) on the validation set
  double mi_pol = 0.0;  // estimate of I(h_v; h_h) on the validation set
  double wall_s = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> rows;

  // One header row, comma delimiter. Wall time is the last column so
  // comparisons can exclude it.
  std::string to_csv() const;
  static TrainHistory from_csv(const std::string& text);
  std::string csv_without_wall() const;
};

struct FitOutput {
  TrainHistory history;
  int best_epoch = -1;
  double best_val_db = std::numeric_limits<double>::infinity();
  CheckpointData best;
  CheckpointData final;
  bool aborted = false;
  std::string abort_reason;
};

// The two estimator geometries implied by a model configuration: the first
// scores (both inputs -> shared map), the second (one polarization -> the
// other).
std::pair<MiEstimatorConfig, MiEstimatorConfig> mi_configs(
    const ModelConfig& cfg, std::int64_t hidden = 128);

// Mean squared reconstruction error over the batch, half the summed squared
// residual of both polarizations per sample.
template <typename T>
ag::Var<T> mse_loss(const ag::Var<T>& rec_v, const ag::Var<T>& rec_h,
                    const Tensor<T>& h_v, const Tensor<T>& h_h);

struct StepMetrics {
  double mse = 0.0;
  double mi_penalty = 0.0;
  double nll1 = 0.0;
  double nll2 = 0.0;
  double grad_norm_model = 0.0;
  double grad_norm_mi = 0.0;
  bool finite = true;
};

// Reconstruction step: updates model parameters only; the estimators are
// scored but never mutated.
template <typename T>
StepMetrics train_step_main(CsiAutoencoder<T>& model, MiEstimator<T>& f1,
                            MiEstimator<T>& f2, const Tensor<T>& h_v,
                            const Tensor<T>& h_h, Adam<T>& opt,
                            const TrainConfig& cfg);

// Estimator step: updates both estimators from a frozen encoder's output.
template <typename T>
StepMetrics train_step_mi(CsiAutoencoder<T>& model, MiEstimator<T>& f1,
                          MiEstimator<T>& f2, const Tensor<T>& h_v,
                          const Tensor<T>& h_h, Adam<T>& opt1, Adam<T>& opt2,
                          const TrainConfig& cfg);

// Alternating optimization over the normalized datasets. Both datasets must
// carry the same normalizer. Checkpoints embed model, estimators, config,
// and normalizer.
FitOutput fit(const CsiDataset& train_set, const CsiDataset& val_set,
              const ModelConfig& mcfg, const TrainConfig& tcfg);

// --- gradient verification (gradcheck.cpp) ---

struct GradCheckGroup {
  std::string name;
  double max_rel_err = 0.0;
  std::string worst_tensor;
  bool pass = false;
};

struct GradCheckReport {
  std::vector<GradCheckGroup> groups;
  double tolerance = 1e-3;
  bool pass = false;
  std::string to_text() const;
};

// Central finite differences (step 1e-4, f64) against the analytic gradient
// of one combined training loss on a tiny configuration, sampling a few
// elements of every tensor. corrupt_tensor, when named, zeroes that tensor's
// analytic gradient first so the harness can prove the check catches faults.
GradCheckReport finite_diff_gradcheck(std::uint64_t seed,
                                      const std::string& corrupt_tensor = "");

}  // namespace dpcsi
