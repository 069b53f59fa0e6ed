// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <utility>

#include "dpcsi/autograd.hpp"
#include "dpcsi/nn.hpp"
#include "dpcsi/rng.hpp"
#include "dpcsi/tensor.hpp"

namespace dpcsi {

struct MiEstimatorConfig {
  std::int64_t x_dim = 0;
  std::int64_t y_dim = 0;
  std::int64_t hidden = 128;
  double leaky_slope = 0.3;

  void validate() const;
  // Targets wider than the hidden width are projected down by a frozen
  // random map; smaller targets are scored in their own coordinates.
  std::int64_t target_dim() const { return y_dim < hidden ? y_dim : hidden; }
};

// Variational scorer for a diagonal Gaussian q(y|x): two input projections
// (the y side frozen), a small feed-forward stack on the x side, and mean /
// log-variance heads. Log-variances are clamped to [-10, 10].
template <typename T>
class MiEstimator {
 public:
  void build(const MiEstimatorConfig& cfg, std::uint64_t seed);

  const MiEstimatorConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  ag::Var<T> project_y(const ag::Var<T>& y) const;

  struct Heads {
    ag::Var<T> mu, logvar;
  };
  Heads heads(const ag::Var<T>& x) const;

 private:
  MiEstimatorConfig cfg_;
  ParamStore<T> params_;
  Linear<T> x1_, x2_, mu_, lv_;
  ag::Var<T> psy_;  // frozen [target_dim, y_dim]
};

// Negated mean log-likelihood of the scored pairs; minimizing it trains the
// estimator. x: [N, x_dim], y: [N, y_dim].
template <typename T>
ag::Var<T> club_nll_loss(const MiEstimator<T>& est, const ag::Var<T>& x,
                         const ag::Var<T>& y);

// Contrastive estimate in nats as a graph node: mean positive-pair score
// minus the mean log of the within-batch marginal mixture. Requires N >= 2.
template <typename T>
ag::Var<T> club_mi_node(const MiEstimator<T>& est, const ag::Var<T>& x,
                        const ag::Var<T>& y);

// Same statistic evaluated without a graph, streamed in f64 blocks so large
// sample counts stay in memory. Invariant to sample order, bit for bit.
template <typename T>
double club_mi_estimate(const MiEstimator<T>& est, const Tensor<T>& x,
                        const Tensor<T>& y);

// |I1 - I2 - delta|^2 with I1 = est1 on (x1, y1) and I2 = est2 on (x2, y2).
// Estimator parameters are held constant; gradients reach the encoder only
// through y1. I2 is evaluated outside the graph.
template <typename T>
ag::Var<T> mi_regularizer(const MiEstimator<T>& est1, const ag::Var<T>& x1,
                          const ag::Var<T>& y1, const MiEstimator<T>& est2,
                          const ag::Var<T>& x2, const ag::Var<T>& y2,
                          double delta);

double gaussian_mi_oracle(double rho, int dim);

// Correlated standard-normal pairs for estimator calibration runs.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> sample_gaussian_pairs(double rho, int dim,
                                                      int n,
                                                      std::uint64_t seed);

// Minibatch NLL training with adaptive moments; returns the final epoch's
// mean training loss.
template <typename T>
double train_estimator(MiEstimator<T>& est, const Tensor<T>& x,
                       const Tensor<T>& y, int epochs, int batch, double lr,
                       std::uint64_t seed);

extern template class MiEstimator<float>;
extern template class MiEstimator<double>;

}  // namespace dpcsi
