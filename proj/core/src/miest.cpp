// SPDX-License-Identifier: Apache-2.0
#include "dpcsi/miest.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include <Eigen/Core>

#include "dpcsi/exact_sum.hpp"

namespace dpcsi {

namespace {

using Md =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
void expect_rows(const Shape& s, std::int64_t cols, const char* what) {
  if (s.size() != 2 || s[1] != cols)
    throw shape_error(std::string(what) + ": expected [N, " +
                      std::to_string(cols) + "], got " + shape_to_string(s));
}

// Temporarily drops requires_grad on every learnable entry so graph
// construction treats the estimator as a constant scorer.
template <typename T>
class FreezeGuard {
 public:
  explicit FreezeGuard(const ParamStore<T>& store) {
    for (const auto& e : store.entries())
      if (e.learnable) {
        saved_.emplace_back(e.var, e.var->requires_grad);
        e.var->requires_grad = false;
      }
  }
  ~FreezeGuard() {
    for (auto& [v, rg] : saved_) v->requires_grad = rg;
  }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  std::vector<std::pair<ag::Var<T>, bool>> saved_;
};

}  // namespace

void MiEstimatorConfig::validate() const {
  if (x_dim < 1 || y_dim < 1)
    throw std::invalid_argument("mi estimator: input dims must be positive");
  if (hidden < 1)
    throw std::invalid_argument("mi estimator: hidden width must be positive");
  if (!(leaky_slope > 0.0) || leaky_slope >= 1.0)
    throw std::invalid_argument("mi estimator: leaky_slope must lie in (0, 1)");
}

template <typename T>
void MiEstimator<T>::build(const MiEstimatorConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  cfg_ = cfg;
  params_ = ParamStore<T>{};
  Rng rng(substream(seed, "mi_init"));

  const std::int64_t t = cfg_.target_dim();
  x1_.build(params_, "x1", cfg_.x_dim, cfg_.hidden, rng);
  x2_.build(params_, "x2", cfg_.hidden, cfg_.hidden, rng);
  mu_.build(params_, "mu", cfg_.hidden, t, rng);
  lv_.build(params_, "lv", cfg_.hidden, t, rng);

  Tensor<T> proj({t, cfg_.y_dim});
  if (cfg_.y_dim <= cfg_.hidden) {
    for (std::int64_t i = 0; i < t; ++i) proj.at(i, i) = T(1);
  } else {
    proj = uniform_fan_in<T>({t, cfg_.y_dim}, cfg_.y_dim, rng);
  }
  psy_ = params_.add_buffer("psy.w", std::move(proj));
}

template <typename T>
ag::Var<T> MiEstimator<T>::project_y(const ag::Var<T>& y) const {
  expect_rows<T>(y->value.shape(), cfg_.y_dim, "mi estimator target");
  auto zb = ag::make_const(Tensor<T>({cfg_.target_dim()}));
  return ag::linear(y, psy_, zb);
}

template <typename T>
typename MiEstimator<T>::Heads MiEstimator<T>::heads(
    const ag::Var<T>& x) const {
  expect_rows<T>(x->value.shape(), cfg_.x_dim, "mi estimator input");
  const T slope = static_cast<T>(cfg_.leaky_slope);
  auto z1 = ag::leaky_relu(x1_.forward(x), slope);
  auto z2 = ag::leaky_relu(x2_.forward(z1), slope);
  Heads h;
  h.mu = mu_.forward(z2);
  h.logvar = ag::clamp(lv_.forward(z2), T(-10), T(10));
  return h;
}

template <typename T>
ag::Var<T> club_nll_loss(const MiEstimator<T>& est, const ag::Var<T>& x,
                         const ag::Var<T>& y) {
  if (x->value.dim(0) != y->value.dim(0))
    throw shape_error("club: sample counts differ between x and y");
  if (x->value.dim(0) < 1)
    throw std::invalid_argument("club: empty batch");
  auto h = est.heads(x);
  auto py = est.project_y(y);
  return ag::gauss_nll(h.mu, h.logvar, py->value);
}

template <typename T>
ag::Var<T> club_mi_node(const MiEstimator<T>& est, const ag::Var<T>& x,
                        const ag::Var<T>& y) {
  if (x->value.dim(0) != y->value.dim(0))
    throw shape_error("club: sample counts differ between x and y");
  if (x->value.dim(0) < 2)
    throw std::invalid_argument(
        "club: need at least two samples for the contrastive term");
  auto h = est.heads(x);
  auto py = est.project_y(y);
  return ag::mi_contrast(h.mu, h.logvar, py);
}

template <typename T>
double club_mi_estimate(const MiEstimator<T>& est, const Tensor<T>& x,
                        const Tensor<T>& y) {
  const std::int64_t n = x.dim(0);
  if (y.dim(0) != n)
    throw shape_error("club: sample counts differ between x and y");
  if (n < 2)
    throw std::invalid_argument(
        "club: need at least two samples for the contrastive term");

  const std::int64_t t = est.config().target_dim();
  Tensor<T> mu_t, lv_t, py_t;
  {
    ag::NoGradGuard ng;
    auto h = est.heads(ag::make_const(x));
    mu_t = h.mu->value;
    lv_t = h.logvar->value;
    py_t = est.project_y(ag::make_const(y))->value;
  }

  Md mu(n, t), lv(n, t), py(n, t);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t d = 0; d < t; ++d) {
      mu(i, d) = static_cast<double>(mu_t.at(i, d));
      lv(i, d) = static_cast<double>(lv_t.at(i, d));
      py(i, d) = static_cast<double>(py_t.at(i, d));
    }

  const Md einv = (-lv.array()).exp();
  const Md mue = mu.array() * einv.array();
  const Md py2 = py.array() * py.array();
  Eigen::VectorXd base(n);
  for (std::int64_t j = 0; j < n; ++j) {
    double s = static_cast<double>(t) * std::log(2.0 * std::numbers::pi);
    for (std::int64_t d = 0; d < t; ++d)
      s += lv(j, d) + mu(j, d) * mu(j, d) * einv(j, d);
    base(j) = s;
  }

  const std::int64_t bs =
      std::clamp<std::int64_t>((std::int64_t{8} << 20) / n, 1, n);
  Md lblk(bs, n), qblk(bs, n);
  ExactSum pos_acc, lse_acc;
  std::vector<double> row(static_cast<std::size_t>(n));

  for (std::int64_t r0 = 0; r0 < n; r0 += bs) {
    const std::int64_t rows = std::min(bs, n - r0);
    lblk.topRows(rows).noalias() = py2.middleRows(r0, rows) * einv.transpose();
    qblk.topRows(rows).noalias() = py.middleRows(r0, rows) * mue.transpose();
    for (std::int64_t i = 0; i < rows; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::int64_t j = 0; j < n; ++j) {
        const double l =
            -0.5 * (base(j) + lblk(i, j) - 2.0 * qblk(i, j));
        row[static_cast<std::size_t>(j)] = l;
        mx = std::max(mx, l);
      }
      ExactSum es;
      for (std::int64_t j = 0; j < n; ++j)
        es.add(std::exp(row[static_cast<std::size_t>(j)] - mx));
      pos_acc.add(row[static_cast<std::size_t>(r0 + i)]);
      lse_acc.add(mx + std::log(es.value()));
    }
  }
  const double dn = static_cast<double>(n);
  return pos_acc.value() / dn - lse_acc.value() / dn + std::log(dn);
}

template <typename T>
ag::Var<T> mi_regularizer(const MiEstimator<T>& est1, const ag::Var<T>& x1,
                          const ag::Var<T>& y1, const MiEstimator<T>& est2,
                          const ag::Var<T>& x2, const ag::Var<T>& y2,
                          double delta) {
  FreezeGuard<T> f1(est1.params());
  FreezeGuard<T> f2(est2.params());
  auto i1 = club_mi_node(est1, x1, y1);
  double i2;
  {
    ag::NoGradGuard ng;
    i2 = static_cast<double>(club_mi_node(est2, x2, y2)->value[0]);
  }
  return ag::square(
      ag::add_scalar(i1, static_cast<T>(-i2 - delta)));
}

double gaussian_mi_oracle(double rho, int dim) {
  if (!(rho > -1.0 && rho < 1.0))
    throw std::invalid_argument("gaussian_mi_oracle: rho must lie in (-1, 1)");
  if (dim < 1)
    throw std::invalid_argument("gaussian_mi_oracle: dim must be positive");
  return -0.5 * static_cast<double>(dim) * std::log(1.0 - rho * rho);
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> sample_gaussian_pairs(double rho, int dim,
                                                      int n,
                                                      std::uint64_t seed) {
  if (!(rho > -1.0 && rho < 1.0))
    throw std::invalid_argument("sample_gaussian_pairs: rho must lie in (-1, 1)");
  Rng rng(seed);
  Tensor<T> x({n, dim}), y({n, dim});
  const double s = std::sqrt(1.0 - rho * rho);
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    const double xv = rng.normal();
    x[i] = static_cast<T>(xv);
    y[i] = static_cast<T>(rho * xv + s * rng.normal());
  }
  return {std::move(x), std::move(y)};
}

template <typename T>
double train_estimator(MiEstimator<T>& est, const Tensor<T>& x,
                       const Tensor<T>& y, int epochs, int batch, double lr,
                       std::uint64_t seed) {
  const std::int64_t n = x.dim(0);
  if (y.dim(0) != n)
    throw shape_error("train_estimator: sample counts differ");
  if (batch < 2)
    throw std::invalid_argument("train_estimator: batch must be >= 2");

  Adam<T> opt(est.params().learnable(), lr);
  Rng order_rng(substream(seed, "batching"));
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  const std::int64_t xd = x.dim(1), yd = y.dim(1);
  double last = 0.0;

  for (int ep = 0; ep < epochs; ++ep) {
    for (std::size_t i = 0; i < order.size(); ++i)
      order[i] = static_cast<std::int64_t>(i);
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1],
                order[order_rng.uniform_int(static_cast<std::uint32_t>(i))]);

    double acc = 0.0;
    std::int64_t used = 0;
    for (std::int64_t b0 = 0; b0 + 2 <= n; b0 += batch) {
      const std::int64_t bn = std::min<std::int64_t>(batch, n - b0);
      if (bn < 2) break;
      Tensor<T> xb({bn, xd}), yb({bn, yd});
      for (std::int64_t i = 0; i < bn; ++i) {
        const std::int64_t src = order[static_cast<std::size_t>(b0 + i)];
        std::copy_n(x.data() + src * xd, xd, xb.data() + i * xd);
        std::copy_n(y.data() + src * yd, yd, yb.data() + i * yd);
      }
      est.params().zero_grad();
      auto loss = club_nll_loss(est, ag::make_const(std::move(xb)),
                                ag::make_const(std::move(yb)));
      ag::backward(loss);
      opt.clip_global_norm(5.0);
      opt.step();
      acc += static_cast<double>(loss->value[0]) * static_cast<double>(bn);
      used += bn;
    }
    last = used ? acc / static_cast<double>(used) : 0.0;
  }
  return last;
}

template class MiEstimator<float>;
template class MiEstimator<double>;

#define DPCSI_MIEST_FNS(T)                                                    \
  template ag::Var<T> club_nll_loss<T>(const MiEstimator<T>&,                 \
                                       const ag::Var<T>&, const ag::Var<T>&); \
  template ag::Var<T> club_mi_node<T>(const MiEstimator<T>&,                  \
                                      const ag::Var<T>&, const ag::Var<T>&);  \
  template double club_mi_estimate<T>(const MiEstimator<T>&,                  \
                                      const Tensor<T>&, const Tensor<T>&);    \
  template ag::Var<T> mi_regularizer<T>(                                      \
      const MiEstimator<T>&, const ag::Var<T>&, const ag::Var<T>&,            \
      const MiEstimator<T>&, const ag::Var<T>&, const ag::Var<T>&, double);   \
  template std::pair<Tensor<T>, Tensor<T>> sample_gaussian_pairs<T>(          \
      double, int, int, std::uint64_t);                                       \
  template double train_estimator<T>(MiEstimator<T>&, const Tensor<T>&,       \
                                     const Tensor<T>&, int, int, double,      \
                                     std::uint64_t);

DPCSI_MIEST_FNS(float)
DPCSI_MIEST_FNS(double)
#undef DPCSI_MIEST_FNS

}  // namespace dpcsi
