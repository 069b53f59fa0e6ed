// SPDX-License-Identifier: Apache-2.0
#include "dpcsi/nn.hpp"

#include <cmath>

namespace dpcsi {

template <typename T>
double Adam<T>::clip_global_norm(double max_norm) {
  double sq = 0.0;
  for (const auto& p : params_) {
    if (!p->grad_ready) continue;
    const T* g = p->grad.data();
    for (int64_t i = 0; i < p->grad.numel(); ++i)
      sq += double(g[i]) * double(g[i]);
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const T s = static_cast<T>(max_norm / norm);
    for (const auto& p : params_) {
      if (!p->grad_ready) continue;
      T* g = p->grad.data();
      for (int64_t i = 0; i < p->grad.numel(); ++i) g[i] *= s;
    }
  }
  return norm;
}

template <typename T>
void Adam<T>::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(b1_, double(t_));
  const double bc2 = 1.0 - std::pow(b2_, double(t_));
  for (size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k];
    if (!p->grad_ready) continue;
    T* w = p->value.data();
    const T* g = p->grad.data();
    T* m = m_[k].data();
    T* v = v_[k].data();
    for (int64_t i = 0; i < p->value.numel(); ++i) {
      const double gi = double(g[i]);
      const double mi = b1_ * double(m[i]) + (1.0 - b1_) * gi;
      const double vi = b2_ * double(v[i]) + (1.0 - b2_) * gi * gi;
      m[i] = T(mi);
      v[i] = T(vi);
      const double mhat = mi / bc1, vhat = vi / bc2;
      w[i] = T(double(w[i]) - lr_ * mhat / (std::sqrt(vhat) + eps_));
    }
  }
}

template class Adam<float>;
template class Adam<double>;

}  // namespace dpcsi
