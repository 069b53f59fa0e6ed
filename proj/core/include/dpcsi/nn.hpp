// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "dpcsi/autograd.hpp"
#include "dpcsi/rng.hpp"

namespace dpcsi {

/// Ordered, named collection of leaf variables: learnable parameters plus
/// non-learnable buffers (normalization running statistics, fixed
/// projections). Names are unique; insertion order is the serialization
/// order, so checkpoints and hashes are deterministic.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    ag::Var<T> var;
    bool learnable;
  };

  ag::Var<T> add_param(const std::string& name, Tensor<T> init) {
    return add(name, std::move(init), true);
  }
  ag::Var<T> add_buffer(const std::string& name, Tensor<T> init) {
    return add(name, std::move(init), false);
  }

  ag::Var<T> get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end())
      throw std::invalid_argument("ParamStore: unknown entry " + name);
    return entries_[it->second].var;
  }
  bool has(const std::string& name) const { return index_.count(name) > 0; }

  const std::vector<Entry>& entries() const { return entries_; }

  int64_t count_learnable() const {
    int64_t n = 0;
    for (const auto& e : entries_)
      if (e.learnable) n += e.var->value.numel();
    return n;
  }

  std::vector<ag::Var<T>> learnable() const {
    std::vector<ag::Var<T>> out;
    for (const auto& e : entries_)
      if (e.learnable) out.push_back(e.var);
    return out;
  }

  void zero_grad() {
    for (const auto& e : entries_) e.var->grad_ready = false;
  }

  /// Freeze/unfreeze every learnable leaf (buffers never require grads).
  void set_trainable(bool on) {
    for (const auto& e : entries_)
      if (e.learnable) e.var->requires_grad = on;
  }

  /// FNV-1a over names and raw value bytes in insertion order.
  uint64_t value_hash() const {
    uint64_t h = 0xCBF29CE484222325ull;
    auto mix = [&h](const void* p, size_t n) {
      const unsigned char* b = static_cast<const unsigned char*>(p);
      for (size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 0x100000001B3ull;
      }
    };
    for (const auto& e : entries_) {
      mix(e.name.data(), e.name.size());
      mix(e.var->value.data(), sizeof(T) * e.var->value.numel());
    }
    return h;
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& e : entries_) {
      if (e.learnable)
        out.add_param(e.name, e.var->value.template cast<U>());
      else
        out.add_buffer(e.name, e.var->value.template cast<U>());
    }
    return out;
  }

 private:
  ag::Var<T> add(const std::string& name, Tensor<T> init, bool learnable) {
    if (index_.count(name))
      throw std::invalid_argument("ParamStore: duplicate entry " + name);
    auto var = ag::make_leaf(std::move(init), learnable);
    index_[name] = entries_.size();
    entries_.push_back({name, var, learnable});
    return var;
  }

  std::vector<Entry> entries_;
  std::unordered_map<std::string, size_t> index_;
};

/// Fan-in-scaled uniform init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <typename T>
Tensor<T> uniform_fan_in(Shape shape, int64_t fan_in, Rng& rng) {
  Tensor<T> t(std::move(shape));
  const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (int64_t i = 0; i < t.numel(); ++i)
    t[i] = static_cast<T>(rng.uniform(-s, s));
  return t;
}

template <typename T>
struct Linear {
  ag::Var<T> w, b;

  void build(ParamStore<T>& store, const std::string& prefix, int64_t in,
             int64_t out, Rng& rng) {
    w = store.add_param(prefix + ".w", uniform_fan_in<T>({out, in}, in, rng));
    b = store.add_param(prefix + ".b", Tensor<T>({out}));
  }

  ag::Var<T> forward(const ag::Var<T>& x) const { return ag::linear(x, w, b); }
};

template <typename T>
struct Conv2d {
  ag::Var<T> w, b;
  int pad_h = 0, pad_w = 0;
  std::string label;

  void build(ParamStore<T>& store, const std::string& prefix, int64_t cin,
             int64_t cout, int64_t kh, int64_t kw, Rng& rng) {
    label = prefix;
    pad_h = static_cast<int>(kh / 2);
    pad_w = static_cast<int>(kw / 2);
    w = store.add_param(
        prefix + ".w", uniform_fan_in<T>({cout, cin, kh, kw}, cin * kh * kw, rng));
    b = store.add_param(prefix + ".b", Tensor<T>({cout}));
  }

  ag::Var<T> forward(const ag::Var<T>& x) const {
    return ag::conv2d(x, w, b, pad_h, pad_w, label);
  }
};

template <typename T>
struct BatchNorm2d {
  ag::Var<T> gamma, beta, rmean, rvar;
  T momentum = T(0.9), eps = T(1e-5);

  void build(ParamStore<T>& store, const std::string& prefix, int64_t channels,
             T momentum_, T eps_) {
    momentum = momentum_;
    eps = eps_;
    gamma = store.add_param(prefix + ".g", Tensor<T>::full({channels}, T(1)));
    beta = store.add_param(prefix + ".b", Tensor<T>({channels}));
    rmean = store.add_buffer(prefix + ".rm", Tensor<T>({channels}));
    rvar = store.add_buffer(prefix + ".rv", Tensor<T>::full({channels}, T(1)));
  }

  ag::Var<T> forward(const ag::Var<T>& x, ag::BnMode mode) const {
    return ag::batchnorm2d(x, gamma, beta, rmean->value, rvar->value, momentum,
                           eps, mode);
  }
};

/// conv -> batch norm -> leaky activation
template <typename T>
struct CompositeConv {
  Conv2d<T> conv;
  BatchNorm2d<T> bn;
  T slope = T(0.3);

  void build(ParamStore<T>& store, const std::string& prefix, int64_t cin,
             int64_t cout, int64_t kh, int64_t kw, T slope_, T momentum, T eps,
             Rng& rng) {
    slope = slope_;
    conv.build(store, prefix + ".conv", cin, cout, kh, kw, rng);
    bn.build(store, prefix + ".bn", cout, momentum, eps);
  }

  ag::Var<T> forward(const ag::Var<T>& x, ag::BnMode mode) const {
    return ag::leaky_relu(bn.forward(conv.forward(x), mode), slope);
  }
};

/// Adaptive-moment optimizer over one parameter group, with optional
/// global-norm gradient clipping. Skips parameters that received no
/// gradient this step.
template <typename T>
class Adam {
 public:
  Adam(std::vector<ag::Var<T>> params, double lr, double beta1 = 0.9,
       double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
      m_.emplace_back(p->value.shape());
      v_.emplace_back(p->value.shape());
    }
  }

  /// Scales gradients so their joint norm is at most max_norm; returns the
  /// pre-clip norm.
  double clip_global_norm(double max_norm);

  void step();

  void set_lr(double lr) { lr_ = lr; }
  int64_t steps_taken() const { return t_; }

 private:
  std::vector<ag::Var<T>> params_;
  std::vector<Tensor<T>> m_, v_;
  double lr_, b1_, b2_, eps_;
  int64_t t_ = 0;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace dpcsi
