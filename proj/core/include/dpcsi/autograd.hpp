// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dpcsi/tensor.hpp"

namespace dpcsi::ag {

/// Define-by-run reverse-mode autodiff. Each op records its parents and a
/// backward closure; creation order is a valid topological order, so
/// backward() replays reachable nodes by descending sequence number.
/// Single-threaded by design: reductions run in one fixed order, which makes
/// training runs bit-reproducible.
template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  bool grad_ready = false;
  uint64_t seq = 0;
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::function<void()> backward_fn;

  void ensure_grad() {
    if (!grad_ready) {
      if (!grad.same_shape(value)) grad = Tensor<T>(value.shape());
      else grad.fill(T(0));
      grad_ready = true;
    }
  }
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

bool grad_enabled();

/// Disables graph construction in scope (pure evaluation).
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

uint64_t next_seq();

template <typename T>
Var<T> make_leaf(Tensor<T> v, bool requires_grad) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(v);
  n->requires_grad = requires_grad;
  n->seq = next_seq();
  return n;
}

template <typename T>
Var<T> make_const(Tensor<T> v) {
  return make_leaf(std::move(v), false);
}

/// Seeds root (a scalar) with gradient 1 and accumulates gradients into
/// every reachable node that requires them.
template <typename T>
void backward(const Var<T>& root);

enum class BnMode { Train, TrainPure, Eval };

// -- elementwise and structural ops --
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T s);
template <typename T> Var<T> add_scalar(const Var<T>& a, T s);
template <typename T> Var<T> square(const Var<T>& a);
template <typename T> Var<T> leaky_relu(const Var<T>& a, T slope);
template <typename T> Var<T> sigmoid(const Var<T>& a);
template <typename T> Var<T> clamp(const Var<T>& a, T lo, T hi);
template <typename T> Var<T> reshape(const Var<T>& a, Shape s);

/// Concatenates along axis 1 (per-leading-index contiguous blocks);
/// handles both [B, N] vectors and [B, C, H, W] channel maps.
template <typename T> Var<T> concat1(const Var<T>& a, const Var<T>& b);

// -- parametric layers --
/// x [B, In] * w [Out, In]^T + b [Out] -> [B, Out]
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b);

/// x [B, Cin, H, W], w [Cout, Cin, kh, kw], stride 1, zero padding
/// (pad_h, pad_w). im2col + GEMM; `label` names the layer in shape errors.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int pad_h,
              int pad_w, const std::string& label);

/// Per-channel batch normalization over (B, H, W). Train updates the running
/// buffers; TrainPure uses batch statistics without mutating them (pure
/// function of inputs, used wherever determinism of repeated evaluation
/// matters); Eval uses the running buffers.
template <typename T>
Var<T> batchnorm2d(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                   Tensor<T>& running_mean, Tensor<T>& running_var, T momentum,
                   T eps, BnMode mode);

// -- scalar-valued losses --
/// (sum|pv-tv|^2 + sum|ph-th|^2) / (2B)
template <typename T>
Var<T> mse_pair(const Var<T>& pv, const Var<T>& ph, const Tensor<T>& tv,
                const Tensor<T>& th);

/// Mean diagonal-Gaussian negative log likelihood of y under (mu, logvar),
/// averaged over rows.
template <typename T>
Var<T> gauss_nll(const Var<T>& mu, const Var<T>& logvar, const Tensor<T>& y);

/// Contrastive conditional-density MI value on a batch: mean positive-pair
/// log density minus mean log of the per-row mean negative-pair density.
/// All reductions over the batch use exact summation, so the value is
/// invariant to batch permutation bit-for-bit.
template <typename T>
Var<T> mi_contrast(const Var<T>& mu, const Var<T>& logvar, const Var<T>& psy);

}  // namespace dpcsi::ag
