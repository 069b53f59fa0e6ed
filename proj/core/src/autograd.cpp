// SPDX-License-Identifier: Apache-2.0
#include "dpcsi/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "dpcsi/exact_sum.hpp"

namespace dpcsi::ag {

namespace {

bool& grad_flag() {
  thread_local bool enabled = true;
  return enabled;
}

uint64_t& seq_counter() {
  thread_local uint64_t c = 0;
  return c;
}

template <typename T>
using RMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<RMat<T>>;
template <typename T>
using CMapM = Eigen::Map<const RMat<T>>;
template <typename T>
using MapA = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
template <typename T>
using CMapA = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;

// shared scratch for conv lowering; grow-only, reused across calls
template <typename T>
struct Workspace {
  AlignedVec<T> col, gmat, colgrad, out;
};

template <typename T>
Workspace<T>& ws() {
  thread_local Workspace<T> w;
  return w;
}

template <typename T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> parents) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  if (grad_flag()) {
    for (const auto& p : parents)
      if (p->requires_grad) {
        n->requires_grad = true;
        break;
      }
  }
  if (n->requires_grad) n->parents = std::move(parents);
  n->seq = next_seq();
  return n;
}

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (!a->value.same_shape(b->value))
    throw shape_error(std::string(op) + ": shape mismatch " +
                      shape_to_string(a->value.shape()) + " vs " +
                      shape_to_string(b->value.shape()));
}

}  // namespace

bool grad_enabled() { return grad_flag(); }

NoGradGuard::NoGradGuard() : prev_(grad_flag()) { grad_flag() = false; }
NoGradGuard::~NoGradGuard() { grad_flag() = prev_; }

uint64_t next_seq() { return ++seq_counter(); }

template <typename T>
void backward(const Var<T>& root) {
  if (root->value.numel() != 1)
    throw std::invalid_argument("backward: root must be a scalar");
  if (!root->requires_grad) return;
  root->ensure_grad();
  root->grad[0] = T(1);

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<Node<T>*> stack{root.get()};
  seen.insert(root.get());
  while (!stack.empty()) {
    Node<T>* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& p : n->parents)
      if (p->requires_grad && seen.insert(p.get()).second)
        stack.push_back(p.get());
  }
  std::sort(order.begin(), order.end(),
            [](const Node<T>* a, const Node<T>* b) { return a->seq > b->seq; });
  for (Node<T>* n : order)
    if (n->backward_fn && n->grad_ready) n->backward_fn();
}

// ---------------------------------------------------------------- add / sub

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "add");
  Tensor<T> v(a->value.shape());
  const int64_t n = v.numel();
  MapA<T>(v.data(), n) =
      CMapA<T>(a->value.data(), n) + CMapA<T>(b->value.data(), n);
  auto out = make_op(std::move(v), {a, b});
  if (out->requires_grad) {
    Node<T>* o = out.get();
    out->backward_fn = [o, a, b]() {
      const int64_t n = o->grad.numel();
      if (a->requires_grad) {
        a->ensure_grad();
        MapA<T>(a->grad.data(), n) += CMapA<T>(o->grad.data(), n);
      }
      if (b->requires_grad) {
        b->ensure_grad();
        MapA<T>(b->grad.data(), n) += CMapA<T>(o->grad.data(), n);
      }
    };
  }
  return out;
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "sub");
  Tensor<T> v(a->value.shape());
  const int64_t n = v.numel();
  MapA<T>(v.data(), n) =
      CMapA<T>(a->value.data(), n) - CMapA<T>(b->value.data(), n);
  auto out = make_op(std::move(v), {a, b});
  if (out->requires_grad) {
    Node<T>* o = out.get();
    out->backward_fn = [o, a, b]() {
      const int64_t n = o->grad.numel();
      if (a->requires_grad) {
        a->ensure_grad();
        MapA<T>(a->grad.data(), n) += CMapA<T>(o->grad.data(), n);
      }
      if (b->requires_grad) {
        b->ensure_grad();
        MapA<T>(b->grad.data(), n) -= CMapA<T>(o->grad.data(), n);
      }
    };
  }
  return out;
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "mul");
  Tensor<T> v(a->value.shape());
  const int64_t n = v.numel();
  MapA<T>(v.data(), n) =
      CMapA<T>(a->value.data(), n) * CMapA<T>(b->value.data(), n);
  auto out = make_op(std::move(v), {a, b});
  if (out->requires_grad) {
    Node<T>* o = out.get();
    out->backward_fn = [o, a, b]() {
      const int64_t n = o->grad.numel();
      CMapA<T> g(o->grad.data(), n);
      if (a->requires_grad) {
        a->ensure_grad();
        MapA<T>(a->grad.data(), n) += g * CMapA<T>(b->value.data(), n);
      }
      if (b->requires_grad) {
        b->ensure_grad();
        MapA<T>(b->grad.data(), n) += g * CMapA<T>(a->value.data(), n);
      }
    };
  }
  return out;
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> v(a->value.shape());
  const int64_t n = v.numel();
  MapA<T>(v.data(), n) = CMapA<T>(a->value.data(), n) * s;
  auto out = make_op(std::move(v), {a});
  if (out->requires_grad) {
    Node<T>* o = out.get();
    out->backward_fn = [o, a, s]() {
      a->ensure_grad();
      const int64_t n = o->grad.numel();
      MapA<T>(a->grad.data(), n) += CMapA<T>(o->grad.data(), n) * s;
    };
  }
  return out;
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T s) {
  Tensor<T> v(a->value.shape());
  const int64_t n = v.numel();
  MapA<T>(v.data(), n) = CMapA<T>(a->value.data(), n) + s;
  auto out = make_op(std::move(v), {a});
  if (out->requires_grad) {
    Node<T>* o = out.get();
    out->backward_fn = [o, a]() {
      a->ensure_grad();
      const int64_t n = o->grad.numel();
      MapA<T>(a->grad.data(), n) += CMapA<T>(o->grad.data(), n);
    };
  }
  return out;
}

template <typename T>
Var<T> square(const Var<T>& a) {
  return mul(a, a);
}

template <typename T>
Var<T> leaky_relu(const Var<T>& a, T slope) {
  Tensor<T> v(a->value.shape());
  const int64_t n = v.numel();
  const T* x = a->value.data();
  T* y = v.data();
  for (int64_t i = 0; i < n; ++i) y[i] = x[i] >= T(0) ? x[i] : slope * x[i];
  auto out = make_op(std::move(v), {a});
  if (out->requires_grad) {
    Node<T>* o = out.get();
    out->backward_fn = [o, a, slope]() {
      a->ensure_grad();
      const int64_t n = o->grad.numel();
      const T* x = a->value.data();
      const T* g = o->grad.data();
      T* ga = a->grad.data();
      for (int64_t i = 0; i < n; ++i)
        ga[i] += x[i] >= T(0) ? g[i] : slope * g[i];
    };
  }
  return out;
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  Tensor<T> v(a->value.shape());
  const int64_t n = v.numel();
  const T* x = a->value.data();
  T* y = v.data();
  for (int64_t i = 0; i < n; ++i) y[i] = T(1) / (T(1) + std::exp(-x[i]));
  auto out = make_op(std::move(v), {a});
  if (out->requires_grad) {
    Node<T>* o = out.get();
    out->backward_fn = [o, a]() {
      a->ensure_grad();
      const int64_t n = o->grad.numel();
      const T* s = o->value.data();
      const T* g = o->grad.data();
      T* ga = a->grad.data();
      for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * s[i] * (T(1) - s[i]);
    };
  }
  return out;
}

template <typename T>
Var<T> clamp(const Var<T>& a, T lo, T hi) {
  Tensor<T> v(a->value.shape());
  const int64_t n = v.numel();
  const T* x = a->value.data();
  T* y = v.data();
  for (int64_t i = 0; i < n; ++i) y[i] = std::min(std::max(x[i], lo), hi);
  auto out = make_op(std::move(v), {a});
  if (out->requires_grad) {
    Node<T>* o = out.get();
    out->backward_fn = [o, a, lo, hi]() {
      a->ensure_grad();
      const int64_t n = o->grad.numel();
      const T* x = a->value.data();
      const T* g = o->grad.data();
      T* ga = a->grad.data();
      for (int64_t i = 0; i < n; ++i)
        if (x[i] >= lo && x[i] <= hi) ga[i] += g[i];
    };
  }
  return out;
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape s) {
  Tensor<T> v = a->value.reshaped(std::move(s));
  auto out = make_op(std::move(v), {a});
  if (out->requires_grad) {
    Node<T>* o = out.get();
    out->backward_fn = [o, a]() {
      a->ensure_grad();
      const int64_t n = o->grad.numel();
      MapA<T>(a->grad.data(), n) += CMapA<T>(o->grad.data(), n);
    };
  }
  return out;
}

template <typename T>
Var<T> concat1(const Var<T>& a, const Var<T>& b) {
  const auto& sa = a->value.shape();
  const auto& sb = b->value.shape();
  if (sa.size() != sb.size() || sa.size() < 2 || sa[0] != sb[0])
    throw shape_error("concat1: incompatible shapes " + shape_to_string(sa) +
                      " vs " + shape_to_string(sb));
  for (size_t i = 2; i < sa.size(); ++i)
    if (sa[i] != sb[i])
      throw shape_error("concat1: trailing dims differ, " +
                        shape_to_string(sa) + " vs " + shape_to_string(sb));
  Shape so = sa;
  so[1] = sa[1] + sb[1];
  const int64_t B = sa[0];
  const int64_t na = a->value.numel() / B;
  const int64_t nb = b->value.numel() / B;
  Tensor<T> v(so);
  for (int64_t i = 0; i < B; ++i) {
    std::copy(a->value.data() + i * na, a->value.data() + (i + 1) * na,
              v.data() + i * (na + nb));
    std::copy(b->value.data() + i * nb, b->value.data() + (i + 1) * nb,
              v.data() + i * (na + nb) + na);
  }
  auto out = make_op(std::move(v), {a, b});
  if (out->requires_grad) {
    Node<T>* o = out.get();
    out->backward_fn = [o, a, b, B, na, nb]() {
      const T* g = o->grad.data();
      if (a->requires_grad) {
        a->ensure_grad();
        T* ga = a->grad.data();
        for (int64_t i = 0; i < B; ++i) {
          CMapA<T> gs(g + i * (na + nb), na);
          MapA<T>(ga + i * na, na) += gs;
        }
      }
      if (b->requires_grad) {
        b->ensure_grad();
        T* gb = b->grad.data();
        for (int64_t i = 0; i < B; ++i) {
          CMapA<T> gs(g + i * (na + nb) + na, nb);
          MapA<T>(gb + i * nb, nb) += gs;
        }
      }
    };
  }
  return out;
}

// -------------------------------------------------------------------- linear

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  if (x->value.rank() != 2 || w->value.rank() != 2 ||
      x->value.dim(1) != w->value.dim(1) || b->value.numel() != w->value.dim(0))
    throw shape_error("linear: incompatible shapes x" +
                      shape_to_string(x->value.shape()) + " w" +
                      shape_to_string(w->value.shape()));
  const int64_t B = x->value.dim(0), I = x->value.dim(1), O = w->value.dim(0);
  Tensor<T> v({B, O});
  CMapM<T> X(x->value.data(), B, I), W(w->value.data(), O, I);
  MapM<T> Y(v.data(), B, O);
  Y.noalias() = X * W.transpose();
  CMapA<T> bias(b->value.data(), O);
  for (int64_t i = 0; i < B; ++i) MapA<T>(v.data() + i * O, O) += bias;
  auto out = make_op(std::move(v), {x, w, b});
  if (out->requires_grad) {
    Node<T>* o = out.get();
    out->backward_fn = [o, x, w, b, B, I, O]() {
      CMapM<T> G(o->grad.data(), B, O);
      if (x->requires_grad) {
        x->ensure_grad();
        MapM<T> GX(x->grad.data(), B, I);
        CMapM<T> W(w->value.data(), O, I);
        GX.noalias() += G * W;
      }
      if (w->requires_grad) {
        w->ensure_grad();
        MapM<T> GW(w->grad.data(), O, I);
        CMapM<T> X(x->value.data(), B, I);
        GW.noalias() += G.transpose() * X;
      }
      if (b->requires_grad) {
        b->ensure_grad();
        MapA<T> GB(b->grad.data(), O);
        GB += G.colwise().sum().array().transpose();
      }
    };
  }
  return out;
}

// -------------------------------------------------------------------- conv2d

namespace {

template <typename T>
void im2col(const T* x, int64_t B, int64_t C, int64_t H, int64_t W, int64_t kh,
            int64_t kw, int64_t ph, int64_t pw, int64_t Ho, int64_t Wo,
            T* col) {
  const int64_t N = B * Ho * Wo;
  for (int64_t c = 0; c < C; ++c)
    for (int64_t i = 0; i < kh; ++i)
      for (int64_t j = 0; j < kw; ++j) {
        T* dst = col + ((c * kh + i) * kw + j) * N;
        const int64_t lo = std::max<int64_t>(0, pw - j);
        const int64_t hi = std::min<int64_t>(Wo, W + pw - j);
        for (int64_t b = 0; b < B; ++b) {
          const T* xb = x + (b * C + c) * H * W;
          for (int64_t oy = 0; oy < Ho; ++oy) {
            const int64_t iy = oy + i - ph;
            T* drow = dst + (b * Ho + oy) * Wo;
            if (iy < 0 || iy >= H || hi <= lo) {
              std::fill(drow, drow + Wo, T(0));
              continue;
            }
            if (lo > 0) std::fill(drow, drow + lo, T(0));
            std::copy(xb + iy * W + lo + j - pw, xb + iy * W + hi + j - pw,
                      drow + lo);
            if (hi < Wo) std::fill(drow + hi, drow + Wo, T(0));
          }
        }
      }
}

template <typename T>
void col2im_add(const T* col, int64_t B, int64_t C, int64_t H, int64_t W,
                int64_t kh, int64_t kw, int64_t ph, int64_t pw, int64_t Ho,
                int64_t Wo, T* xg) {
  const int64_t N = B * Ho * Wo;
  for (int64_t c = 0; c < C; ++c)
    for (int64_t i = 0; i < kh; ++i)
      for (int64_t j = 0; j < kw; ++j) {
        const T* src = col + ((c * kh + i) * kw + j) * N;
        const int64_t lo = std::max<int64_t>(0, pw - j);
        const int64_t hi = std::min<int64_t>(Wo, W + pw - j);
        if (hi <= lo) continue;
        for (int64_t b = 0; b < B; ++b) {
          T* xb = xg + (b * C + c) * H * W;
          for (int64_t oy = 0; oy < Ho; ++oy) {
            const int64_t iy = oy + i - ph;
            if (iy < 0 || iy >= H) continue;
            const T* srow = src + (b * Ho + oy) * Wo;
            MapA<T>(xb + iy * W + lo + j - pw, hi - lo) +=
                CMapA<T>(srow + lo, hi - lo);
          }
        }
      }
}

}  // namespace

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int pad_h,
              int pad_w, const std::string& label) {
  if (x->value.rank() != 4)
    throw shape_error(label + ": expected 4-d input, got " +
                      shape_to_string(x->value.shape()));
  if (w->value.rank() != 4 || w->value.dim(1) != x->value.dim(1))
    throw shape_error(label + ": kernel " + shape_to_string(w->value.shape()) +
                      " does not match input " +
                      shape_to_string(x->value.shape()));
  const int64_t B = x->value.dim(0), Cin = x->value.dim(1),
                H = x->value.dim(2), W = x->value.dim(3);
  const int64_t Cout = w->value.dim(0), kh = w->value.dim(2),
                kw = w->value.dim(3);
  if (b->value.numel() != Cout)
    throw shape_error(label + ": bias size mismatch");
  const int64_t Ho = H + 2 * pad_h - kh + 1, Wo = W + 2 * pad_w - kw + 1;
  if (Ho <= 0 || Wo <= 0)
    throw shape_error(label + ": kernel larger than padded input");
  const int64_t K = Cin * kh * kw, N = B * Ho * Wo, HWo = Ho * Wo;

  auto& scratch = ws<T>();
  scratch.col.resize(static_cast<size_t>(K * N));
  scratch.out.resize(static_cast<size_t>(Cout * N));
  im2col(x->value.data(), B, Cin, H, W, kh, kw, pad_h, pad_w, Ho, Wo,
         scratch.col.data());
  CMapM<T> Wm(w->value.data(), Cout, K);
  CMapM<T> Col(scratch.col.data(), K, N);
  MapM<T> Out(scratch.out.data(), Cout, N);
  Out.noalias() = Wm * Col;

  Tensor<T> v({B, Cout, Ho, Wo});
  const T* bias = b->value.data();
  for (int64_t bi = 0; bi < B; ++bi)
    for (int64_t co = 0; co < Cout; ++co) {
      const T* src = scratch.out.data() + co * N + bi * HWo;
      MapA<T>(v.data() + (bi * Cout + co) * HWo, HWo) =
          CMapA<T>(src, HWo) + bias[co];
    }

  auto out = make_op(std::move(v), {x, w, b});
  if (out->requires_grad) {
    Node<T>* o = out.get();
    const int ph = pad_h, pw = pad_w;
    out->backward_fn = [o, x, w, b, B, Cin, H, W, Cout, kh, kw, ph, pw, Ho, Wo,
                        K, N, HWo]() {
      auto& scr = ws<T>();
      scr.gmat.resize(static_cast<size_t>(Cout * N));
      for (int64_t bi = 0; bi < B; ++bi)
        for (int64_t co = 0; co < Cout; ++co) {
          const T* src = o->grad.data() + (bi * Cout + co) * HWo;
          std::copy(src, src + HWo, scr.gmat.data() + co * N + bi * HWo);
        }
      CMapM<T> G(scr.gmat.data(), Cout, N);
      if (w->requires_grad || b->requires_grad) {
        scr.col.resize(static_cast<size_t>(K * N));
        im2col(x->value.data(), B, Cin, H, W, kh, kw, ph, pw, Ho, Wo,
               scr.col.data());
        if (w->requires_grad) {
          w->ensure_grad();
          MapM<T> GW(w->grad.data(), Cout, K);
          CMapM<T> Col(scr.col.data(), K, N);
          GW.noalias() += G * Col.transpose();
        }
        if (b->requires_grad) {
          b->ensure_grad();
          T* gb = b->grad.data();
          for (int64_t co = 0; co < Cout; ++co) gb[co] += G.row(co).sum();
        }
      }
      if (x->requires_grad) {
        x->ensure_grad();
        scr.colgrad.resize(static_cast<size_t>(K * N));
        MapM<T> CG(scr.colgrad.data(), K, N);
        CMapM<T> Wm(w->value.data(), Cout, K);
        CG.noalias() = Wm.transpose() * G;
        col2im_add(scr.colgrad.data(), B, Cin, H, W, kh, kw, ph, pw, Ho, Wo,
                   x->grad.data());
      }
    };
  }
  return out;
}

// --------------------------------------------------------------- batch norm

template <typename T>
Var<T> batchnorm2d(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                   Tensor<T>& running_mean, Tensor<T>& running_var, T momentum,
                   T eps, BnMode mode) {
  if (x->value.rank() != 4)
    throw shape_error("batchnorm2d: expected 4-d input, got " +
                      shape_to_string(x->value.shape()));
  const int64_t B = x->value.dim(0), C = x->value.dim(1),
                HW = x->value.dim(2) * x->value.dim(3);
  if (gamma->value.numel() != C || beta->value.numel() != C ||
      running_mean.numel() != C || running_var.numel() != C)
    throw shape_error("batchnorm2d: per-channel parameter size mismatch");
  const int64_t Nc = B * HW;

  std::vector<T> mean(C), invstd(C);
  if (mode == BnMode::Eval) {
    for (int64_t c = 0; c < C; ++c) {
      mean[c] = running_mean[c];
      invstd[c] = T(1) / std::sqrt(running_var[c] + eps);
    }
  } else {
    for (int64_t c = 0; c < C; ++c) {
      double s = 0.0, s2 = 0.0;
      for (int64_t bi = 0; bi < B; ++bi) {
        const T* p = x->value.data() + (bi * C + c) * HW;
        for (int64_t k = 0; k < HW; ++k) {
          s += p[k];
          s2 += double(p[k]) * double(p[k]);
        }
      }
      const double m = s / double(Nc);
      const double var = std::max(0.0, s2 / double(Nc) - m * m);
      mean[c] = T(m);
      invstd[c] = T(1.0 / std::sqrt(var + double(eps)));
      if (mode == BnMode::Train) {
        const double unbiased = Nc > 1 ? var * double(Nc) / double(Nc - 1) : var;
        running_mean[c] = momentum * running_mean[c] + (T(1) - momentum) * T(m);
        running_var[c] =
            momentum * running_var[c] + (T(1) - momentum) * T(unbiased);
      }
    }
  }

  Tensor<T> v(x->value.shape());
  const T* g = gamma->value.data();
  const T* be = beta->value.data();
  for (int64_t bi = 0; bi < B; ++bi)
    for (int64_t c = 0; c < C; ++c) {
      const T* px = x->value.data() + (bi * C + c) * HW;
      T* py = v.data() + (bi * C + c) * HW;
      const T a = g[c] * invstd[c];
      const T sh = be[c] - a * mean[c];
      MapA<T>(py, HW) = CMapA<T>(px, HW) * a + sh;
    }

  auto out = make_op(std::move(v), {x, gamma, beta});
  if (out->requires_grad) {
    Node<T>* o = out.get();
    const bool batch_stats = mode != BnMode::Eval;
    out->backward_fn = [o, x, gamma, beta, B, C, HW, Nc, mean, invstd,
                        batch_stats]() {
      const T* gm = gamma->value.data();
      for (int64_t c = 0; c < C; ++c) {
        double sum_g = 0.0, sum_gx = 0.0;
        for (int64_t bi = 0; bi < B; ++bi) {
          const T* pg = o->grad.data() + (bi * C + c) * HW;
          const T* px = x->value.data() + (bi * C + c) * HW;
          for (int64_t k = 0; k < HW; ++k) {
            const double xh = double(px[k] - mean[c]) * double(invstd[c]);
            sum_g += pg[k];
            sum_gx += double(pg[k]) * xh;
          }
        }
        if (gamma->requires_grad) {
          gamma->ensure_grad();
          gamma->grad[c] += T(sum_gx);
        }
        if (beta->requires_grad) {
          beta->ensure_grad();
          beta->grad[c] += T(sum_g);
        }
        if (x->requires_grad) {
          x->ensure_grad();
          const T a = gm[c] * invstd[c];
          if (batch_stats) {
            const T mg = T(sum_g / double(Nc));
            const T mgx = T(sum_gx / double(Nc));
            for (int64_t bi = 0; bi < B; ++bi) {
              const T* pg = o->grad.data() + (bi * C + c) * HW;
              const T* px = x->value.data() + (bi * C + c) * HW;
              T* pd = x->grad.data() + (bi * C + c) * HW;
              for (int64_t k = 0; k < HW; ++k) {
                const T xh = (px[k] - mean[c]) * invstd[c];
                pd[k] += a * (pg[k] - mg - xh * mgx);
              }
            }
          } else {
            for (int64_t bi = 0; bi < B; ++bi) {
              const T* pg = o->grad.data() + (bi * C + c) * HW;
              T* pd = x->grad.data() + (bi * C + c) * HW;
              MapA<T>(pd, HW) += CMapA<T>(pg, HW) * a;
            }
          }
        }
      }
    };
  }
  return out;
}

// -------------------------------------------------------------------- losses

template <typename T>
Var<T> mse_pair(const Var<T>& pv, const Var<T>& ph, const Tensor<T>& tv,
                const Tensor<T>& th) {
  if (!pv->value.same_shape(tv) || !ph->value.same_shape(th) ||
      pv->value.dim(0) != ph->value.dim(0))
    throw shape_error("mse_pair: prediction/target shape mismatch");
  const int64_t B = pv->value.dim(0);
  const int64_t nv = pv->value.numel(), nh = ph->value.numel();
  double acc = 0.0;
  {
    const T* p = pv->value.data();
    const T* t = tv.data();
    for (int64_t i = 0; i < nv; ++i) {
      const double d = double(p[i]) - double(t[i]);
      acc += d * d;
    }
    p = ph->value.data();
    t = th.data();
    for (int64_t i = 0; i < nh; ++i) {
      const double d = double(p[i]) - double(t[i]);
      acc += d * d;
    }
  }
  Tensor<T> v = Tensor<T>::scalar(T(acc / (2.0 * double(B))));
  auto out = make_op(std::move(v), {pv, ph});
  if (out->requires_grad) {
    Node<T>* o = out.get();
    Tensor<T> tvc = tv, thc = th;
    out->backward_fn = [o, pv, ph, tvc = std::move(tvc), thc = std::move(thc),
                        B]() {
      const T coef = o->grad[0] / T(B);
      if (pv->requires_grad) {
        pv->ensure_grad();
        const int64_t n = pv->value.numel();
        MapA<T>(pv->grad.data(), n) +=
            (CMapA<T>(pv->value.data(), n) - CMapA<T>(tvc.data(), n)) * coef;
      }
      if (ph->requires_grad) {
        ph->ensure_grad();
        const int64_t n = ph->value.numel();
        MapA<T>(ph->grad.data(), n) +=
            (CMapA<T>(ph->value.data(), n) - CMapA<T>(thc.data(), n)) * coef;
      }
    };
  }
  return out;
}

template <typename T>
Var<T> gauss_nll(const Var<T>& mu, const Var<T>& logvar, const Tensor<T>& y) {
  if (!mu->value.same_shape(logvar->value) || !mu->value.same_shape(y))
    throw shape_error("gauss_nll: mu/logvar/y shape mismatch");
  if (mu->value.rank() != 2)
    throw shape_error("gauss_nll: expected [N, d] inputs");
  const int64_t N = mu->value.dim(0);
  const int64_t n = mu->value.numel();
  constexpr double kLn2Pi = 1.8378770664093454835606594728112;
  double acc = 0.0;
  {
    const T* m = mu->value.data();
    const T* lv = logvar->value.data();
    const T* ty = y.data();
    for (int64_t i = 0; i < n; ++i) {
      const double d = double(ty[i]) - double(m[i]);
      acc += kLn2Pi + double(lv[i]) + d * d * std::exp(-double(lv[i]));
    }
  }
  Tensor<T> v = Tensor<T>::scalar(T(0.5 * acc / double(N)));
  auto out = make_op(std::move(v), {mu, logvar});
  if (out->requires_grad) {
    Node<T>* o = out.get();
    Tensor<T> yc = y;
    out->backward_fn = [o, mu, logvar, yc = std::move(yc), N, n]() {
      const double coef = double(o->grad[0]) / double(N);
      const T* m = mu->value.data();
      const T* lv = logvar->value.data();
      const T* ty = yc.data();
      if (mu->requires_grad) mu->ensure_grad();
      if (logvar->requires_grad) logvar->ensure_grad();
      for (int64_t i = 0; i < n; ++i) {
        const double e = std::exp(-double(lv[i]));
        const double d = double(m[i]) - double(ty[i]);
        if (mu->requires_grad) mu->grad[i] += T(coef * d * e);
        if (logvar->requires_grad)
          logvar->grad[i] += T(0.5 * coef * (1.0 - d * d * e));
      }
    };
  }
  return out;
}

template <typename T>
Var<T> mi_contrast(const Var<T>& mu, const Var<T>& logvar, const Var<T>& psy) {
  if (!mu->value.same_shape(logvar->value) ||
      !mu->value.same_shape(psy->value))
    throw shape_error("mi_contrast: mu/logvar/psy shape mismatch");
  if (mu->value.rank() != 2 || mu->value.dim(0) < 2)
    throw std::invalid_argument(
        "mi_contrast: need [N, d] with N >= 2 (no negative pairs otherwise)");
  const int64_t N = mu->value.dim(0), d = mu->value.dim(1);
  constexpr double kLn2Pi = 1.8378770664093454835606594728112;

  // double-precision copies; the estimate must be exactly permutation
  // invariant, so every batch reduction below uses exact summation
  std::vector<double> M(N * d), E(N * d), P(N * d), slv(N);
  for (int64_t j = 0; j < N; ++j) {
    double s = 0.0;
    for (int64_t k = 0; k < d; ++k) {
      const double lv = double(logvar->value[j * d + k]);
      M[j * d + k] = double(mu->value[j * d + k]);
      E[j * d + k] = std::exp(-lv);
      s += lv;
    }
    slv[j] = s;
  }
  for (int64_t i = 0; i < N * d; ++i) P[i] = double(psy->value[i]);

  std::vector<double> L(N * N), lse(N);
  for (int64_t i = 0; i < N; ++i) {
    for (int64_t j = 0; j < N; ++j) {
      double quad = 0.0;
      const double* pi = P.data() + i * d;
      const double* mj = M.data() + j * d;
      const double* ej = E.data() + j * d;
      for (int64_t k = 0; k < d; ++k) {
        const double df = pi[k] - mj[k];
        quad += df * df * ej[k];
      }
      L[i * N + j] = -0.5 * (double(d) * kLn2Pi + slv[j] + quad);
    }
  }
  ExactSum pos_acc, lse_acc;
  for (int64_t i = 0; i < N; ++i) {
    const double* row = L.data() + i * N;
    double mx = row[0];
    for (int64_t j = 1; j < N; ++j) mx = std::max(mx, row[j]);
    ExactSum es;
    for (int64_t j = 0; j < N; ++j) es.add(std::exp(row[j] - mx));
    lse[i] = mx + std::log(es.value());
    lse_acc.add(lse[i]);
    pos_acc.add(row[i]);  // positive pair L[i][i]
  }
  const double value = pos_acc.value() / double(N) -
                       (lse_acc.value() / double(N) - std::log(double(N)));

  auto out = make_op(Tensor<T>::scalar(T(value)), {mu, logvar, psy});
  if (out->requires_grad) {
    Node<T>* o = out.get();
    out->backward_fn = [o, mu, logvar, psy, N, d, M = std::move(M),
                        E = std::move(E), P = std::move(P), L = std::move(L),
                        lse = std::move(lse)]() {
      const double g = double(o->grad[0]);
      const bool nm = mu->requires_grad, nl = logvar->requires_grad,
                 np = psy->requires_grad;
      if (nm) mu->ensure_grad();
      if (nl) logvar->ensure_grad();
      if (np) psy->ensure_grad();
      for (int64_t i = 0; i < N; ++i) {
        const double* pi = P.data() + i * d;
        for (int64_t j = 0; j < N; ++j) {
          const double s = std::exp(L[i * N + j] - lse[i]);
          const double wij = g * ((i == j ? 1.0 : 0.0) - s) / double(N);
          if (wij == 0.0) continue;
          const double* mj = M.data() + j * d;
          const double* ej = E.data() + j * d;
          for (int64_t k = 0; k < d; ++k) {
            const double df = pi[k] - mj[k];
            const double de = df * ej[k];
            if (np) psy->grad[i * d + k] += T(-wij * de);
            if (nm) mu->grad[j * d + k] += T(wij * de);
            if (nl) logvar->grad[j * d + k] += T(-0.5 * wij * (1.0 - df * de));
          }
        }
      }
    };
  }
  return out;
}

// ----------------------------------------------------- explicit instantiation

template void backward<float>(const Var<float>&);
template void backward<double>(const Var<double>&);

#define DPCSI_INSTANTIATE_OPS(T)                                              \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                       \
  template Var<T> sub<T>(const Var<T>&, const Var<T>&);                       \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                       \
  template Var<T> scale<T>(const Var<T>&, T);                                 \
  template Var<T> add_scalar<T>(const Var<T>&, T);                            \
  template Var<T> square<T>(const Var<T>&);                                   \
  template Var<T> leaky_relu<T>(const Var<T>&, T);                            \
  template Var<T> sigmoid<T>(const Var<T>&);                                  \
  template Var<T> clamp<T>(const Var<T>&, T, T);                              \
  template Var<T> reshape<T>(const Var<T>&, Shape);                           \
  template Var<T> concat1<T>(const Var<T>&, const Var<T>&);                   \
  template Var<T> linear<T>(const Var<T>&, const Var<T>&, const Var<T>&);     \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>&, int, \
                            int, const std::string&);                         \
  template Var<T> batchnorm2d<T>(const Var<T>&, const Var<T>&, const Var<T>&, \
                                 Tensor<T>&, Tensor<T>&, T, T, BnMode);       \
  template Var<T> mse_pair<T>(const Var<T>&, const Var<T>&, const Tensor<T>&, \
                              const Tensor<T>&);                              \
  template Var<T> gauss_nll<T>(const Var<T>&, const Var<T>&,                  \
                               const Tensor<T>&);                             \
  template Var<T> mi_contrast<T>(const Var<T>&, const Var<T>&, const Var<T>&);

DPCSI_INSTANTIATE_OPS(float)
DPCSI_INSTANTIATE_OPS(double)

}  // namespace dpcsi::ag
