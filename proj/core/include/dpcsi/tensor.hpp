// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <new>
#include <numeric>
#include <string>
#include <vector>

#include "dpcsi/common.hpp"

namespace dpcsi {

using Shape = std::vector<int64_t>;

std::string shape_to_string(const Shape& s);

/// 64-byte-aligned allocator. Keeping every numeric buffer at a fixed
/// alignment pins the SIMD lane split of vectorized reductions, so results
/// cannot drift with heap layout history.
template <typename T>
struct AlignedAlloc {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAlloc() = default;
  template <typename U>
  AlignedAlloc(const AlignedAlloc<U>&) {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), kAlign));
  }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <typename U>
  bool operator==(const AlignedAlloc<U>&) const {
    return true;
  }
};

template <typename T>
using AlignedVec = std::vector<T, AlignedAlloc<T>>;

/// Dense row-major tensor. Plain value semantics; all hot math happens
/// through Eigen maps over data().
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape)
      : shape_(std::move(shape)), buf_(count(shape_), T(0)) {}

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, T v) {
    Tensor t(std::move(shape));
    t.fill(v);
    return t;
  }

  static Tensor scalar(T v) { return full({1}, v); }

  static Tensor from(Shape shape, const std::vector<T>& data) {
    if (count(shape) != static_cast<int64_t>(data.size()))
      throw shape_error("Tensor::from: data size does not match shape " +
                        shape_to_string(shape));
    Tensor t;
    t.shape_ = std::move(shape);
    t.buf_.assign(data.begin(), data.end());
    return t;
  }

  int64_t numel() const { return static_cast<int64_t>(buf_.size()); }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  const Shape& shape() const { return shape_; }

  T* data() { return buf_.data(); }
  const T* data() const { return buf_.data(); }

  T& operator[](int64_t i) { return buf_[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return buf_[static_cast<size_t>(i)]; }

  T& at(int64_t i, int64_t j) { return buf_[i * shape_[1] + j]; }
  const T& at(int64_t i, int64_t j) const { return buf_[i * shape_[1] + j]; }
  T& at(int64_t i, int64_t j, int64_t k) {
    return buf_[(i * shape_[1] + j) * shape_[2] + k];
  }
  T& at(int64_t i, int64_t j, int64_t k, int64_t l) {
    return buf_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }
  const T& at(int64_t i, int64_t j, int64_t k, int64_t l) const {
    return buf_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  void fill(T v) { std::fill(buf_.begin(), buf_.end(), v); }

  Tensor reshaped(Shape shape) const {
    if (count(shape) != numel())
      throw shape_error("Tensor::reshaped: element count mismatch, " +
                        shape_to_string(shape_) + " -> " +
                        shape_to_string(shape));
    Tensor t = *this;
    t.shape_ = std::move(shape);
    return t;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (size_t i = 0; i < buf_.size(); ++i)
      out[static_cast<int64_t>(i)] = static_cast<U>(buf_[i]);
    return out;
  }

  static int64_t count(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) {
      if (d < 0) throw shape_error("negative dimension in shape");
      n *= d;
    }
    return n;
  }

 private:
  Shape shape_;
  AlignedVec<T> buf_;
};

}  // namespace dpcsi
