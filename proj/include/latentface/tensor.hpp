#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "latentface/common.hpp"

namespace lf {

// Dense row-major tensor. Plain value type; all layout is contiguous.
template <class T>
struct TensorT {
  std::vector<int64_t> shape;
  std::vector<T> data;

  TensorT() = default;
  explicit TensorT(std::vector<int64_t> s) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(numel_of(shape)), T(0));
  }
  TensorT(std::initializer_list<int64_t> s) : TensorT(std::vector<int64_t>(s)) {}

  static int64_t numel_of(const std::vector<int64_t>& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
  }

  static TensorT zeros(std::vector<int64_t> s) { return TensorT(std::move(s)); }
  static TensorT full(std::vector<int64_t> s, T v) {
    TensorT t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int64_t dim(int i) const { return shape[static_cast<size_t>(i)]; }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  T& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

  T& at2(int64_t i, int64_t j) { return data[static_cast<size_t>(i * shape[1] + j)]; }
  const T& at2(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * shape[1] + j)]; }
  T& at3(int64_t i, int64_t j, int64_t k) {
    return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
  }
  const T& at3(int64_t i, int64_t j, int64_t k) const {
    return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
  }
  T& at4(int64_t i, int64_t j, int64_t k, int64_t l) {
    return data[static_cast<size_t>(((i * shape[1] + j) * shape[2] + k) * shape[3] + l)];
  }
  const T& at4(int64_t i, int64_t j, int64_t k, int64_t l) const {
    return data[static_cast<size_t>(((i * shape[1] + j) * shape[2] + k) * shape[3] + l)];
  }

  bool same_shape(const TensorT& o) const { return shape == o.shape; }

  TensorT reshaped(std::vector<int64_t> s) const {
    TensorT t;
    t.shape = std::move(s);
    t.data = data;
    return t;
  }

  bool all_finite() const {
    for (T v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  template <class U>
  TensorT<U> cast() const {
    TensorT<U> t;
    t.shape = shape;
    t.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) t.data[i] = static_cast<U>(data[i]);
    return t;
  }

  void fill_uniform(Rng& rng, double lo, double hi) {
    for (T& v : data) v = static_cast<T>(rng.uniform(lo, hi));
  }
  void fill_normal(Rng& rng, double mean = 0.0, double stddev = 1.0) {
    for (T& v : data) v = static_cast<T>(mean + stddev * rng.normal());
  }
};

using Tensor = TensorT<float>;
using DTensor = TensorT<double>;

// column j -> column W-1-j on the last axis of a [H,W] or [C,H,W] map
template <class T>
TensorT<T> hflip(const TensorT<T>& m) {
  TensorT<T> out;
  out.shape = m.shape;
  out.data.resize(m.data.size());
  if (m.rank() < 1) return out;
  int64_t w = m.shape.back();
  int64_t rows = m.numel() / w;
  for (int64_t r = 0; r < rows; ++r) {
    const T* src = m.ptr() + r * w;
    T* dst = out.data.data() + r * w;
    for (int64_t j = 0; j < w; ++j) dst[j] = src[w - 1 - j];
  }
  return out;
}

}  // namespace lf
