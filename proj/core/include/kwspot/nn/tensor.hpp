#pragma once

#include <cstddef>
#include <initializer_list>
#include <vector>

namespace kwspot::nn {

// Dense row-major tensor. Layout conventions: feature maps are [C, H, W],
// batched vectors [B, D], conv weights [Cout, Cin, kh, kw].
template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(numel_of(shape), T(0));
  }
  Tensor(std::initializer_list<int> s) : Tensor(std::vector<int>(s)) {}

  static size_t numel_of(const std::vector<int>& s) {
    size_t n = 1;
    for (int d : s) n *= size_t(d);
    return n;
  }

  size_t numel() const { return data.size(); }
  bool empty() const { return data.empty(); }
  int dim(int i) const { return shape[size_t(i)]; }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  T& at3(int c, int y, int x) {
    return data[(size_t(c) * shape[1] + size_t(y)) * shape[2] + size_t(x)];
  }
  T at3(int c, int y, int x) const {
    return data[(size_t(c) * shape[1] + size_t(y)) * shape[2] + size_t(x)];
  }
  T& at2(int r, int c) { return data[size_t(r) * shape[1] + size_t(c)]; }
  T at2(int r, int c) const { return data[size_t(r) * shape[1] + size_t(c)]; }

  void zero() { data.assign(data.size(), T(0)); }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = U(data[i]);
    return out;
  }
};

}  // namespace kwspot::nn
