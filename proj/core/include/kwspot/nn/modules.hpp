#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kwspot/nn/tensor.hpp"

namespace kwspot::nn {

enum class InitKind { zero, one, he_fan_in, normal };

// Flat parameter registry. Layers hold indices into it, which keeps layer
// objects free of mutable state: forward/backward can run concurrently for
// different images as long as each caller owns its Ctx and GradStore.
template <typename T>
struct ParamSet {
  struct Entry {
    std::string name;
    Tensor<T> value;
    InitKind kind = InitKind::zero;
    double arg = 0.0;
  };
  std::vector<Entry> entries;

  int add(std::string name, std::vector<int> shape, InitKind kind, double arg = 0.0) {
    entries.push_back(Entry{std::move(name), Tensor<T>(std::move(shape)), kind, arg});
    return int(entries.size()) - 1;
  }
  Tensor<T>& operator[](int id) { return entries[size_t(id)].value; }
  const Tensor<T>& operator[](int id) const { return entries[size_t(id)].value; }
  size_t count() const { return entries.size(); }
  size_t scalar_count() const {
    size_t n = 0;
    for (const Entry& e : entries) n += e.value.numel();
    return n;
  }
};

// Draws every parameter in registration order from one seeded stream.
template <typename T>
void initialize_params(ParamSet<T>& ps, uint64_t seed);

// Per-caller gradient buffer; entries stay empty until first touched, so an
// untouched tensor is distinguishable from a zero gradient.
template <typename T>
struct GradStore {
  std::vector<Tensor<T>> grads;

  Tensor<T>& of(const ParamSet<T>& ps, int id) {
    if (grads.size() != ps.count()) grads.resize(ps.count());
    Tensor<T>& g = grads[size_t(id)];
    if (g.shape.empty()) g = Tensor<T>(ps.entries[size_t(id)].value.shape);
    return g;
  }
  const Tensor<T>* peek(int id) const {
    if (size_t(id) >= grads.size() || grads[size_t(id)].shape.empty()) return nullptr;
    return &grads[size_t(id)];
  }
  // dst[i] += this[i], in index order.
  void accumulate_into(GradStore& dst, const ParamSet<T>& ps) const {
    for (size_t i = 0; i < grads.size(); ++i) {
      if (grads[i].shape.empty()) continue;
      Tensor<T>& d = dst.of(ps, int(i));
      for (size_t k = 0; k < d.data.size(); ++k) d.data[k] += grads[i].data[k];
    }
  }
  void scale(T s) {
    for (Tensor<T>& g : grads)
      for (T& v : g.data) v *= s;
  }
};

template <typename T>
struct Conv2d {
  int w_id = -1, b_id = -1;
  int stride = 1, pad = 0;

  struct Ctx {
    Tensor<T> x;
  };

  void init(ParamSet<T>& ps, const std::string& name, int cin, int cout, int k,
            int stride_, int pad_, InitKind wkind = InitKind::he_fan_in, double warg = 0.0);
  Tensor<T> forward(const ParamSet<T>& ps, const Tensor<T>& x, Ctx& ctx) const;
  void backward(const ParamSet<T>& ps, const Ctx& ctx, const Tensor<T>& dy, Tensor<T>* dx,
                GradStore<T>& gs) const;
};

template <typename T>
struct ConvTranspose2d {
  int w_id = -1, b_id = -1;
  int stride = 2;

  struct Ctx {
    Tensor<T> x;
  };

  void init(ParamSet<T>& ps, const std::string& name, int cin, int cout, int k, int stride_);
  Tensor<T> forward(const ParamSet<T>& ps, const Tensor<T>& x, Ctx& ctx) const;
  void backward(const ParamSet<T>& ps, const Ctx& ctx, const Tensor<T>& dy, Tensor<T>* dx,
                GradStore<T>& gs) const;
};

template <typename T>
struct GroupNorm {
  int gamma_id = -1, beta_id = -1;
  int groups = 8;

  struct Ctx {
    Tensor<T> x, mean, rstd;
  };

  void init(ParamSet<T>& ps, const std::string& name, int channels, int groups_);
  Tensor<T> forward(const ParamSet<T>& ps, const Tensor<T>& x, Ctx& ctx) const;
  void backward(const ParamSet<T>& ps, const Ctx& ctx, const Tensor<T>& dy, Tensor<T>* dx,
                GradStore<T>& gs) const;
};

template <typename T>
struct Linear {
  int w_id = -1, b_id = -1;

  struct Ctx {
    Tensor<T> x;
  };

  void init(ParamSet<T>& ps, const std::string& name, int in, int out,
            InitKind wkind = InitKind::he_fan_in, double warg = 0.0);
  Tensor<T> forward(const ParamSet<T>& ps, const Tensor<T>& x, Ctx& ctx) const;
  void backward(const ParamSet<T>& ps, const Ctx& ctx, const Tensor<T>& dy, Tensor<T>* dx,
                GradStore<T>& gs) const;
};

// conv -> group norm -> relu
template <typename T>
struct ConvBlock {
  Conv2d<T> conv;
  GroupNorm<T> gn;

  struct Ctx {
    typename Conv2d<T>::Ctx conv;
    typename GroupNorm<T>::Ctx gn;
    Tensor<T> pre_relu;
  };

  void init(ParamSet<T>& ps, const std::string& name, int cin, int cout, int k, int stride,
            int pad, int groups);
  Tensor<T> forward(const ParamSet<T>& ps, const Tensor<T>& x, Ctx& ctx) const;
  void backward(const ParamSet<T>& ps, const Ctx& ctx, const Tensor<T>& dy, Tensor<T>* dx,
                GradStore<T>& gs) const;
};

// Basic residual block: conv-gn-relu, conv-gn, (+ projection), add, relu.
template <typename T>
struct ResidualBlock {
  ConvBlock<T> block1;
  Conv2d<T> conv2;
  GroupNorm<T> gn2;
  bool has_projection = false;
  Conv2d<T> proj;
  GroupNorm<T> proj_gn;

  struct Ctx {
    typename ConvBlock<T>::Ctx block1;
    typename Conv2d<T>::Ctx conv2;
    typename GroupNorm<T>::Ctx gn2;
    typename Conv2d<T>::Ctx proj;
    typename GroupNorm<T>::Ctx proj_gn;
    Tensor<T> x, pre_relu;
  };

  void init(ParamSet<T>& ps, const std::string& name, int cin, int cout, int stride, int groups);
  Tensor<T> forward(const ParamSet<T>& ps, const Tensor<T>& x, Ctx& ctx) const;
  void backward(const ParamSet<T>& ps, const Ctx& ctx, const Tensor<T>& dy, Tensor<T>* dx,
                GradStore<T>& gs) const;
};

}  // namespace kwspot::nn
