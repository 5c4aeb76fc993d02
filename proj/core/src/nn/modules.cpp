#include "kwspot/nn/modules.hpp"

#include <cmath>

#include "kwspot/nn/ops.hpp"
#include "kwspot/rng.hpp"

namespace kwspot::nn {

template <typename T>
void initialize_params(ParamSet<T>& ps, uint64_t seed) {
  Rng rng(derive_seed(seed, 0x696e6974));  // "init"
  for (auto& e : ps.entries) {
    switch (e.kind) {
      case InitKind::zero:
        e.value.zero();
        break;
      case InitKind::one:
        for (T& v : e.value.data) v = T(1);
        break;
      case InitKind::he_fan_in: {
        size_t fan_in = 1;
        for (size_t d = 1; d < e.value.shape.size(); ++d) fan_in *= size_t(e.value.shape[d]);
        double std = std::sqrt(2.0 / double(fan_in));
        for (T& v : e.value.data) v = T(rng.gaussian() * std);
        break;
      }
      case InitKind::normal:
        for (T& v : e.value.data) v = T(rng.gaussian() * e.arg);
        break;
    }
  }
}

// ---- Conv2d ----------------------------------------------------------------

template <typename T>
void Conv2d<T>::init(ParamSet<T>& ps, const std::string& name, int cin, int cout, int k,
                     int stride_, int pad_, InitKind wkind, double warg) {
  stride = stride_;
  pad = pad_;
  w_id = ps.add(name + ".w", {cout, cin, k, k}, wkind, warg);
  b_id = ps.add(name + ".b", {cout}, InitKind::zero);
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const ParamSet<T>& ps, const Tensor<T>& x, Ctx& ctx) const {
  ctx.x = x;
  Tensor<T> y;
  conv2d_forward(x, ps[w_id], &ps[b_id], stride, pad, y);
  return y;
}

template <typename T>
void Conv2d<T>::backward(const ParamSet<T>& ps, const Ctx& ctx, const Tensor<T>& dy,
                         Tensor<T>* dx, GradStore<T>& gs) const {
  conv2d_backward(ctx.x, ps[w_id], dy, stride, pad, dx, gs.of(ps, w_id), gs.of(ps, b_id));
}

// ---- ConvTranspose2d ---------------------------------------------------------

template <typename T>
void ConvTranspose2d<T>::init(ParamSet<T>& ps, const std::string& name, int cin, int cout,
                              int k, int stride_) {
  stride = stride_;
  w_id = ps.add(name + ".w", {cin, cout, k, k}, InitKind::he_fan_in);
  b_id = ps.add(name + ".b", {cout}, InitKind::zero);
}

template <typename T>
Tensor<T> ConvTranspose2d<T>::forward(const ParamSet<T>& ps, const Tensor<T>& x,
                                      Ctx& ctx) const {
  ctx.x = x;
  Tensor<T> y;
  conv_transpose2d_forward(x, ps[w_id], &ps[b_id], stride, y);
  return y;
}

template <typename T>
void ConvTranspose2d<T>::backward(const ParamSet<T>& ps, const Ctx& ctx, const Tensor<T>& dy,
                                  Tensor<T>* dx, GradStore<T>& gs) const {
  conv_transpose2d_backward(ctx.x, ps[w_id], dy, stride, dx, gs.of(ps, w_id), gs.of(ps, b_id));
}

// ---- GroupNorm ---------------------------------------------------------------

template <typename T>
void GroupNorm<T>::init(ParamSet<T>& ps, const std::string& name, int channels, int groups_) {
  groups = groups_;
  gamma_id = ps.add(name + ".gamma", {channels}, InitKind::one);
  beta_id = ps.add(name + ".beta", {channels}, InitKind::zero);
}

template <typename T>
Tensor<T> GroupNorm<T>::forward(const ParamSet<T>& ps, const Tensor<T>& x, Ctx& ctx) const {
  ctx.x = x;
  Tensor<T> y;
  group_norm_forward(x, ps[gamma_id], ps[beta_id], groups, T(1e-5), y, ctx.mean, ctx.rstd);
  return y;
}

template <typename T>
void GroupNorm<T>::backward(const ParamSet<T>& ps, const Ctx& ctx, const Tensor<T>& dy,
                            Tensor<T>* dx, GradStore<T>& gs) const {
  group_norm_backward(ctx.x, ps[gamma_id], ctx.mean, ctx.rstd, groups, dy, dx,
                      gs.of(ps, gamma_id), gs.of(ps, beta_id));
}

// ---- Linear ------------------------------------------------------------------

template <typename T>
void Linear<T>::init(ParamSet<T>& ps, const std::string& name, int in, int out, InitKind wkind,
                     double warg) {
  w_id = ps.add(name + ".w", {out, in}, wkind, warg);
  b_id = ps.add(name + ".b", {out}, InitKind::zero);
}

template <typename T>
Tensor<T> Linear<T>::forward(const ParamSet<T>& ps, const Tensor<T>& x, Ctx& ctx) const {
  ctx.x = x;
  Tensor<T> y;
  linear_forward(x, ps[w_id], &ps[b_id], y);
  return y;
}

template <typename T>
void Linear<T>::backward(const ParamSet<T>& ps, const Ctx& ctx, const Tensor<T>& dy,
                         Tensor<T>* dx, GradStore<T>& gs) const {
  linear_backward(ctx.x, ps[w_id], dy, dx, gs.of(ps, w_id), gs.of(ps, b_id));
}

// ---- ConvBlock ---------------------------------------------------------------

template <typename T>
void ConvBlock<T>::init(ParamSet<T>& ps, const std::string& name, int cin, int cout, int k,
                        int stride, int pad, int groups) {
  conv.init(ps, name + ".conv", cin, cout, k, stride, pad);
  gn.init(ps, name + ".gn", cout, groups);
}

template <typename T>
Tensor<T> ConvBlock<T>::forward(const ParamSet<T>& ps, const Tensor<T>& x, Ctx& ctx) const {
  Tensor<T> h = conv.forward(ps, x, ctx.conv);
  ctx.pre_relu = gn.forward(ps, h, ctx.gn);
  Tensor<T> y;
  relu_forward(ctx.pre_relu, y);
  return y;
}

template <typename T>
void ConvBlock<T>::backward(const ParamSet<T>& ps, const Ctx& ctx, const Tensor<T>& dy,
                            Tensor<T>* dx, GradStore<T>& gs) const {
  Tensor<T> d1(ctx.pre_relu.shape);
  relu_backward(ctx.pre_relu, dy, d1);
  Tensor<T> d2(ctx.gn.x.shape);
  gn.backward(ps, ctx.gn, d1, &d2, gs);
  conv.backward(ps, ctx.conv, d2, dx, gs);
}

// ---- ResidualBlock -------------------------------------------------------------

template <typename T>
void ResidualBlock<T>::init(ParamSet<T>& ps, const std::string& name, int cin, int cout,
                            int stride, int groups) {
  block1.init(ps, name + ".b1", cin, cout, 3, stride, 1, groups);
  conv2.init(ps, name + ".conv2", cout, cout, 3, 1, 1);
  gn2.init(ps, name + ".gn2", cout, groups);
  has_projection = stride != 1 || cin != cout;
  if (has_projection) {
    proj.init(ps, name + ".proj", cin, cout, 1, stride, 0);
    proj_gn.init(ps, name + ".proj_gn", cout, groups);
  }
}

template <typename T>
Tensor<T> ResidualBlock<T>::forward(const ParamSet<T>& ps, const Tensor<T>& x, Ctx& ctx) const {
  ctx.x = x;
  Tensor<T> h = block1.forward(ps, x, ctx.block1);
  h = conv2.forward(ps, h, ctx.conv2);
  h = gn2.forward(ps, h, ctx.gn2);

  Tensor<T> skip;
  if (has_projection) {
    skip = proj.forward(ps, x, ctx.proj);
    skip = proj_gn.forward(ps, skip, ctx.proj_gn);
  } else {
    skip = x;
  }
  for (size_t i = 0; i < h.data.size(); ++i) h.data[i] += skip.data[i];
  ctx.pre_relu = h;
  Tensor<T> y;
  relu_forward(ctx.pre_relu, y);
  return y;
}

template <typename T>
void ResidualBlock<T>::backward(const ParamSet<T>& ps, const Ctx& ctx, const Tensor<T>& dy,
                                Tensor<T>* dx, GradStore<T>& gs) const {
  Tensor<T> dsum(ctx.pre_relu.shape);
  relu_backward(ctx.pre_relu, dy, dsum);

  // Main path.
  Tensor<T> d_gn2(ctx.gn2.x.shape);
  gn2.backward(ps, ctx.gn2, dsum, &d_gn2, gs);
  Tensor<T> d_b1_out(ctx.conv2.x.shape);
  conv2.backward(ps, ctx.conv2, d_gn2, &d_b1_out, gs);
  block1.backward(ps, ctx.block1, d_b1_out, dx, gs);

  // Skip path.
  if (has_projection) {
    Tensor<T> d_projpre(ctx.proj_gn.x.shape);
    proj_gn.backward(ps, ctx.proj_gn, dsum, &d_projpre, gs);
    proj.backward(ps, ctx.proj, d_projpre, dx, gs);
  } else if (dx) {
    for (size_t i = 0; i < dsum.data.size(); ++i) dx->data[i] += dsum.data[i];
  }
}

#define KWSPOT_INSTANTIATE_MODULES(T)          \
  template void initialize_params<T>(ParamSet<T>&, uint64_t); \
  template struct Conv2d<T>;                   \
  template struct ConvTranspose2d<T>;          \
  template struct GroupNorm<T>;                \
  template struct Linear<T>;                   \
  template struct ConvBlock<T>;                \
  template struct ResidualBlock<T>

KWSPOT_INSTANTIATE_MODULES(float);
KWSPOT_INSTANTIATE_MODULES(double);

#undef KWSPOT_INSTANTIATE_MODULES

}  // namespace kwspot::nn
