#include "kwspot/nn/ops.hpp"

#define EIGEN_DONT_PARALLELIZE
#include <Eigen/Core>

#include <algorithm>
#include <cmath>

#include "kwspot/errors.hpp"

namespace kwspot::nn {

namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<Mat<T>>;
template <typename T>
using CMatMap = Eigen::Map<const Mat<T>>;

template <typename T>
std::vector<T>& workspace() {
  thread_local std::vector<T> buf;
  return buf;
}

inline int conv_out(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// cols is [Cin*kh*kw, Ho*Wo] row-major.
template <typename T>
void im2col(const Tensor<T>& x, int kh, int kw, int stride, int pad, int ho, int wo, T* cols) {
  const int cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  const size_t n = size_t(ho) * wo;
  for (int ci = 0; ci < cin; ++ci) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        T* row = cols + (size_t(ci) * kh * kw + size_t(ky) * kw + kx) * n;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride + ky - pad;
          T* dst = row + size_t(oy) * wo;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + wo, T(0));
            continue;
          }
          const T* src = x.ptr() + (size_t(ci) * h + iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride + kx - pad;
            dst[ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, int cin, int h, int w, int kh, int kw, int stride, int pad,
                int ho, int wo, Tensor<T>& dx) {
  const size_t n = size_t(ho) * wo;
  for (int ci = 0; ci < cin; ++ci) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const T* row = cols + (size_t(ci) * kh * kw + size_t(ky) * kw + kx) * n;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= h) continue;
          T* dst = dx.ptr() + (size_t(ci) * h + iy) * w;
          const T* src = row + size_t(oy) * wo;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride + kx - pad;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
void conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* b,
                    int stride, int pad, Tensor<T>& y) {
  const int cout = w.dim(0), cin = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const int ho = conv_out(x.dim(1), kh, stride, pad);
  const int wo = conv_out(x.dim(2), kw, stride, pad);
  y = Tensor<T>({cout, ho, wo});

  const int k = cin * kh * kw;
  const size_t n = size_t(ho) * wo;
  auto& buf = workspace<T>();
  buf.resize(size_t(k) * n);
  im2col(x, kh, kw, stride, pad, ho, wo, buf.data());

  MatMap<T>(y.ptr(), cout, long(n)).noalias() =
      CMatMap<T>(w.ptr(), cout, k) * CMatMap<T>(buf.data(), k, long(n));
  if (b)
    for (int co = 0; co < cout; ++co)
      MatMap<T>(y.ptr() + size_t(co) * n, 1, long(n)).array() += b->data[size_t(co)];
}

template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy,
                     int stride, int pad, Tensor<T>* dx, Tensor<T>& dw, Tensor<T>& db) {
  const int cout = w.dim(0), cin = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const int ho = dy.dim(1), wo = dy.dim(2);
  const int k = cin * kh * kw;
  const size_t n = size_t(ho) * wo;

  auto& buf = workspace<T>();
  buf.resize(size_t(k) * n);
  im2col(x, kh, kw, stride, pad, ho, wo, buf.data());

  CMatMap<T> dym(dy.ptr(), cout, long(n));
  MatMap<T>(dw.ptr(), cout, k).noalias() +=
      dym * CMatMap<T>(buf.data(), k, long(n)).transpose();
  for (int co = 0; co < cout; ++co) db.data[size_t(co)] += dym.row(co).sum();

  if (dx) {
    // Reuse the workspace for dcols; im2col contents are consumed above.
    MatMap<T>(buf.data(), k, long(n)).noalias() =
        CMatMap<T>(w.ptr(), cout, k).transpose() * dym;
    col2im_add(buf.data(), cin, x.dim(1), x.dim(2), kh, kw, stride, pad, ho, wo, *dx);
  }
}

template <typename T>
void conv_transpose2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* b,
                              int stride, Tensor<T>& y) {
  const int cin = w.dim(0), cout = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const int h = x.dim(1), wd = x.dim(2);
  const int ho = (h - 1) * stride + kh;
  const int wo = (wd - 1) * stride + kw;
  y = Tensor<T>({cout, ho, wo});

  const size_t n = size_t(h) * wd;
  auto& buf = workspace<T>();
  buf.resize(size_t(cout) * n);
  for (int ky = 0; ky < kh; ++ky) {
    for (int kx = 0; kx < kw; ++kx) {
      // wk: [Cin, Cout] slice at (ky, kx); yk = wk^T * x.
      Mat<T> wk(cin, cout);
      for (int ci = 0; ci < cin; ++ci)
        for (int co = 0; co < cout; ++co)
          wk(ci, co) = w.data[((size_t(ci) * cout + co) * kh + ky) * kw + kx];
      MatMap<T>(buf.data(), cout, long(n)).noalias() =
          wk.transpose() * CMatMap<T>(x.ptr(), cin, long(n));
      for (int co = 0; co < cout; ++co)
        for (int iy = 0; iy < h; ++iy)
          for (int ix = 0; ix < wd; ++ix)
            y.at3(co, iy * stride + ky, ix * stride + kx) +=
                buf[size_t(co) * n + size_t(iy) * wd + ix];
    }
  }
  if (b)
    for (int co = 0; co < cout; ++co) {
      T* p = y.ptr() + size_t(co) * ho * wo;
      for (size_t i = 0; i < size_t(ho) * wo; ++i) p[i] += b->data[size_t(co)];
    }
}

template <typename T>
void conv_transpose2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy,
                               int stride, Tensor<T>* dx, Tensor<T>& dw, Tensor<T>& db) {
  const int cin = w.dim(0), cout = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const int h = x.dim(1), wd = x.dim(2);
  const size_t n = size_t(h) * wd;

  for (int co = 0; co < cout; ++co) {
    const T* p = dy.ptr() + size_t(co) * dy.dim(1) * dy.dim(2);
    T acc = 0;
    for (size_t i = 0; i < size_t(dy.dim(1)) * dy.dim(2); ++i) acc += p[i];
    db.data[size_t(co)] += acc;
  }

  auto& buf = workspace<T>();
  buf.resize(size_t(cout) * n);
  for (int ky = 0; ky < kh; ++ky) {
    for (int kx = 0; kx < kw; ++kx) {
      // Gather dyk at the positions this kernel tap wrote.
      for (int co = 0; co < cout; ++co)
        for (int iy = 0; iy < h; ++iy)
          for (int ix = 0; ix < wd; ++ix)
            buf[size_t(co) * n + size_t(iy) * wd + ix] =
                dy.at3(co, iy * stride + ky, ix * stride + kx);
      CMatMap<T> dyk(buf.data(), cout, long(n));
      CMatMap<T> xm(x.ptr(), cin, long(n));
      Mat<T> dwk = xm * dyk.transpose();  // [Cin, Cout]
      for (int ci = 0; ci < cin; ++ci)
        for (int co = 0; co < cout; ++co)
          dw.data[((size_t(ci) * cout + co) * kh + ky) * kw + kx] += dwk(ci, co);
      if (dx) {
        Mat<T> wk(cin, cout);
        for (int ci = 0; ci < cin; ++ci)
          for (int co = 0; co < cout; ++co)
            wk(ci, co) = w.data[((size_t(ci) * cout + co) * kh + ky) * kw + kx];
        MatMap<T>(dx->ptr(), cin, long(n)).noalias() += wk * dyk;
      }
    }
  }
}

template <typename T>
void relu_forward(const Tensor<T>& x, Tensor<T>& y) {
  y.shape = x.shape;
  y.data.resize(x.data.size());
  for (size_t i = 0; i < x.data.size(); ++i) y.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
}

template <typename T>
void relu_backward(const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>& dx) {
  for (size_t i = 0; i < x.data.size(); ++i)
    if (x.data[i] > T(0)) dx.data[i] += dy.data[i];
}

template <typename T>
void group_norm_forward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                        int groups, T eps, Tensor<T>& y, Tensor<T>& mean, Tensor<T>& rstd) {
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int cpg = c / groups;
  const size_t plane = size_t(h) * w;
  const size_t m = size_t(cpg) * plane;
  y = Tensor<T>(x.shape);
  mean = Tensor<T>({groups});
  rstd = Tensor<T>({groups});

  for (int g = 0; g < groups; ++g) {
    const T* xs = x.ptr() + size_t(g) * m;
    T mu = 0;
    for (size_t i = 0; i < m; ++i) mu += xs[i];
    mu /= T(m);
    T var = 0;
    for (size_t i = 0; i < m; ++i) {
      T d = xs[i] - mu;
      var += d * d;
    }
    var /= T(m);
    T rs = T(1) / std::sqrt(var + eps);
    mean.data[size_t(g)] = mu;
    rstd.data[size_t(g)] = rs;
    for (int cc = 0; cc < cpg; ++cc) {
      const int ch = g * cpg + cc;
      const T gm = gamma.data[size_t(ch)], bt = beta.data[size_t(ch)];
      const T* src = x.ptr() + size_t(ch) * plane;
      T* dst = y.ptr() + size_t(ch) * plane;
      for (size_t i = 0; i < plane; ++i) dst[i] = (src[i] - mu) * rs * gm + bt;
    }
  }
}

template <typename T>
void group_norm_backward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& mean,
                         const Tensor<T>& rstd, int groups, const Tensor<T>& dy,
                         Tensor<T>* dx, Tensor<T>& dgamma, Tensor<T>& dbeta) {
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int cpg = c / groups;
  const size_t plane = size_t(h) * w;
  const T m = T(size_t(cpg) * plane);

  for (int g = 0; g < groups; ++g) {
    const T mu = mean.data[size_t(g)], rs = rstd.data[size_t(g)];
    T s1 = 0, s2 = 0;
    for (int cc = 0; cc < cpg; ++cc) {
      const int ch = g * cpg + cc;
      const T gm = gamma.data[size_t(ch)];
      const T* xs = x.ptr() + size_t(ch) * plane;
      const T* dys = dy.ptr() + size_t(ch) * plane;
      T dg = 0, dbt = 0;
      for (size_t i = 0; i < plane; ++i) {
        const T xh = (xs[i] - mu) * rs;
        dg += dys[i] * xh;
        dbt += dys[i];
        s1 += dys[i] * gm;
        s2 += dys[i] * gm * xh;
      }
      dgamma.data[size_t(ch)] += dg;
      dbeta.data[size_t(ch)] += dbt;
    }
    if (dx) {
      for (int cc = 0; cc < cpg; ++cc) {
        const int ch = g * cpg + cc;
        const T gm = gamma.data[size_t(ch)];
        const T* xs = x.ptr() + size_t(ch) * plane;
        const T* dys = dy.ptr() + size_t(ch) * plane;
        T* dxs = dx->ptr() + size_t(ch) * plane;
        for (size_t i = 0; i < plane; ++i) {
          const T xh = (xs[i] - mu) * rs;
          dxs[i] += rs * (dys[i] * gm - (s1 + xh * s2) / m);
        }
      }
    }
  }
}

template <typename T>
void linear_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* b, Tensor<T>& y) {
  const int bsz = x.dim(0), in = x.dim(1), out = w.dim(0);
  y = Tensor<T>({bsz, out});
  MatMap<T>(y.ptr(), bsz, out).noalias() =
      CMatMap<T>(x.ptr(), bsz, in) * CMatMap<T>(w.ptr(), out, in).transpose();
  if (b)
    for (int r = 0; r < bsz; ++r)
      for (int c = 0; c < out; ++c) y.at2(r, c) += b->data[size_t(c)];
}

template <typename T>
void linear_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy,
                     Tensor<T>* dx, Tensor<T>& dw, Tensor<T>& db) {
  const int bsz = x.dim(0), in = x.dim(1), out = w.dim(0);
  CMatMap<T> dym(dy.ptr(), bsz, out);
  MatMap<T>(dw.ptr(), out, in).noalias() += dym.transpose() * CMatMap<T>(x.ptr(), bsz, in);
  for (int c = 0; c < out; ++c) db.data[size_t(c)] += dym.col(c).sum();
  if (dx) MatMap<T>(dx->ptr(), bsz, in).noalias() += dym * CMatMap<T>(w.ptr(), out, in);
}

template <typename T>
void subsample2_forward(const Tensor<T>& x, Tensor<T>& y) {
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int ho = (h + 1) / 2, wo = (w + 1) / 2;
  y = Tensor<T>({c, ho, wo});
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < ho; ++i)
      for (int j = 0; j < wo; ++j) y.at3(ch, i, j) = x.at3(ch, 2 * i, 2 * j);
}

template <typename T>
void subsample2_backward(const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>& dx) {
  const int c = x.dim(0);
  const int ho = dy.dim(1), wo = dy.dim(2);
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < ho; ++i)
      for (int j = 0; j < wo; ++j) dx.at3(ch, 2 * i, 2 * j) += dy.at3(ch, i, j);
}

template <typename T>
void upsample2_forward(const Tensor<T>& x, Tensor<T>& y) {
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  y = Tensor<T>({c, 2 * h, 2 * w});
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < 2 * h; ++i)
      for (int j = 0; j < 2 * w; ++j) y.at3(ch, i, j) = x.at3(ch, i / 2, j / 2);
}

template <typename T>
void upsample2_backward(const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>& dx) {
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < 2 * h; ++i)
      for (int j = 0; j < 2 * w; ++j) dx.at3(ch, i / 2, j / 2) += dy.at3(ch, i, j);
}

namespace {

struct BilinearTap {
  int x0, x1, y0, y1;
  double ax, ay;
};

inline BilinearTap tap_at(double u, double v, int w, int h) {
  u = std::clamp(u, 0.0, double(w - 1));
  v = std::clamp(v, 0.0, double(h - 1));
  BilinearTap t;
  t.x0 = int(std::floor(u));
  t.y0 = int(std::floor(v));
  t.x1 = std::min(t.x0 + 1, w - 1);
  t.y1 = std::min(t.y0 + 1, h - 1);
  t.ax = u - t.x0;
  t.ay = v - t.y0;
  return t;
}

}  // namespace

template <typename T>
void roi_align_forward(const Tensor<T>& feat, const std::array<double, 4>& box,
                       double stride, int out_size, Tensor<T>& patch) {
  const double bw = box[2] - box[0], bh = box[3] - box[1];
  if (bw < 1e-3 || bh < 1e-3) throw DegenerateBox("roi_align box side below 1e-3 px");
  const int c = feat.dim(0), h = feat.dim(1), w = feat.dim(2);
  patch = Tensor<T>({c, out_size, out_size});
  const double cell_w = bw / out_size, cell_h = bh / out_size;

  for (int i = 0; i < out_size; ++i) {
    for (int j = 0; j < out_size; ++j) {
      BilinearTap taps[4];
      int t = 0;
      for (int sy = 0; sy < 2; ++sy)
        for (int sx = 0; sx < 2; ++sx) {
          const double xi = box[0] + cell_w * (j + (sx + 0.5) / 2.0);
          const double yi = box[1] + cell_h * (i + (sy + 0.5) / 2.0);
          taps[t++] = tap_at(xi / stride - 0.5, yi / stride - 0.5, w, h);
        }
      for (int ch = 0; ch < c; ++ch) {
        T acc = 0;
        for (const BilinearTap& tp : taps) {
          const T v00 = feat.at3(ch, tp.y0, tp.x0), v01 = feat.at3(ch, tp.y0, tp.x1);
          const T v10 = feat.at3(ch, tp.y1, tp.x0), v11 = feat.at3(ch, tp.y1, tp.x1);
          acc += T((v00 * (1 - tp.ax) + v01 * tp.ax) * (1 - tp.ay) +
                   (v10 * (1 - tp.ax) + v11 * tp.ax) * tp.ay);
        }
        patch.at3(ch, i, j) = acc / T(4);
      }
    }
  }
}

template <typename T>
void roi_align_backward(const Tensor<T>& feat, const std::array<double, 4>& box,
                        double stride, int out_size, const Tensor<T>& dpatch,
                        Tensor<T>& dfeat) {
  const double bw = box[2] - box[0], bh = box[3] - box[1];
  if (bw < 1e-3 || bh < 1e-3) throw DegenerateBox("roi_align box side below 1e-3 px");
  const int c = feat.dim(0), h = feat.dim(1), w = feat.dim(2);
  const double cell_w = bw / out_size, cell_h = bh / out_size;

  for (int i = 0; i < out_size; ++i) {
    for (int j = 0; j < out_size; ++j) {
      BilinearTap taps[4];
      int t = 0;
      for (int sy = 0; sy < 2; ++sy)
        for (int sx = 0; sx < 2; ++sx) {
          const double xi = box[0] + cell_w * (j + (sx + 0.5) / 2.0);
          const double yi = box[1] + cell_h * (i + (sy + 0.5) / 2.0);
          taps[t++] = tap_at(xi / stride - 0.5, yi / stride - 0.5, w, h);
        }
      for (int ch = 0; ch < c; ++ch) {
        const T g = dpatch.at3(ch, i, j) / T(4);
        for (const BilinearTap& tp : taps) {
          dfeat.at3(ch, tp.y0, tp.x0) += g * T((1 - tp.ax) * (1 - tp.ay));
          dfeat.at3(ch, tp.y0, tp.x1) += g * T(tp.ax * (1 - tp.ay));
          dfeat.at3(ch, tp.y1, tp.x0) += g * T((1 - tp.ax) * tp.ay);
          dfeat.at3(ch, tp.y1, tp.x1) += g * T(tp.ax * tp.ay);
        }
      }
    }
  }
}

#define KWSPOT_INSTANTIATE_OPS(T)                                                              \
  template void conv2d_forward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*, int,  \
                                  int, Tensor<T>&);                                            \
  template void conv2d_backward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, \
                                   int, Tensor<T>*, Tensor<T>&, Tensor<T>&);                   \
  template void conv_transpose2d_forward<T>(const Tensor<T>&, const Tensor<T>&,               \
                                            const Tensor<T>*, int, Tensor<T>&);               \
  template void conv_transpose2d_backward<T>(const Tensor<T>&, const Tensor<T>&,              \
                                             const Tensor<T>&, int, Tensor<T>*, Tensor<T>&,   \
                                             Tensor<T>&);                                      \
  template void relu_forward<T>(const Tensor<T>&, Tensor<T>&);                                \
  template void relu_backward<T>(const Tensor<T>&, const Tensor<T>&, Tensor<T>&);             \
  template void group_norm_forward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,   \
                                      int, T, Tensor<T>&, Tensor<T>&, Tensor<T>&);            \
  template void group_norm_backward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,  \
                                       const Tensor<T>&, int, const Tensor<T>&, Tensor<T>*,   \
                                       Tensor<T>&, Tensor<T>&);                               \
  template void linear_forward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*,       \
                                  Tensor<T>&);                                                 \
  template void linear_backward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,      \
                                   Tensor<T>*, Tensor<T>&, Tensor<T>&);                       \
  template void subsample2_forward<T>(const Tensor<T>&, Tensor<T>&);                          \
  template void subsample2_backward<T>(const Tensor<T>&, const Tensor<T>&, Tensor<T>&);       \
  template void upsample2_forward<T>(const Tensor<T>&, Tensor<T>&);                           \
  template void upsample2_backward<T>(const Tensor<T>&, const Tensor<T>&, Tensor<T>&);        \
  template void roi_align_forward<T>(const Tensor<T>&, const std::array<double, 4>&, double,  \
                                     int, Tensor<T>&);                                         \
  template void roi_align_backward<T>(const Tensor<T>&, const std::array<double, 4>&, double, \
                                      int, const Tensor<T>&, Tensor<T>&)

KWSPOT_INSTANTIATE_OPS(float);
KWSPOT_INSTANTIATE_OPS(double);

#undef KWSPOT_INSTANTIATE_OPS

}  // namespace kwspot::nn
