#pragma once

#include <array>

#include "kwspot/nn/tensor.hpp"

namespace kwspot::nn {

// Low-level kernels, instantiated for float (training/inference) and double
// (finite-difference verification). Backward functions ACCUMULATE (+=) into
// their gradient outputs; callers own zero-initialization.

template <typename T>
void conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* b,
                    int stride, int pad, Tensor<T>& y);
template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy,
                     int stride, int pad, Tensor<T>* dx, Tensor<T>& dw, Tensor<T>& db);

// Transposed conv; weight layout [Cin, Cout, k, k], output (H-1)*s + k.
template <typename T>
void conv_transpose2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* b,
                              int stride, Tensor<T>& y);
template <typename T>
void conv_transpose2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy,
                               int stride, Tensor<T>* dx, Tensor<T>& dw, Tensor<T>& db);

template <typename T>
void relu_forward(const Tensor<T>& x, Tensor<T>& y);
template <typename T>
void relu_backward(const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>& dx);

// Group normalization over [C, H, W]; saves per-group mean and inverse std
// for the backward pass.
template <typename T>
void group_norm_forward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                        int groups, T eps, Tensor<T>& y, Tensor<T>& mean, Tensor<T>& rstd);
template <typename T>
void group_norm_backward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& mean,
                         const Tensor<T>& rstd, int groups, const Tensor<T>& dy,
                         Tensor<T>* dx, Tensor<T>& dgamma, Tensor<T>& dbeta);

// x [B, In], w [Out, In], b [Out] -> y [B, Out].
template <typename T>
void linear_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* b, Tensor<T>& y);
template <typename T>
void linear_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy,
                     Tensor<T>* dx, Tensor<T>& dw, Tensor<T>& db);

// Stride-2 subsampling (every other cell), used to derive the coarsest level.
template <typename T>
void subsample2_forward(const Tensor<T>& x, Tensor<T>& y);
template <typename T>
void subsample2_backward(const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>& dx);

// Nearest-neighbor 2x upsampling.
template <typename T>
void upsample2_forward(const Tensor<T>& x, Tensor<T>& y);
template <typename T>
void upsample2_backward(const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>& dx);

// RoI align over one feature map. The box is (x1, y1, x2, y2) in image
// coordinates; `stride` maps image to feature grid (u = x / stride - 0.5).
// Each output bin averages a 2x2 grid of bilinear samples; sample
// coordinates are clamped to the feature borders. Throws DegenerateBox for
// boxes under 1e-3 px a side.
template <typename T>
void roi_align_forward(const Tensor<T>& feat, const std::array<double, 4>& box,
                       double stride, int out_size, Tensor<T>& patch);
template <typename T>
void roi_align_backward(const Tensor<T>& feat, const std::array<double, 4>& box,
                        double stride, int out_size, const Tensor<T>& dpatch,
                        Tensor<T>& dfeat);

}  // namespace kwspot::nn
