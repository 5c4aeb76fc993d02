#include "kwspot/losses.hpp"

#include <cmath>

#include "kwspot/errors.hpp"

namespace kwspot {

bool LossReport::finite() const {
  for (double v : {rpn_obj, rpn_box, box_cls, box_reg, line_mask, keyword_mask, total})
    if (!std::isfinite(v)) return false;
  return true;
}

template <typename T>
double softmax_ce_map(const nn::Tensor<T>& logits, const std::vector<uint8_t>& labels,
                      nn::Tensor<T>* dlogits, double grad_scale) {
  const int c = logits.dim(0), h = logits.dim(1), w = logits.dim(2);
  const size_t n = size_t(h) * w;
  if (labels.size() != n) throw ShapeError("mask label count does not match logits grid");

  double loss = 0.0;
  std::vector<double> prob(static_cast<size_t>(c), 0.0);
  for (size_t px = 0; px < n; ++px) {
    const int label = labels[px];
    if (label < 0 || label >= c) throw ShapeError("mask label outside channel range");
    double mx = -1e300;
    for (int ch = 0; ch < c; ++ch) mx = std::max(mx, double(logits.data[size_t(ch) * n + px]));
    double denom = 0.0;
    for (int ch = 0; ch < c; ++ch) {
      prob[size_t(ch)] = std::exp(double(logits.data[size_t(ch) * n + px]) - mx);
      denom += prob[size_t(ch)];
    }
    for (int ch = 0; ch < c; ++ch) prob[size_t(ch)] /= denom;
    loss -= std::log(std::max(prob[size_t(label)], 1e-300));
    if (dlogits) {
      const double s = grad_scale / double(n);
      for (int ch = 0; ch < c; ++ch)
        dlogits->data[size_t(ch) * n + px] +=
            T(s * (prob[size_t(ch)] - (ch == label ? 1.0 : 0.0)));
    }
  }
  return loss / double(n);
}

template <typename T>
double keyword_mask_loss(const nn::Tensor<T>& logits, const KeywordMaskTarget& target,
                         nn::Tensor<T>* dlogits, double grad_scale) {
  if (logits.shape.size() != 3 || logits.dim(1) != kMaskSize || logits.dim(2) != kMaskSize)
    throw ShapeError("keyword logits must be (K+1) x 28 x 28");
  return softmax_ce_map(logits, target.y, dlogits, grad_scale);
}

template <typename T>
double line_mask_loss(const nn::Tensor<T>& logits, const LineMaskTarget& target,
                      nn::Tensor<T>* dlogits, double grad_scale) {
  if (logits.shape.size() != 3 || logits.dim(0) != 2 || logits.dim(1) != kMaskSize ||
      logits.dim(2) != kMaskSize)
    throw ShapeError("line logits must be 2 x 28 x 28");
  return softmax_ce_map(logits, target.mask.grid, dlogits, grad_scale);
}

double semi_gate(Origin origin, double l_key) {
  return origin == Origin::synthetic ? l_key : 0.0;
}

template <typename T>
double bce_with_logits(T logit, int label, T* dlogit, double grad_scale) {
  const double x = double(logit), y = double(label);
  // log(1 + e^-|x|) + max(x, 0) - x*y, numerically stable.
  const double loss = std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0) - x * y;
  if (dlogit) {
    const double p = 1.0 / (1.0 + std::exp(-x));
    *dlogit += T(grad_scale * (p - y));
  }
  return loss;
}

template <typename T>
double smooth_l1(T pred, double target, T* dpred, double grad_scale) {
  const double d = double(pred) - target;
  if (std::abs(d) < 1.0) {
    if (dpred) *dpred += T(grad_scale * d);
    return 0.5 * d * d;
  }
  if (dpred) *dpred += T(grad_scale * (d > 0 ? 1.0 : -1.0));
  return std::abs(d) - 0.5;
}

template <typename T>
double softmax_ce_row(const T* logits, int n, int label, T* dlogits, double grad_scale) {
  double mx = -1e300;
  for (int i = 0; i < n; ++i) mx = std::max(mx, double(logits[i]));
  double denom = 0.0;
  for (int i = 0; i < n; ++i) denom += std::exp(double(logits[i]) - mx);
  const double logp = double(logits[label]) - mx - std::log(denom);
  if (dlogits) {
    for (int i = 0; i < n; ++i) {
      const double p = std::exp(double(logits[i]) - mx) / denom;
      dlogits[i] += T(grad_scale * (p - (i == label ? 1.0 : 0.0)));
    }
  }
  return -logp;
}

#define KWSPOT_INSTANTIATE_LOSSES(T)                                                      \
  template double softmax_ce_map<T>(const nn::Tensor<T>&, const std::vector<uint8_t>&,   \
                                    nn::Tensor<T>*, double);                              \
  template double keyword_mask_loss<T>(const nn::Tensor<T>&, const KeywordMaskTarget&,   \
                                       nn::Tensor<T>*, double);                           \
  template double line_mask_loss<T>(const nn::Tensor<T>&, const LineMaskTarget&,         \
                                    nn::Tensor<T>*, double);                              \
  template double bce_with_logits<T>(T, int, T*, double);                                \
  template double smooth_l1<T>(T, double, T*, double);                                   \
  template double softmax_ce_row<T>(const T*, int, int, T*, double)

KWSPOT_INSTANTIATE_LOSSES(float);
KWSPOT_INSTANTIATE_LOSSES(double);

#undef KWSPOT_INSTANTIATE_LOSSES

}  // namespace kwspot
