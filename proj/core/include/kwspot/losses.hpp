#pragma once

#include <vector>

#include "kwspot/datamodel.hpp"
#include "kwspot/nn/tensor.hpp"
#include "kwspot/targets.hpp"

namespace kwspot {

// Per-step loss terms plus the proposal counts behind each term. Total is
// the unit-weight sum.
struct LossReport {
  double rpn_obj = 0.0;
  double rpn_box = 0.0;
  double box_cls = 0.0;
  double box_reg = 0.0;
  double line_mask = 0.0;
  double keyword_mask = 0.0;
  double total = 0.0;
  int rpn_sampled = 0;
  int rpn_pos = 0;
  int rois = 0;
  int roi_pos = 0;
  int line_masks = 0;
  int keyword_masks = 0;

  void finalize() { total = rpn_obj + rpn_box + box_cls + box_reg + line_mask + keyword_mask; }
  bool finite() const;
};

// Per-pixel (C, S, S) softmax cross entropy against integer labels; returns
// the mean over the S*S pixels. When dlogits is non-null, accumulates
// grad_scale * d(mean)/d(logits). Softmax runs over all C channels.
template <typename T>
double softmax_ce_map(const nn::Tensor<T>& logits, const std::vector<uint8_t>& labels,
                      nn::Tensor<T>* dlogits, double grad_scale);

// L_key for one proposal: labels take values 0..K over K+1 channels.
template <typename T>
double keyword_mask_loss(const nn::Tensor<T>& logits, const KeywordMaskTarget& target,
                         nn::Tensor<T>* dlogits = nullptr, double grad_scale = 1.0);

// Same form with 2 channels (background, text line).
template <typename T>
double line_mask_loss(const nn::Tensor<T>& logits, const LineMaskTarget& target,
                      nn::Tensor<T>* dlogits = nullptr, double grad_scale = 1.0);

// L_key' = L_key for synthetic samples, 0 for real samples. The gradient
// side of the gate is enforced by skipping the keyword tower backward pass
// entirely for real samples.
double semi_gate(Origin origin, double l_key);

// Scalar pieces shared by the RPN and box head objectives.
template <typename T>
double bce_with_logits(T logit, int label, T* dlogit, double grad_scale);
template <typename T>
double smooth_l1(T pred, double target, T* dpred, double grad_scale);  // beta = 1
template <typename T>
double softmax_ce_row(const T* logits, int n, int label, T* dlogits, double grad_scale);

}  // namespace kwspot
