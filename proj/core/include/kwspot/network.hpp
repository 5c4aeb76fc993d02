#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kwspot/nn/modules.hpp"
#include "kwspot/nn/tensor.hpp"

namespace kwspot {

// Anchor grid: 7 aspect ratios (w/h, so 0.1 is a tall box) at one scale per
// pyramid level.
struct AnchorConfig {
  static constexpr int kLevels = 5;
  std::array<double, 7> ratios{0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0};
  std::array<double, kLevels> scales{16, 32, 64, 128, 256};
  std::array<int, kLevels> strides{4, 8, 16, 32, 64};

  int anchors_per_cell() const { return int(ratios.size()); }
};

struct NetworkConfig {
  int num_keywords = 5;  // K; keyword logits carry K+1 channels
  int stem_width = 32;
  std::array<int, 4> stage_widths{32, 64, 128, 128};
  int fpn_channels = 64;
  int gn_groups = 8;
  int box_head_width = 256;
  int mask_conv_width = 64;
  AnchorConfig anchors;
  double rpn_nms_iou = 0.7;
  int rpn_topk_train = 1000;
  int rpn_topk_eval = 300;
  int rpn_pre_nms_per_level = 1000;
};

std::string network_config_to_json(const NetworkConfig& cfg);
NetworkConfig network_config_from_json(const std::string& text);

// Axis-aligned box helpers (boxes are (x1, y1, x2, y2) in image pixels).
using Box = std::array<double, 4>;

inline double box_w(const Box& b) { return b[2] - b[0]; }
inline double box_h(const Box& b) { return b[3] - b[1]; }
inline double box_area(const Box& b) {
  return std::max(0.0, box_w(b)) * std::max(0.0, box_h(b));
}

// Standard (dx, dy, dw, dh) parameterization, log-space sizes.
Box apply_deltas(const Box& box, const std::array<double, 4>& d);
std::array<double, 4> encode_deltas(const Box& anchor, const Box& target);
Box clip_box(const Box& b, double w, double h);

// Greedy NMS by descending score, ties broken by lower index. Returns kept
// indices in pick order.
std::vector<int> nms_axis_aligned(const std::vector<Box>& boxes,
                                  const std::vector<double>& scores, double iou_thr);

// All anchors for one pyramid level, indexed a * h * w + i * w + j to match
// the [A, H, W] layout of the RPN logits.
std::vector<Box> generate_anchors(const AnchorConfig& cfg, int level, int h, int w);

// FPN assignment heuristic for RoI extraction.
int assign_pyramid_level(const AnchorConfig& cfg, double w, double h);

struct Proposal {
  Box box{};
  double objectness = 0.0;  // in [0, 1]
  int level = 0;            // assigned pyramid level
};

template <typename T>
struct FeaturePyramid {
  std::array<nn::Tensor<T>, AnchorConfig::kLevels> levels;
  int image_h = 0, image_w = 0;    // original dims (clipping frame)
  int padded_h = 0, padded_w = 0;  // dims after padding to a multiple of 64
};

template <typename T>
struct RpnOutput {
  // Per level: objectness logits [A, H, W] and box deltas [4A, H, W].
  std::array<nn::Tensor<T>, AnchorConfig::kLevels> obj;
  std::array<nn::Tensor<T>, AnchorConfig::kLevels> deltas;
};

template <typename T>
struct BoxHeadOutput {
  nn::Tensor<T> cls;  // [B, 2] logits (background, text)
  nn::Tensor<T> reg;  // [B, 4] deltas
};

// One tower: 4x (3x3 conv, relu) -> stride-2 transposed conv -> relu ->
// 1x1 conv to `out_channels` logits. 14x14 input yields 28x28 output.
template <typename T>
struct MaskTower {
  std::array<nn::Conv2d<T>, 4> convs;
  nn::ConvTranspose2d<T> deconv;
  nn::Conv2d<T> final;

  struct Ctx {
    std::array<typename nn::Conv2d<T>::Ctx, 4> conv;
    std::array<nn::Tensor<T>, 4> pre_relu;
    typename nn::ConvTranspose2d<T>::Ctx deconv;
    nn::Tensor<T> deconv_pre_relu;
    typename nn::Conv2d<T>::Ctx final;
  };

  void init(nn::ParamSet<T>& ps, const std::string& name, int cin, int width, int out_channels);
  nn::Tensor<T> forward(const nn::ParamSet<T>& ps, const nn::Tensor<T>& patch, Ctx& ctx) const;
  void backward(const nn::ParamSet<T>& ps, const Ctx& ctx, const nn::Tensor<T>& dlogits,
                nn::Tensor<T>* dpatch, nn::GradStore<T>& gs) const;
};

template <typename T>
class Detector {
 public:
  explicit Detector(NetworkConfig cfg);

  const NetworkConfig& config() const { return cfg_; }
  nn::ParamSet<T>& params() { return ps_; }
  const nn::ParamSet<T>& params() const { return ps_; }

  void initialize(uint64_t seed) { nn::initialize_params(ps_, seed); }

  // ---- backbone + FPN ----
  struct BackboneCtx {
    typename nn::ConvBlock<T>::Ctx stem;
    std::array<typename nn::ResidualBlock<T>::Ctx, 8> blocks;  // 2 per stage
    std::array<typename nn::Conv2d<T>::Ctx, 4> lateral;
    std::array<typename nn::Conv2d<T>::Ctx, 4> out;
    std::array<nn::Tensor<T>, 4> c;        // stage outputs
    std::array<nn::Tensor<T>, 4> topdown;  // merged laterals
    nn::Tensor<T> p5_for_p6;
  };
  FeaturePyramid<T> forward_backbone(const nn::Tensor<T>& image, BackboneCtx& ctx) const;
  // dpyr holds gradients w.r.t. the 5 pyramid levels (accumulated by callers).
  void backward_backbone(const BackboneCtx& ctx, std::array<nn::Tensor<T>, 5>& dpyr,
                         nn::GradStore<T>& gs) const;

  // ---- RPN head ----
  struct RpnCtx {
    std::array<typename nn::Conv2d<T>::Ctx, 5> shared;
    std::array<nn::Tensor<T>, 5> shared_pre_relu;
    std::array<nn::Tensor<T>, 5> shared_out;
    std::array<typename nn::Conv2d<T>::Ctx, 5> obj;
    std::array<typename nn::Conv2d<T>::Ctx, 5> reg;
  };
  RpnOutput<T> rpn_forward(const FeaturePyramid<T>& pyr, RpnCtx& ctx) const;
  void rpn_backward(const RpnCtx& ctx, const RpnOutput<T>& dout,
                    std::array<nn::Tensor<T>, 5>& dpyr, nn::GradStore<T>& gs) const;

  // Decode + clip + per-level pre-NMS top-k + NMS(0.7) + global top-N
  // (train 1000 / eval 300). Deterministic ordering throughout.
  std::vector<Proposal> propose(const RpnOutput<T>& out, const FeaturePyramid<T>& pyr,
                                bool train_mode) const;

  // ---- box head ----
  struct BoxHeadCtx {
    typename nn::Linear<T>::Ctx fc1, fc2, cls, reg;
    nn::Tensor<T> pre_relu1, pre_relu2;
  };
  // patches: [B, C * 7 * 7]
  BoxHeadOutput<T> box_head_forward(const nn::Tensor<T>& patches, BoxHeadCtx& ctx) const;
  void box_head_backward(const BoxHeadCtx& ctx, const nn::Tensor<T>& dcls,
                         const nn::Tensor<T>& dreg, nn::Tensor<T>* dpatches,
                         nn::GradStore<T>& gs) const;

  // ---- mask heads ----
  const MaskTower<T>& line_tower() const { return line_tower_; }
  const MaskTower<T>& keyword_tower() const { return keyword_tower_; }

  struct MaskHeadsCtx {
    typename MaskTower<T>::Ctx line, keyword;
  };
  // patch: [C, 14, 14] -> line logits [2, 28, 28], keyword logits [K+1, 28, 28]
  std::pair<nn::Tensor<T>, nn::Tensor<T>> mask_heads_forward(const nn::Tensor<T>& patch,
                                                             MaskHeadsCtx& ctx) const;
  void mask_heads_backward(const MaskHeadsCtx& ctx, const nn::Tensor<T>* dline,
                           const nn::Tensor<T>* dkeyword, nn::Tensor<T>* dpatch,
                           nn::GradStore<T>& gs) const;

  // Parameter ids owned by the keyword tower (the Eq. 2 gate audience).
  std::vector<int> keyword_tower_param_ids() const;

  std::map<std::string, nn::Tensor<float>> dump_params() const;
  void load_params(const std::map<std::string, nn::Tensor<float>>& tensors);

 private:
  NetworkConfig cfg_;
  nn::ParamSet<T> ps_;

  nn::ConvBlock<T> stem_;
  std::array<nn::ResidualBlock<T>, 8> blocks_;
  std::array<nn::Conv2d<T>, 4> lateral_;
  std::array<nn::Conv2d<T>, 4> out_;
  nn::Conv2d<T> rpn_shared_;
  nn::Conv2d<T> rpn_obj_;
  nn::Conv2d<T> rpn_reg_;
  nn::Linear<T> fc1_, fc2_, cls_, reg_;
  MaskTower<T> line_tower_;
  MaskTower<T> keyword_tower_;
};

// RoI feature extraction over the pyramid (level by size heuristic).
template <typename T>
nn::Tensor<T> extract_roi(const FeaturePyramid<T>& pyr, const AnchorConfig& cfg,
                          const Box& box, int out_size, int* level_used = nullptr);
template <typename T>
void extract_roi_backward(const FeaturePyramid<T>& pyr, const AnchorConfig& cfg, const Box& box,
                          int out_size, const nn::Tensor<T>& dpatch,
                          std::array<nn::Tensor<T>, 5>& dpyr);

// Self-describing checkpoint: JSON index + raw float32 tensors; bit-exact
// round-trip.
struct Checkpoint {
  NetworkConfig config;
  std::map<std::string, nn::Tensor<float>> tensors;
  std::string extra_json = "{}";  // trainer state (step, momentum names, ...)
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace kwspot
