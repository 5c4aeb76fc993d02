#include "kwspot/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "kwspot/errors.hpp"
#include "kwspot/geometry.hpp"
#include "kwspot/nn/ops.hpp"

using json = nlohmann::json;

namespace kwspot {

// ---- config -----------------------------------------------------------------

std::string network_config_to_json(const NetworkConfig& cfg) {
  json j;
  j["num_keywords"] = cfg.num_keywords;
  j["stem_width"] = cfg.stem_width;
  j["stage_widths"] = cfg.stage_widths;
  j["fpn_channels"] = cfg.fpn_channels;
  j["gn_groups"] = cfg.gn_groups;
  j["box_head_width"] = cfg.box_head_width;
  j["mask_conv_width"] = cfg.mask_conv_width;
  j["anchors"] = {{"ratios", cfg.anchors.ratios},
                  {"scales", cfg.anchors.scales},
                  {"strides", cfg.anchors.strides}};
  j["rpn_nms_iou"] = cfg.rpn_nms_iou;
  j["rpn_topk_train"] = cfg.rpn_topk_train;
  j["rpn_topk_eval"] = cfg.rpn_topk_eval;
  j["rpn_pre_nms_per_level"] = cfg.rpn_pre_nms_per_level;
  return j.dump();
}

NetworkConfig network_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("network config parse: ") + e.what());
  }
  NetworkConfig cfg;
  cfg.num_keywords = j.value("num_keywords", cfg.num_keywords);
  cfg.stem_width = j.value("stem_width", cfg.stem_width);
  if (j.contains("stage_widths"))
    for (int i = 0; i < 4; ++i) cfg.stage_widths[size_t(i)] = j["stage_widths"][size_t(i)];
  cfg.fpn_channels = j.value("fpn_channels", cfg.fpn_channels);
  cfg.gn_groups = j.value("gn_groups", cfg.gn_groups);
  cfg.box_head_width = j.value("box_head_width", cfg.box_head_width);
  cfg.mask_conv_width = j.value("mask_conv_width", cfg.mask_conv_width);
  if (j.contains("anchors")) {
    const json& a = j["anchors"];
    for (size_t i = 0; i < cfg.anchors.ratios.size(); ++i) cfg.anchors.ratios[i] = a["ratios"][i];
    for (size_t i = 0; i < cfg.anchors.scales.size(); ++i) cfg.anchors.scales[i] = a["scales"][i];
    for (size_t i = 0; i < cfg.anchors.strides.size(); ++i)
      cfg.anchors.strides[i] = a["strides"][i];
  }
  cfg.rpn_nms_iou = j.value("rpn_nms_iou", cfg.rpn_nms_iou);
  cfg.rpn_topk_train = j.value("rpn_topk_train", cfg.rpn_topk_train);
  cfg.rpn_topk_eval = j.value("rpn_topk_eval", cfg.rpn_topk_eval);
  cfg.rpn_pre_nms_per_level = j.value("rpn_pre_nms_per_level", cfg.rpn_pre_nms_per_level);
  return cfg;
}

// ---- box utilities ------------------------------------------------------------

Box apply_deltas(const Box& box, const std::array<double, 4>& d) {
  const double w = box[2] - box[0], h = box[3] - box[1];
  const double cx = box[0] + 0.5 * w, cy = box[1] + 0.5 * h;
  const double kClip = 4.0;  // exp guard
  const double ncx = cx + d[0] * w;
  const double ncy = cy + d[1] * h;
  const double nw = w * std::exp(std::min(d[2], kClip));
  const double nh = h * std::exp(std::min(d[3], kClip));
  return {ncx - 0.5 * nw, ncy - 0.5 * nh, ncx + 0.5 * nw, ncy + 0.5 * nh};
}

std::array<double, 4> encode_deltas(const Box& anchor, const Box& target) {
  const double wa = anchor[2] - anchor[0], ha = anchor[3] - anchor[1];
  const double cxa = anchor[0] + 0.5 * wa, cya = anchor[1] + 0.5 * ha;
  const double wt = target[2] - target[0], ht = target[3] - target[1];
  const double cxt = target[0] + 0.5 * wt, cyt = target[1] + 0.5 * ht;
  return {(cxt - cxa) / wa, (cyt - cya) / ha, std::log(wt / wa), std::log(ht / ha)};
}

Box clip_box(const Box& b, double w, double h) {
  return {std::clamp(b[0], 0.0, w), std::clamp(b[1], 0.0, h), std::clamp(b[2], 0.0, w),
          std::clamp(b[3], 0.0, h)};
}

std::vector<int> nms_axis_aligned(const std::vector<Box>& boxes,
                                  const std::vector<double>& scores, double iou_thr) {
  std::vector<int> order(boxes.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = int(i);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores[size_t(a)] > scores[size_t(b)]; });
  std::vector<int> keep;
  std::vector<char> dead(boxes.size(), 0);
  for (size_t oi = 0; oi < order.size(); ++oi) {
    int i = order[oi];
    if (dead[size_t(i)]) continue;
    keep.push_back(i);
    for (size_t oj = oi + 1; oj < order.size(); ++oj) {
      int j = order[oj];
      if (!dead[size_t(j)] && aabb_iou(boxes[size_t(i)], boxes[size_t(j)]) > iou_thr)
        dead[size_t(j)] = 1;
    }
  }
  return keep;
}

std::vector<Box> generate_anchors(const AnchorConfig& cfg, int level, int h, int w) {
  const double scale = cfg.scales[size_t(level)];
  const double stride = cfg.strides[size_t(level)];
  std::vector<Box> anchors;
  anchors.reserve(size_t(cfg.anchors_per_cell()) * h * w);
  for (double ratio : cfg.ratios) {
    const double aw = scale * std::sqrt(ratio);
    const double ah = scale / std::sqrt(ratio);
    for (int i = 0; i < h; ++i) {
      const double cy = (i + 0.5) * stride;
      for (int j = 0; j < w; ++j) {
        const double cx = (j + 0.5) * stride;
        anchors.push_back({cx - 0.5 * aw, cy - 0.5 * ah, cx + 0.5 * aw, cy + 0.5 * ah});
      }
    }
  }
  return anchors;
}

int assign_pyramid_level(const AnchorConfig& cfg, double w, double h) {
  const double size = std::sqrt(std::max(w * h, 1e-12));
  const int level = int(std::floor(std::log2(size / cfg.scales[0])));
  return std::clamp(level, 0, AnchorConfig::kLevels - 1);
}

// ---- MaskTower ------------------------------------------------------------------

template <typename T>
void MaskTower<T>::init(nn::ParamSet<T>& ps, const std::string& name, int cin, int width,
                        int out_channels) {
  int in = cin;
  for (int i = 0; i < 4; ++i) {
    convs[size_t(i)].init(ps, name + ".conv" + std::to_string(i + 1), in, width, 3, 1, 1);
    in = width;
  }
  deconv.init(ps, name + ".deconv", width, width, 2, 2);
  final.init(ps, name + ".final", width, out_channels, 1, 1, 0, nn::InitKind::normal, 0.01);
}

template <typename T>
nn::Tensor<T> MaskTower<T>::forward(const nn::ParamSet<T>& ps, const nn::Tensor<T>& patch,
                                    Ctx& ctx) const {
  nn::Tensor<T> x = patch;
  for (int i = 0; i < 4; ++i) {
    ctx.pre_relu[size_t(i)] = convs[size_t(i)].forward(ps, x, ctx.conv[size_t(i)]);
    nn::relu_forward(ctx.pre_relu[size_t(i)], x);
  }
  ctx.deconv_pre_relu = deconv.forward(ps, x, ctx.deconv);
  nn::relu_forward(ctx.deconv_pre_relu, x);
  return final.forward(ps, x, ctx.final);
}

template <typename T>
void MaskTower<T>::backward(const nn::ParamSet<T>& ps, const Ctx& ctx,
                            const nn::Tensor<T>& dlogits, nn::Tensor<T>* dpatch,
                            nn::GradStore<T>& gs) const {
  nn::Tensor<T> d_up(ctx.final.x.shape);
  final.backward(ps, ctx.final, dlogits, &d_up, gs);
  nn::Tensor<T> d_deconv(ctx.deconv_pre_relu.shape);
  nn::relu_backward(ctx.deconv_pre_relu, d_up, d_deconv);
  nn::Tensor<T> d(ctx.deconv.x.shape);
  deconv.backward(ps, ctx.deconv, d_deconv, &d, gs);
  for (int i = 3; i >= 0; --i) {
    nn::Tensor<T> d_pre(ctx.pre_relu[size_t(i)].shape);
    nn::relu_backward(ctx.pre_relu[size_t(i)], d, d_pre);
    if (i > 0) {
      d = nn::Tensor<T>(ctx.conv[size_t(i)].x.shape);
      convs[size_t(i)].backward(ps, ctx.conv[size_t(i)], d_pre, &d, gs);
    } else {
      convs[0].backward(ps, ctx.conv[0], d_pre, dpatch, gs);
    }
  }
}

// ---- Detector ---------------------------------------------------------------------

template <typename T>
Detector<T>::Detector(NetworkConfig cfg) : cfg_(std::move(cfg)) {
  const int g = cfg_.gn_groups;
  stem_.init(ps_, "backbone.stem", 3, cfg_.stem_width, 3, 2, 1, g);
  int in = cfg_.stem_width;
  for (int s = 0; s < 4; ++s) {
    const int width = cfg_.stage_widths[size_t(s)];
    const std::string base = "backbone.s" + std::to_string(s + 1);
    blocks_[size_t(2 * s)].init(ps_, base + ".b0", in, width, 2, g);
    blocks_[size_t(2 * s + 1)].init(ps_, base + ".b1", width, width, 1, g);
    in = width;
  }
  for (int i = 0; i < 4; ++i) {
    lateral_[size_t(i)].init(ps_, "fpn.lateral" + std::to_string(i + 2),
                             cfg_.stage_widths[size_t(i)], cfg_.fpn_channels, 1, 1, 0);
    out_[size_t(i)].init(ps_, "fpn.out" + std::to_string(i + 2), cfg_.fpn_channels,
                         cfg_.fpn_channels, 3, 1, 1);
  }
  const int a = cfg_.anchors.anchors_per_cell();
  rpn_shared_.init(ps_, "rpn.shared", cfg_.fpn_channels, cfg_.fpn_channels, 3, 1, 1);
  rpn_obj_.init(ps_, "rpn.obj", cfg_.fpn_channels, a, 1, 1, 0, nn::InitKind::normal, 0.01);
  rpn_reg_.init(ps_, "rpn.reg", cfg_.fpn_channels, 4 * a, 1, 1, 0, nn::InitKind::normal, 0.01);
  const int roi_dim = cfg_.fpn_channels * 7 * 7;
  fc1_.init(ps_, "box_head.fc1", roi_dim, cfg_.box_head_width);
  fc2_.init(ps_, "box_head.fc2", cfg_.box_head_width, cfg_.box_head_width);
  cls_.init(ps_, "box_head.cls", cfg_.box_head_width, 2, nn::InitKind::normal, 0.01);
  reg_.init(ps_, "box_head.reg", cfg_.box_head_width, 4, nn::InitKind::normal, 0.001);
  line_tower_.init(ps_, "line_tower", cfg_.fpn_channels, cfg_.mask_conv_width, 2);
  keyword_tower_.init(ps_, "keyword_tower", cfg_.fpn_channels, cfg_.mask_conv_width,
                      cfg_.num_keywords + 1);
}

template <typename T>
FeaturePyramid<T> Detector<T>::forward_backbone(const nn::Tensor<T>& image,
                                                BackboneCtx& ctx) const {
  const int h = image.dim(1), w = image.dim(2);
  const int hp = (h + 63) / 64 * 64, wp = (w + 63) / 64 * 64;
  nn::Tensor<T> x({3, hp, wp});
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) x.at3(c, i, j) = image.at3(c, i, j) - T(0.5);

  nn::Tensor<T> cur = stem_.forward(ps_, x, ctx.stem);
  for (int s = 0; s < 4; ++s) {
    cur = blocks_[size_t(2 * s)].forward(ps_, cur, ctx.blocks[size_t(2 * s)]);
    cur = blocks_[size_t(2 * s + 1)].forward(ps_, cur, ctx.blocks[size_t(2 * s + 1)]);
    ctx.c[size_t(s)] = cur;
  }

  // Top-down merge.
  for (int i = 3; i >= 0; --i) {
    nn::Tensor<T> t = lateral_[size_t(i)].forward(ps_, ctx.c[size_t(i)], ctx.lateral[size_t(i)]);
    if (i < 3) {
      nn::Tensor<T> up;
      nn::upsample2_forward(ctx.topdown[size_t(i) + 1], up);
      for (size_t k = 0; k < t.data.size(); ++k) t.data[k] += up.data[k];
    }
    ctx.topdown[size_t(i)] = std::move(t);
  }

  FeaturePyramid<T> pyr;
  pyr.image_h = h;
  pyr.image_w = w;
  pyr.padded_h = hp;
  pyr.padded_w = wp;
  for (int i = 0; i < 4; ++i)
    pyr.levels[size_t(i)] = out_[size_t(i)].forward(ps_, ctx.topdown[size_t(i)], ctx.out[size_t(i)]);
  ctx.p5_for_p6 = pyr.levels[3];
  nn::subsample2_forward(pyr.levels[3], pyr.levels[4]);
  return pyr;
}

template <typename T>
void Detector<T>::backward_backbone(const BackboneCtx& ctx, std::array<nn::Tensor<T>, 5>& dpyr,
                                    nn::GradStore<T>& gs) const {
  // p6 feeds back into p5.
  nn::subsample2_backward(ctx.p5_for_p6, dpyr[4], dpyr[3]);

  // Output convs, then the top-down chain from the finest level up.
  std::array<nn::Tensor<T>, 4> dt;
  for (int i = 0; i < 4; ++i) {
    dt[size_t(i)] = nn::Tensor<T>(ctx.topdown[size_t(i)].shape);
    out_[size_t(i)].backward(ps_, ctx.out[size_t(i)], dpyr[size_t(i)], &dt[size_t(i)], gs);
    if (i > 0) nn::upsample2_backward(ctx.topdown[size_t(i)], dt[size_t(i) - 1], dt[size_t(i)]);
  }

  std::array<nn::Tensor<T>, 4> dc;
  for (int i = 0; i < 4; ++i) {
    dc[size_t(i)] = nn::Tensor<T>(ctx.c[size_t(i)].shape);
    lateral_[size_t(i)].backward(ps_, ctx.lateral[size_t(i)], dt[size_t(i)], &dc[size_t(i)], gs);
  }

  nn::Tensor<T> d = std::move(dc[3]);
  for (int s = 3; s >= 0; --s) {
    nn::Tensor<T> dmid(ctx.blocks[size_t(2 * s + 1)].x.shape);
    blocks_[size_t(2 * s + 1)].backward(ps_, ctx.blocks[size_t(2 * s + 1)], d, &dmid, gs);
    if (s > 0) {
      d = nn::Tensor<T>(dc[size_t(s) - 1].shape);
      blocks_[size_t(2 * s)].backward(ps_, ctx.blocks[size_t(2 * s)], dmid, &d, gs);
      for (size_t k = 0; k < d.data.size(); ++k) d.data[k] += dc[size_t(s) - 1].data[k];
    } else {
      nn::Tensor<T> dstem(ctx.stem.pre_relu.shape);
      blocks_[0].backward(ps_, ctx.blocks[0], dmid, &dstem, gs);
      stem_.backward(ps_, ctx.stem, dstem, nullptr, gs);
    }
  }
}

template <typename T>
RpnOutput<T> Detector<T>::rpn_forward(const FeaturePyramid<T>& pyr, RpnCtx& ctx) const {
  RpnOutput<T> out;
  for (int l = 0; l < AnchorConfig::kLevels; ++l) {
    ctx.shared_pre_relu[size_t(l)] =
        rpn_shared_.forward(ps_, pyr.levels[size_t(l)], ctx.shared[size_t(l)]);
    nn::relu_forward(ctx.shared_pre_relu[size_t(l)], ctx.shared_out[size_t(l)]);
    out.obj[size_t(l)] = rpn_obj_.forward(ps_, ctx.shared_out[size_t(l)], ctx.obj[size_t(l)]);
    out.deltas[size_t(l)] = rpn_reg_.forward(ps_, ctx.shared_out[size_t(l)], ctx.reg[size_t(l)]);
  }
  return out;
}

template <typename T>
void Detector<T>::rpn_backward(const RpnCtx& ctx, const RpnOutput<T>& dout,
                               std::array<nn::Tensor<T>, 5>& dpyr, nn::GradStore<T>& gs) const {
  for (int l = 0; l < AnchorConfig::kLevels; ++l) {
    nn::Tensor<T> dshared(ctx.shared_out[size_t(l)].shape);
    if (!dout.obj[size_t(l)].empty())
      rpn_obj_.backward(ps_, ctx.obj[size_t(l)], dout.obj[size_t(l)], &dshared, gs);
    if (!dout.deltas[size_t(l)].empty())
      rpn_reg_.backward(ps_, ctx.reg[size_t(l)], dout.deltas[size_t(l)], &dshared, gs);
    nn::Tensor<T> dpre(ctx.shared_pre_relu[size_t(l)].shape);
    nn::relu_backward(ctx.shared_pre_relu[size_t(l)], dshared, dpre);
    rpn_shared_.backward(ps_, ctx.shared[size_t(l)], dpre, &dpyr[size_t(l)], gs);
  }
}

template <typename T>
std::vector<Proposal> Detector<T>::propose(const RpnOutput<T>& out, const FeaturePyramid<T>& pyr,
                                           bool train_mode) const {
  struct Scored {
    Box box;
    double score;
  };
  std::vector<Scored> pool;

  for (int l = 0; l < AnchorConfig::kLevels; ++l) {
    const nn::Tensor<T>& obj = out.obj[size_t(l)];
    const nn::Tensor<T>& del = out.deltas[size_t(l)];
    const int a = cfg_.anchors.anchors_per_cell();
    const int h = obj.dim(1), w = obj.dim(2);
    std::vector<Box> anchors = generate_anchors(cfg_.anchors, l, h, w);

    std::vector<int> idx(size_t(a) * h * w);
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = int(i);
    const T* logits = obj.ptr();
    const int keep_n = std::min<int>(cfg_.rpn_pre_nms_per_level, int(idx.size()));
    std::partial_sort(idx.begin(), idx.begin() + keep_n, idx.end(), [&](int x, int y) {
      return logits[size_t(x)] > logits[size_t(y)] ||
             (logits[size_t(x)] == logits[size_t(y)] && x < y);
    });
    idx.resize(size_t(keep_n));

    const size_t plane = size_t(h) * w;
    for (int i : idx) {
      const int ai = int(size_t(i) / plane);
      const size_t cell = size_t(i) % plane;
      std::array<double, 4> d{double(del.data[(size_t(4 * ai) + 0) * plane + cell]),
                              double(del.data[(size_t(4 * ai) + 1) * plane + cell]),
                              double(del.data[(size_t(4 * ai) + 2) * plane + cell]),
                              double(del.data[(size_t(4 * ai) + 3) * plane + cell])};
      Box b = clip_box(apply_deltas(anchors[size_t(i)], d), pyr.image_w, pyr.image_h);
      if (b[2] - b[0] < 1.0 || b[3] - b[1] < 1.0) continue;
      const double score = 1.0 / (1.0 + std::exp(-double(logits[size_t(i)])));
      pool.push_back({b, score});
    }
  }

  std::vector<int> order(pool.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = int(i);
  std::stable_sort(order.begin(), order.end(),
                   [&](int x, int y) { return pool[size_t(x)].score > pool[size_t(y)].score; });

  std::vector<Box> boxes;
  std::vector<double> scores;
  boxes.reserve(order.size());
  for (int i : order) {
    boxes.push_back(pool[size_t(i)].box);
    scores.push_back(pool[size_t(i)].score);
  }
  std::vector<int> keep = nms_axis_aligned(boxes, scores, cfg_.rpn_nms_iou);
  const int topn = train_mode ? cfg_.rpn_topk_train : cfg_.rpn_topk_eval;
  if (int(keep.size()) > topn) keep.resize(size_t(topn));

  std::vector<Proposal> props;
  props.reserve(keep.size());
  for (int i : keep) {
    Proposal p;
    p.box = boxes[size_t(i)];
    p.objectness = scores[size_t(i)];
    p.level = assign_pyramid_level(cfg_.anchors, box_w(p.box), box_h(p.box));
    props.push_back(p);
  }
  return props;
}

template <typename T>
BoxHeadOutput<T> Detector<T>::box_head_forward(const nn::Tensor<T>& patches,
                                               BoxHeadCtx& ctx) const {
  ctx.pre_relu1 = fc1_.forward(ps_, patches, ctx.fc1);
  nn::Tensor<T> h1;
  nn::relu_forward(ctx.pre_relu1, h1);
  ctx.pre_relu2 = fc2_.forward(ps_, h1, ctx.fc2);
  nn::Tensor<T> h2;
  nn::relu_forward(ctx.pre_relu2, h2);
  BoxHeadOutput<T> out;
  out.cls = cls_.forward(ps_, h2, ctx.cls);
  out.reg = reg_.forward(ps_, h2, ctx.reg);
  return out;
}

template <typename T>
void Detector<T>::box_head_backward(const BoxHeadCtx& ctx, const nn::Tensor<T>& dcls,
                                    const nn::Tensor<T>& dreg, nn::Tensor<T>* dpatches,
                                    nn::GradStore<T>& gs) const {
  nn::Tensor<T> dh2(ctx.pre_relu2.shape);
  if (!dcls.empty()) cls_.backward(ps_, ctx.cls, dcls, &dh2, gs);
  if (!dreg.empty()) reg_.backward(ps_, ctx.reg, dreg, &dh2, gs);
  nn::Tensor<T> dpre2(ctx.pre_relu2.shape);
  nn::relu_backward(ctx.pre_relu2, dh2, dpre2);
  nn::Tensor<T> dh1(ctx.pre_relu1.shape);
  fc2_.backward(ps_, ctx.fc2, dpre2, &dh1, gs);
  nn::Tensor<T> dpre1(ctx.pre_relu1.shape);
  nn::relu_backward(ctx.pre_relu1, dh1, dpre1);
  fc1_.backward(ps_, ctx.fc1, dpre1, dpatches, gs);
}

template <typename T>
std::pair<nn::Tensor<T>, nn::Tensor<T>> Detector<T>::mask_heads_forward(
    const nn::Tensor<T>& patch, MaskHeadsCtx& ctx) const {
  return {line_tower_.forward(ps_, patch, ctx.line),
          keyword_tower_.forward(ps_, patch, ctx.keyword)};
}

template <typename T>
void Detector<T>::mask_heads_backward(const MaskHeadsCtx& ctx, const nn::Tensor<T>* dline,
                                      const nn::Tensor<T>* dkeyword, nn::Tensor<T>* dpatch,
                                      nn::GradStore<T>& gs) const {
  if (dline) line_tower_.backward(ps_, ctx.line, *dline, dpatch, gs);
  if (dkeyword) keyword_tower_.backward(ps_, ctx.keyword, *dkeyword, dpatch, gs);
}

template <typename T>
std::vector<int> Detector<T>::keyword_tower_param_ids() const {
  std::vector<int> ids;
  for (size_t i = 0; i < ps_.count(); ++i)
    if (ps_.entries[i].name.rfind("keyword_tower.", 0) == 0) ids.push_back(int(i));
  return ids;
}

template <typename T>
std::map<std::string, nn::Tensor<float>> Detector<T>::dump_params() const {
  std::map<std::string, nn::Tensor<float>> out;
  for (const auto& e : ps_.entries) out[e.name] = e.value.template cast<float>();
  return out;
}

template <typename T>
void Detector<T>::load_params(const std::map<std::string, nn::Tensor<float>>& tensors) {
  for (auto& e : ps_.entries) {
    auto it = tensors.find(e.name);
    if (it == tensors.end()) throw ConfigError("checkpoint missing tensor " + e.name);
    if (it->second.shape != e.value.shape)
      throw ShapeError("checkpoint tensor " + e.name + " has wrong shape");
    e.value = it->second.template cast<T>();
  }
}

template class Detector<float>;
template class Detector<double>;
template struct MaskTower<float>;
template struct MaskTower<double>;

// ---- RoI extraction ---------------------------------------------------------------

template <typename T>
nn::Tensor<T> extract_roi(const FeaturePyramid<T>& pyr, const AnchorConfig& cfg, const Box& box,
                          int out_size, int* level_used) {
  const int level = assign_pyramid_level(cfg, box_w(box), box_h(box));
  if (level_used) *level_used = level;
  nn::Tensor<T> patch;
  nn::roi_align_forward(pyr.levels[size_t(level)], box, double(cfg.strides[size_t(level)]),
                        out_size, patch);
  return patch;
}

template <typename T>
void extract_roi_backward(const FeaturePyramid<T>& pyr, const AnchorConfig& cfg, const Box& box,
                          int out_size, const nn::Tensor<T>& dpatch,
                          std::array<nn::Tensor<T>, 5>& dpyr) {
  const int level = assign_pyramid_level(cfg, box_w(box), box_h(box));
  if (dpyr[size_t(level)].empty())
    dpyr[size_t(level)] = nn::Tensor<T>(pyr.levels[size_t(level)].shape);
  nn::roi_align_backward(pyr.levels[size_t(level)], box, double(cfg.strides[size_t(level)]),
                         out_size, dpatch, dpyr[size_t(level)]);
}

template nn::Tensor<float> extract_roi<float>(const FeaturePyramid<float>&, const AnchorConfig&,
                                              const Box&, int, int*);
template nn::Tensor<double> extract_roi<double>(const FeaturePyramid<double>&,
                                                const AnchorConfig&, const Box&, int, int*);
template void extract_roi_backward<float>(const FeaturePyramid<float>&, const AnchorConfig&,
                                          const Box&, int, const nn::Tensor<float>&,
                                          std::array<nn::Tensor<float>, 5>&);
template void extract_roi_backward<double>(const FeaturePyramid<double>&, const AnchorConfig&,
                                           const Box&, int, const nn::Tensor<double>&,
                                           std::array<nn::Tensor<double>, 5>&);

// ---- checkpoint ---------------------------------------------------------------------

namespace {
constexpr char kMagic[8] = {'K', 'W', 'S', 'P', 'C', 'K', 'P', '1'};
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  json index;
  index["config"] = json::parse(network_config_to_json(ckpt.config));
  try {
    index["extra"] = json::parse(ckpt.extra_json);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("checkpoint extra is not valid JSON: ") + e.what());
  }
  json tensors = json::array();
  uint64_t offset = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    json jt;
    jt["name"] = name;
    jt["shape"] = t.shape;
    jt["offset"] = offset;
    jt["nbytes"] = t.numel() * sizeof(float);
    tensors.push_back(std::move(jt));
    offset += t.numel() * sizeof(float);
  }
  index["tensors"] = std::move(tensors);
  const std::string header = index.dump();

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp);
    out.write(kMagic, 8);
    uint64_t len = header.size();
    out.write(reinterpret_cast<const char*>(&len), 8);
    out.write(header.data(), std::streamsize(header.size()));
    for (const auto& [name, t] : ckpt.tensors)
      out.write(reinterpret_cast<const char*>(t.ptr()),
                std::streamsize(t.numel() * sizeof(float)));
    if (!out) throw IoError("short write on checkpoint " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw IoError("not a checkpoint file: " + path);
  uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), 8);
  std::string header(len, '\0');
  in.read(header.data(), std::streamsize(len));
  if (!in) throw IoError("truncated checkpoint header: " + path);

  json index;
  try {
    index = json::parse(header);
  } catch (const json::exception& e) {
    throw IoError(std::string("corrupt checkpoint index: ") + e.what());
  }
  Checkpoint ckpt;
  ckpt.config = network_config_from_json(index["config"].dump());
  ckpt.extra_json = index["extra"].dump();

  const std::streampos data_start = in.tellg();
  for (const json& jt : index["tensors"]) {
    nn::Tensor<float> t(jt["shape"].get<std::vector<int>>());
    const uint64_t nbytes = jt["nbytes"].get<uint64_t>();
    if (nbytes != t.numel() * sizeof(float))
      throw IoError("checkpoint tensor size mismatch for " + jt["name"].get<std::string>());
    in.seekg(data_start + std::streampos(jt["offset"].get<uint64_t>()));
    in.read(reinterpret_cast<char*>(t.ptr()), std::streamsize(nbytes));
    if (!in) throw IoError("truncated checkpoint data: " + path);
    ckpt.tensors[jt["name"].get<std::string>()] = std::move(t);
  }
  return ckpt;
}

}  // namespace kwspot
