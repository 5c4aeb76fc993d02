#include "kwspot/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "kwspot/errors.hpp"
#include "kwspot/nn/ops.hpp"
#include "kwspot/rng.hpp"
#include "kwspot/targets.hpp"

using json = nlohmann::json;

namespace kwspot {

// ---- config -----------------------------------------------------------------

void TrainConfig::validate() const {
  if (iterations < 0) throw ConfigError("iterations must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (learning_rate < 0) throw ConfigError("learning_rate must be >= 0");
  if (!(lr_decay_factor > 0 && lr_decay_factor <= 1))
    throw ConfigError("lr_decay_factor must be in (0, 1]");
  if (mix.synthetic < 0 || mix.real < 0 || mix.synthetic + mix.real < 1)
    throw ConfigError("mix ratio needs s >= 0, r >= 0, s + r >= 1");
  if (shorter_side < 32) throw ConfigError("shorter_side too small");
  if (rpn_sample < 1 || roi_sample < 1 || mask_sample < 0)
    throw ConfigError("bad sampling caps");
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open train config " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config parse: ") + e.what());
  }
  TrainConfig cfg;
  const std::string phase = j.value("phase", std::string("pretrain"));
  if (phase == "pretrain")
    cfg.phase = TrainPhase::pretrain;
  else if (phase == "finetune")
    cfg.phase = TrainPhase::finetune;
  else
    throw ConfigError("phase must be pretrain or finetune");
  cfg.iterations = j.value("iterations", cfg.iterations);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
  cfg.lr_decay_step = j.value("lr_decay_step", cfg.lr_decay_step);
  cfg.lr_decay_factor = j.value("lr_decay_factor", cfg.lr_decay_factor);
  cfg.warmup_steps = j.value("warmup_steps", cfg.warmup_steps);
  cfg.momentum = j.value("momentum", cfg.momentum);
  cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
  cfg.seed = j.value("seed", cfg.seed);
  if (j.contains("mix")) {
    cfg.mix.synthetic = j["mix"][0];
    cfg.mix.real = j["mix"][1];
  }
  cfg.shorter_side = j.value("shorter_side", cfg.shorter_side);
  cfg.checkpoint_interval = j.value("checkpoint_interval", cfg.checkpoint_interval);
  cfg.rpn_sample = j.value("rpn_sample", cfg.rpn_sample);
  cfg.rpn_pos_fraction = j.value("rpn_pos_fraction", cfg.rpn_pos_fraction);
  cfg.roi_sample = j.value("roi_sample", cfg.roi_sample);
  cfg.roi_pos_fraction = j.value("roi_pos_fraction", cfg.roi_pos_fraction);
  cfg.mask_sample = j.value("mask_sample", cfg.mask_sample);
  cfg.validate();
  return cfg;
}

void save_train_config(const TrainConfig& cfg, const std::string& path) {
  json j;
  j["phase"] = cfg.phase == TrainPhase::pretrain ? "pretrain" : "finetune";
  j["iterations"] = cfg.iterations;
  j["batch_size"] = cfg.batch_size;
  j["learning_rate"] = cfg.learning_rate;
  j["lr_decay_step"] = cfg.lr_decay_step;
  j["lr_decay_factor"] = cfg.lr_decay_factor;
  j["warmup_steps"] = cfg.warmup_steps;
  j["momentum"] = cfg.momentum;
  j["weight_decay"] = cfg.weight_decay;
  j["seed"] = cfg.seed;
  j["mix"] = {cfg.mix.synthetic, cfg.mix.real};
  j["shorter_side"] = cfg.shorter_side;
  j["checkpoint_interval"] = cfg.checkpoint_interval;
  j["rpn_sample"] = cfg.rpn_sample;
  j["rpn_pos_fraction"] = cfg.rpn_pos_fraction;
  j["roi_sample"] = cfg.roi_sample;
  j["roi_pos_fraction"] = cfg.roi_pos_fraction;
  j["mask_sample"] = cfg.mask_sample;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write train config " + path);
  out << j.dump(2) << "\n";
}

// ---- mix stream -----------------------------------------------------------------

MixStream::MixStream(int n_synthetic, int n_real, MixSchedule schedule, uint64_t seed)
    : n_synth_(n_synthetic), n_real_(n_real), seed_(seed) {
  if (schedule.synthetic < 0 || schedule.real < 0 || schedule.synthetic + schedule.real < 1)
    throw ConfigError("mix schedule needs s >= 0, r >= 0, s + r >= 1");
  if (schedule.synthetic > 0 && n_synthetic < 1)
    throw ConfigError("mix requires a non-empty synthetic pool");
  if (schedule.real > 0 && n_real < 1) throw ConfigError("mix requires a non-empty real pool");
  p_synth_ = double(schedule.synthetic) / double(schedule.synthetic + schedule.real);
}

MixStream::Draw MixStream::at(int64_t t) const {
  const double u = double(derive_seed(seed_, uint64_t(2 * t)) >> 11) * 0x1.0p-53;
  const bool synth = n_real_ < 1 || (n_synth_ >= 1 && u < p_synth_);
  const uint64_t r = derive_seed(seed_, uint64_t(2 * t + 1));
  if (synth) return {Origin::synthetic, int(r % uint64_t(n_synth_))};
  return {Origin::real, int(r % uint64_t(n_real_))};
}

// ---- resize ---------------------------------------------------------------------

ImageSample resize_to_shorter_side(const ImageSample& sample, int target) {
  const int h = sample.image.h, w = sample.image.w;
  if (std::min(h, w) == target) return sample;
  const double s = double(target) / double(std::min(h, w));
  const int nh = std::max(32, int(std::lround(h * s)));
  const int nw = std::max(32, int(std::lround(w * s)));
  const double sy = double(nh) / h, sx = double(nw) / w;

  ImageSample out = sample;
  out.image.h = nh;
  out.image.w = nw;
  out.image.data.assign(size_t(nh) * nw * 3, 0);
  for (int r = 0; r < nh; ++r) {
    const double fy = std::clamp((r + 0.5) / sy - 0.5, 0.0, double(h - 1));
    const int y0 = int(fy), y1 = std::min(y0 + 1, h - 1);
    const double ay = fy - y0;
    for (int c = 0; c < nw; ++c) {
      const double fx = std::clamp((c + 0.5) / sx - 0.5, 0.0, double(w - 1));
      const int x0 = int(fx), x1 = std::min(x0 + 1, w - 1);
      const double ax = fx - x0;
      for (int ch = 0; ch < 3; ++ch) {
        const double top = sample.image.at(y0, x0, ch) * (1 - ax) +
                           sample.image.at(y0, x1, ch) * ax;
        const double bot = sample.image.at(y1, x0, ch) * (1 - ax) +
                           sample.image.at(y1, x1, ch) * ax;
        out.image.at(r, c, ch) =
            uint8_t(std::clamp(std::lround(top * (1 - ay) + bot * ay), 0L, 255L));
      }
    }
  }
  auto scale_poly = [&](QuadPolygon& q) {
    for (Vec2& v : q.v) {
      v.x *= sx;
      v.y *= sy;
    }
  };
  for (TextLineAnno& line : out.lines) scale_poly(line.poly);
  if (out.keywords)
    for (KeywordAnno& kw : out.keywords.value()) scale_poly(kw.poly);
  return out;
}

// ---- per-image training graph -----------------------------------------------------

namespace {

struct ImageResult {
  nn::GradStore<float> grads;
  LossReport frag;
};

Box line_gt_box(const QuadPolygon& poly, double w, double h) {
  Vec2 lo, hi;
  poly.aabb(lo, hi);
  return clip_box({lo.x, lo.y, hi.x, hi.y}, w, h);
}

struct SampledAnchor {
  int level;
  int flat;
  int label;  // 1 positive, 0 negative
  std::array<double, 4> delta;
};

void build_rpn_targets(const Detector<float>& model, const FeaturePyramid<float>& pyr,
                       const std::vector<Box>& gt, const TrainConfig& cfg, Rng& rng,
                       std::vector<SampledAnchor>& sampled, int& n_pos_out) {
  struct BestPerGt {
    double iou = 0.0;
    int level = -1;
    int flat = -1;
  };
  std::vector<BestPerGt> best(gt.size());
  std::vector<std::pair<int, int>> positives, negatives;  // (level, flat)

  for (int l = 0; l < AnchorConfig::kLevels; ++l) {
    const int h = pyr.levels[size_t(l)].dim(1), w = pyr.levels[size_t(l)].dim(2);
    std::vector<Box> anchors = generate_anchors(model.config().anchors, l, h, w);
    for (size_t a = 0; a < anchors.size(); ++a) {
      double mx = 0.0;
      for (size_t g = 0; g < gt.size(); ++g) {
        const double iou = aabb_iou(anchors[a], gt[g]);
        mx = std::max(mx, iou);
        if (iou > best[g].iou) best[g] = {iou, l, int(a)};
      }
      if (mx >= 0.7)
        positives.emplace_back(l, int(a));
      else if (mx < 0.3)
        negatives.emplace_back(l, int(a));
    }
  }
  for (const BestPerGt& b : best)
    if (b.flat >= 0 && b.iou > 1e-6) positives.emplace_back(b.level, b.flat);
  std::sort(positives.begin(), positives.end());
  positives.erase(std::unique(positives.begin(), positives.end()), positives.end());

  rng.shuffle(positives);
  rng.shuffle(negatives);
  const int pos_take =
      std::min<int>(int(positives.size()), int(std::lround(cfg.rpn_sample * cfg.rpn_pos_fraction)));
  const int neg_take = std::min<int>(int(negatives.size()), cfg.rpn_sample - pos_take);
  n_pos_out = pos_take;

  // Recover the matched gt for each sampled positive to encode its target.
  auto match_of = [&](int level, int flat) {
    const int h = pyr.levels[size_t(level)].dim(1), w = pyr.levels[size_t(level)].dim(2);
    std::vector<Box> anchors = generate_anchors(model.config().anchors, level, h, w);
    double mx = -1.0;
    int arg = 0;
    for (size_t g = 0; g < gt.size(); ++g) {
      const double iou = aabb_iou(anchors[size_t(flat)], gt[g]);
      if (iou > mx) {
        mx = iou;
        arg = int(g);
      }
    }
    return encode_deltas(anchors[size_t(flat)], gt[size_t(arg)]);
  };
  for (int i = 0; i < pos_take; ++i) {
    auto [l, f] = positives[size_t(i)];
    sampled.push_back({l, f, 1, match_of(l, f)});
  }
  for (int i = 0; i < neg_take; ++i) {
    auto [l, f] = negatives[size_t(i)];
    sampled.push_back({l, f, 0, {}});
  }
}

ImageResult process_image(const Detector<float>& model, const TrainConfig& cfg,
                          const ImageSample& sample, uint64_t lane) {
  ImageResult res;
  Rng rng(derive_seed(cfg.seed, lane));
  const double inv_b = 1.0 / double(cfg.batch_size);
  const int K = model.config().num_keywords;

  nn::Tensor<float> img({3, sample.image.h, sample.image.w});
  for (int c = 0; c < 3; ++c)
    for (int r = 0; r < sample.image.h; ++r)
      for (int x = 0; x < sample.image.w; ++x)
        img.at3(c, r, x) = float(sample.image.at(r, x, c)) / 255.f;

  typename Detector<float>::BackboneCtx bctx;
  FeaturePyramid<float> pyr = model.forward_backbone(img, bctx);
  typename Detector<float>::RpnCtx rctx;
  RpnOutput<float> rpn = model.rpn_forward(pyr, rctx);

  std::vector<Box> gt;
  for (const TextLineAnno& line : sample.lines)
    gt.push_back(line_gt_box(line.poly, pyr.image_w, pyr.image_h));

  // ---- RPN losses ----
  std::vector<SampledAnchor> sampled;
  int n_rpn_pos = 0;
  build_rpn_targets(model, pyr, gt, cfg, rng, sampled, n_rpn_pos);

  RpnOutput<float> rpn_grads;  // lazily shaped per level
  auto obj_grad = [&](int level) -> nn::Tensor<float>& {
    if (rpn_grads.obj[size_t(level)].empty())
      rpn_grads.obj[size_t(level)] = nn::Tensor<float>(rpn.obj[size_t(level)].shape);
    return rpn_grads.obj[size_t(level)];
  };
  auto reg_grad = [&](int level) -> nn::Tensor<float>& {
    if (rpn_grads.deltas[size_t(level)].empty())
      rpn_grads.deltas[size_t(level)] = nn::Tensor<float>(rpn.deltas[size_t(level)].shape);
    return rpn_grads.deltas[size_t(level)];
  };

  if (!sampled.empty()) {
    const double obj_scale = inv_b / double(sampled.size());
    const double box_scale = n_rpn_pos > 0 ? inv_b / double(n_rpn_pos) : 0.0;
    double obj_loss = 0.0, box_loss = 0.0;
    for (const SampledAnchor& s : sampled) {
      const size_t plane =
          size_t(rpn.obj[size_t(s.level)].dim(1)) * rpn.obj[size_t(s.level)].dim(2);
      obj_loss += bce_with_logits(rpn.obj[size_t(s.level)].data[size_t(s.flat)], s.label,
                                  &obj_grad(s.level).data[size_t(s.flat)], obj_scale);
      if (s.label == 1) {
        const int a = int(size_t(s.flat) / plane);
        const size_t cell = size_t(s.flat) % plane;
        for (int c = 0; c < 4; ++c) {
          const size_t at = (size_t(4 * a) + size_t(c)) * plane + cell;
          box_loss += smooth_l1(rpn.deltas[size_t(s.level)].data[at], s.delta[size_t(c)],
                                &reg_grad(s.level).data[at], box_scale);
        }
      }
    }
    res.frag.rpn_obj = obj_loss / double(sampled.size());
    res.frag.rpn_box = n_rpn_pos > 0 ? box_loss / double(n_rpn_pos) : 0.0;
    res.frag.rpn_sampled = int(sampled.size());
    res.frag.rpn_pos = n_rpn_pos;
  }

  // ---- RoI sampling (proposals + ground-truth boxes) ----
  std::vector<Proposal> props = model.propose(rpn, pyr, /*train=*/true);
  std::vector<Box> roi_boxes;
  for (const Proposal& p : props) roi_boxes.push_back(p.box);
  for (const Box& g : gt)
    if (box_w(g) >= 1.0 && box_h(g) >= 1.0) roi_boxes.push_back(g);

  std::vector<int> matches = assign_proposals(roi_boxes, gt, 0.5);
  std::vector<int> pos_idx, neg_idx;
  for (size_t i = 0; i < roi_boxes.size(); ++i)
    (matches[i] >= 0 ? pos_idx : neg_idx).push_back(int(i));
  rng.shuffle(pos_idx);
  rng.shuffle(neg_idx);
  const int pos_take =
      std::min<int>(int(pos_idx.size()), int(std::lround(cfg.roi_sample * cfg.roi_pos_fraction)));
  const int neg_take = std::min<int>(int(neg_idx.size()), cfg.roi_sample - pos_take);

  struct Roi {
    Box box;
    int match;  // line index or -1
  };
  std::vector<Roi> rois;
  for (int i = 0; i < pos_take; ++i)
    rois.push_back({roi_boxes[size_t(pos_idx[size_t(i)])], matches[size_t(pos_idx[size_t(i)])]});
  for (int i = 0; i < neg_take; ++i)
    rois.push_back({roi_boxes[size_t(neg_idx[size_t(i)])], -1});

  std::array<nn::Tensor<float>, 5> dpyr;
  for (int l = 0; l < 5; ++l) dpyr[size_t(l)] = nn::Tensor<float>(pyr.levels[size_t(l)].shape);

  const AnchorConfig& acfg = model.config().anchors;
  const int cch = model.config().fpn_channels;

  if (!rois.empty()) {
    // ---- box head ----
    nn::Tensor<float> patches({int(rois.size()), cch * kBoxRoiSize * kBoxRoiSize});
    for (size_t i = 0; i < rois.size(); ++i) {
      nn::Tensor<float> patch = extract_roi(pyr, acfg, rois[i].box, kBoxRoiSize);
      std::copy(patch.data.begin(), patch.data.end(),
                patches.data.begin() + long(i * patch.numel()));
    }
    typename Detector<float>::BoxHeadCtx bhctx;
    BoxHeadOutput<float> head = model.box_head_forward(patches, bhctx);

    nn::Tensor<float> dcls(head.cls.shape), dreg(head.reg.shape);
    const double cls_scale = inv_b / double(rois.size());
    const double reg_scale = pos_take > 0 ? inv_b / double(pos_take) : 0.0;
    double cls_loss = 0.0, reg_loss = 0.0;
    for (size_t i = 0; i < rois.size(); ++i) {
      const int label = rois[i].match >= 0 ? 1 : 0;
      cls_loss += softmax_ce_row(head.cls.ptr() + 2 * i, 2, label, dcls.ptr() + 2 * i,
                                 cls_scale);
      if (label == 1) {
        const std::array<double, 4> t =
            encode_deltas(rois[i].box, gt[size_t(rois[i].match)]);
        for (int c = 0; c < 4; ++c)
          reg_loss += smooth_l1(head.reg.data[4 * i + size_t(c)], t[size_t(c)],
                                &dreg.data[4 * i + size_t(c)], reg_scale);
      }
    }
    res.frag.box_cls = cls_loss / double(rois.size());
    res.frag.box_reg = pos_take > 0 ? reg_loss / double(pos_take) : 0.0;
    res.frag.rois = int(rois.size());
    res.frag.roi_pos = pos_take;

    nn::Tensor<float> dpatches(patches.shape);
    model.box_head_backward(bhctx, dcls, dreg, &dpatches, res.grads);
    nn::Tensor<float> dpatch({cch, kBoxRoiSize, kBoxRoiSize});
    for (size_t i = 0; i < rois.size(); ++i) {
      std::copy(dpatches.data.begin() + long(i * dpatch.numel()),
                dpatches.data.begin() + long((i + 1) * dpatch.numel()), dpatch.data.begin());
      extract_roi_backward(pyr, acfg, rois[i].box, kBoxRoiSize, dpatch, dpyr);
    }

    // ---- mask heads on positives ----
    const int n_mask = std::min<int>(pos_take, cfg.mask_sample);
    const bool keyword_supervised =
        sample.origin == Origin::synthetic && sample.keywords.has_value();
    if (n_mask > 0) {
      const double line_scale = inv_b / double(n_mask);
      const double kw_scale = keyword_supervised ? inv_b / double(n_mask) : 0.0;
      double line_loss = 0.0, kw_loss = 0.0;
      for (int i = 0; i < n_mask; ++i) {
        const Roi& roi = rois[size_t(i)];
        nn::Tensor<float> mpatch = extract_roi(pyr, acfg, roi.box, kMaskRoiSize);
        typename Detector<float>::MaskHeadsCtx mctx;
        auto [line_logits, kw_logits] = model.mask_heads_forward(mpatch, mctx);

        LineMaskTarget lt =
            make_line_target(roi.box, sample.lines[size_t(roi.match)].poly);
        nn::Tensor<float> dline(line_logits.shape);
        line_loss += line_mask_loss(line_logits, lt, &dline, line_scale);

        nn::Tensor<float> dkw;
        if (keyword_supervised) {
          std::vector<KeywordAnno> of_line;
          for (const KeywordAnno& kw : sample.keywords.value())
            if (kw.parent_line == roi.match) of_line.push_back(kw);
          KeywordMaskTarget kt = make_keyword_target(roi.box, of_line, K);
          dkw = nn::Tensor<float>(kw_logits.shape);
          const double l_key = keyword_mask_loss(kw_logits, kt, &dkw, kw_scale);
          kw_loss += semi_gate(sample.origin, l_key);
        }

        nn::Tensor<float> dmpatch(mpatch.shape);
        model.mask_heads_backward(mctx, &dline, keyword_supervised ? &dkw : nullptr,
                                  &dmpatch, res.grads);
        extract_roi_backward(pyr, acfg, roi.box, kMaskRoiSize, dmpatch, dpyr);
      }
      res.frag.line_mask = line_loss / double(n_mask);
      res.frag.line_masks = n_mask;
      if (keyword_supervised) {
        res.frag.keyword_mask = kw_loss / double(n_mask);
        res.frag.keyword_masks = n_mask;
      }
    }
  }

  model.rpn_backward(rctx, rpn_grads, dpyr, res.grads);
  model.backward_backbone(bctx, dpyr, res.grads);
  return res;
}

}  // namespace

// ---- trainer -------------------------------------------------------------------

Trainer::Trainer(Detector<float>& model, TrainConfig cfg) : model_(model), cfg_(std::move(cfg)) {
  cfg_.validate();
  momentum_.resize(model_.params().count());
}

double Trainer::learning_rate_at(int step) const {
  double lr = cfg_.learning_rate;
  if (cfg_.lr_decay_step >= 0 && step >= cfg_.lr_decay_step) lr *= cfg_.lr_decay_factor;
  if (cfg_.warmup_steps > 0 && step < cfg_.warmup_steps)
    lr *= double(step + 1) / double(cfg_.warmup_steps);
  return lr;
}

LossReport Trainer::train_step(const std::vector<const ImageSample*>& batch) {
  if (int(batch.size()) != cfg_.batch_size)
    throw ConfigError("batch size does not match config");

  std::vector<ImageResult> results(batch.size());
  const unsigned workers =
      std::min<unsigned>(std::max(1u, std::thread::hardware_concurrency()),
                         unsigned(batch.size()));
  std::vector<std::thread> threads;
  std::atomic<size_t> cursor{0};
  auto work = [&] {
    for (size_t i = cursor.fetch_add(1); i < batch.size(); i = cursor.fetch_add(1))
      results[i] = process_image(model_, cfg_, *batch[i],
                                 (uint64_t(step_) << 8) | uint64_t(i));
  };
  for (unsigned t = 1; t < workers; ++t) threads.emplace_back(work);
  work();
  for (std::thread& t : threads) t.join();

  LossReport report;
  nn::GradStore<float> grads;
  for (size_t i = 0; i < results.size(); ++i) {
    const LossReport& f = results[i].frag;
    report.rpn_obj += f.rpn_obj;
    report.rpn_box += f.rpn_box;
    report.box_cls += f.box_cls;
    report.box_reg += f.box_reg;
    report.line_mask += f.line_mask;
    report.keyword_mask += f.keyword_mask;
    report.rpn_sampled += f.rpn_sampled;
    report.rpn_pos += f.rpn_pos;
    report.rois += f.rois;
    report.roi_pos += f.roi_pos;
    report.line_masks += f.line_masks;
    report.keyword_masks += f.keyword_masks;
    results[i].grads.accumulate_into(grads, model_.params());
  }
  const double inv_b = 1.0 / double(cfg_.batch_size);
  report.rpn_obj *= inv_b;
  report.rpn_box *= inv_b;
  report.box_cls *= inv_b;
  report.box_reg *= inv_b;
  report.line_mask *= inv_b;
  report.keyword_mask *= inv_b;
  report.finalize();

  if (!report.finite()) {
    std::string ids;
    for (const ImageSample* s : batch) ids += s->image_path + " ";
    throw NonFiniteLoss("non-finite loss at step " + std::to_string(step_) + "; batch: " + ids);
  }

  sgd_update(grads, learning_rate_at(step_));
  ++step_;
  return report;
}

void Trainer::sgd_update(nn::GradStore<float>& grads, double lr) {
  nn::ParamSet<float>& ps = model_.params();
  for (size_t id = 0; id < ps.count(); ++id) {
    const nn::Tensor<float>* g = grads.peek(int(id));
    if (!g) continue;  // untouched tensor: no decay, no momentum, no update
    nn::Tensor<float>& p = ps[int(id)];
    nn::Tensor<float>& v = momentum_[id];
    if (v.shape.empty()) v = nn::Tensor<float>(p.shape);
    const float mu = float(cfg_.momentum), wd = float(cfg_.weight_decay);
    for (size_t k = 0; k < p.data.size(); ++k) {
      v.data[k] = mu * v.data[k] + g->data[k] + wd * p.data[k];
      p.data[k] -= float(lr) * v.data[k];
    }
  }
}

const char* Trainer::metrics_csv_header() {
  return "step,lr,rpn_obj,rpn_box,box_cls,box_reg,line_mask,keyword_mask,total,"
         "rpn_sampled,rpn_pos,rois,roi_pos,line_masks,keyword_masks";
}

std::string loss_report_csv_row(int step, double lr, const LossReport& r) {
  std::ostringstream os;
  os.precision(9);
  os << step << ',' << lr << ',' << r.rpn_obj << ',' << r.rpn_box << ',' << r.box_cls << ','
     << r.box_reg << ',' << r.line_mask << ',' << r.keyword_mask << ',' << r.total << ','
     << r.rpn_sampled << ',' << r.rpn_pos << ',' << r.rois << ',' << r.roi_pos << ','
     << r.line_masks << ',' << r.keyword_masks;
  return os.str();
}

void Trainer::run_phase(const std::vector<ImageSample>& synthetic,
                        const std::vector<ImageSample>* real,
                        const std::string& checkpoint_out, const std::string& metrics_out) {
  MixSchedule schedule = cfg_.phase == TrainPhase::pretrain ? MixSchedule{1, 0} : cfg_.mix;
  if (schedule.synthetic > 0 && synthetic.empty())
    throw ConfigError("synthetic pool is empty");
  if (schedule.real > 0 && (!real || real->empty()))
    throw ConfigError("finetune mix requires a non-empty real pool");

  std::vector<ImageSample> synth_scaled;
  synth_scaled.reserve(synthetic.size());
  for (const ImageSample& s : synthetic)
    synth_scaled.push_back(resize_to_shorter_side(s, cfg_.shorter_side));
  std::vector<ImageSample> real_scaled;
  if (real)
    for (const ImageSample& s : *real)
      real_scaled.push_back(resize_to_shorter_side(s, cfg_.shorter_side));

  MixStream stream(int(synth_scaled.size()), int(real_scaled.size()), schedule, cfg_.seed);

  std::ofstream metrics(metrics_out, std::ios::trunc);
  if (!metrics) throw IoError("cannot write metrics log " + metrics_out);
  metrics << metrics_csv_header() << "\n";

  const int first = step_;
  for (int it = first; it < first + cfg_.iterations; ++it) {
    std::vector<const ImageSample*> batch;
    for (int j = 0; j < cfg_.batch_size; ++j) {
      MixStream::Draw d = stream.at(int64_t(it) * cfg_.batch_size + j);
      batch.push_back(d.origin == Origin::synthetic ? &synth_scaled[size_t(d.index)]
                                                    : &real_scaled[size_t(d.index)]);
    }
    const double lr = learning_rate_at(step_);
    LossReport report = train_step(batch);
    metrics << loss_report_csv_row(it, lr, report) << "\n";
    metrics.flush();
    if (cfg_.checkpoint_interval > 0 && (it + 1 - first) % cfg_.checkpoint_interval == 0)
      save_checkpoint_file(checkpoint_out);
  }
  save_checkpoint_file(checkpoint_out);
}

void Trainer::save_checkpoint_file(const std::string& path) const {
  Checkpoint ck;
  ck.config = model_.config();
  ck.tensors = model_.dump_params();
  const nn::ParamSet<float>& ps = model_.params();
  for (size_t id = 0; id < ps.count(); ++id)
    if (!momentum_[id].shape.empty())
      ck.tensors["opt/momentum/" + ps.entries[id].name] = momentum_[id];
  json extra;
  extra["step"] = step_;
  ck.extra_json = extra.dump();
  save_checkpoint(ck, path);
}

void Trainer::load_checkpoint_file(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  model_.load_params(ck.tensors);
  nn::ParamSet<float>& ps = model_.params();
  momentum_.assign(ps.count(), nn::Tensor<float>());
  for (size_t id = 0; id < ps.count(); ++id) {
    auto it = ck.tensors.find("opt/momentum/" + ps.entries[id].name);
    if (it != ck.tensors.end()) momentum_[id] = it->second;
  }
  json extra = json::parse(ck.extra_json);
  step_ = extra.value("step", 0);
}

}  // namespace kwspot
