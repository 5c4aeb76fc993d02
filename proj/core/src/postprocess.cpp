#include "kwspot/postprocess.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "kwspot/errors.hpp"
#include "kwspot/targets.hpp"

using json = nlohmann::json;

namespace kwspot {

namespace {

// Expand a fitted rect by the projection of one mask cell onto its axes, so
// rects cover cell extents rather than cell centers.
RotatedRect expand_by_cell(RotatedRect r, double cell_w, double cell_h) {
  const double c = std::abs(std::cos(r.theta)), s = std::abs(std::sin(r.theta));
  r.w += c * cell_w + s * cell_h;
  r.h += s * cell_w + c * cell_h;
  return r.canonical();
}

RotatedRect fit_component_rect(const std::vector<Vec2>& centers, const Box& frame) {
  const double cell_w = box_w(frame) / kMaskSize;
  const double cell_h = box_h(frame) / kMaskSize;
  std::vector<Vec2> pts;
  pts.reserve(centers.size());
  for (const Vec2& g : centers)
    pts.push_back({frame[0] + g.x * cell_w, frame[1] + g.y * cell_h});
  return expand_by_cell(min_area_rect_of_points(pts), cell_w, cell_h);
}

}  // namespace

int label_components(const std::vector<uint8_t>& grid, int h, int w, std::vector<int>& labels) {
  labels.assign(size_t(h) * w, -1);
  std::vector<int> parent;
  auto find = [&](int x) {
    while (parent[size_t(x)] != x) {
      parent[size_t(x)] = parent[size_t(parent[size_t(x)])];
      x = parent[size_t(x)];
    }
    return x;
  };
  auto unite = [&](int a, int b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[size_t(std::max(a, b))] = std::min(a, b);
  };

  std::vector<int> raw(size_t(h) * w, -1);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const size_t i = size_t(r) * w + c;
      if (!grid[i]) continue;
      int id = int(parent.size());
      parent.push_back(id);
      raw[i] = id;
      // 8-connected predecessors.
      for (auto [dr, dc] : {std::pair{-1, -1}, {-1, 0}, {-1, 1}, {0, -1}}) {
        const int rr = r + dr, cc = c + dc;
        if (rr < 0 || cc < 0 || cc >= w) continue;
        const size_t j = size_t(rr) * w + cc;
        if (grid[j]) unite(raw[j], id);
      }
    }
  }
  // Compact root ids in scan order.
  std::vector<int> remap(parent.size(), -1);
  int next = 0;
  for (size_t i = 0; i < raw.size(); ++i) {
    if (raw[i] < 0) continue;
    const int root = find(raw[i]);
    if (remap[size_t(root)] < 0) remap[size_t(root)] = next++;
    labels[i] = remap[size_t(root)];
  }
  return next;
}

std::optional<LineDetection> decode_line(const Box& proposal,
                                         const std::array<double, 4>& refinement,
                                         double text_score,
                                         const nn::Tensor<float>& line_logits,
                                         double image_w, double image_h) {
  const Box refined = clip_box(apply_deltas(proposal, refinement), image_w, image_h);
  if (box_w(refined) < 1.0 || box_h(refined) < 1.0) return std::nullopt;

  const size_t n = size_t(kMaskSize) * kMaskSize;
  std::vector<uint8_t> fg(n, 0);
  for (size_t i = 0; i < n; ++i)
    fg[i] = line_logits.data[n + i] > line_logits.data[i] ? 1 : 0;  // p(fg) > 0.5

  std::vector<int> labels;
  const int ncomp = label_components(fg, kMaskSize, kMaskSize, labels);
  if (ncomp == 0) return std::nullopt;

  std::vector<int> counts(size_t(ncomp), 0);
  for (int l : labels)
    if (l >= 0) ++counts[size_t(l)];
  const int best =
      int(std::max_element(counts.begin(), counts.end()) - counts.begin());

  std::vector<Vec2> centers;
  for (int r = 0; r < kMaskSize; ++r)
    for (int c = 0; c < kMaskSize; ++c)
      if (labels[size_t(r) * kMaskSize + c] == best)
        centers.push_back({c + 0.5, r + 0.5});

  LineDetection det;
  det.confidence = text_score;
  det.rect = fit_component_rect(centers, refined);
  return det;
}

std::vector<KeywordDetection> decode_keywords(const Box& refined_box,
                                              const nn::Tensor<float>& keyword_logits,
                                              const LineDetection& line, int min_cells) {
  const int channels = keyword_logits.dim(0);
  const size_t n = size_t(kMaskSize) * kMaskSize;

  std::vector<int> argmax(n, 0);
  std::vector<double> prob_of_argmax(n, 0.0);
  std::vector<double> prob(static_cast<size_t>(channels), 0.0);
  for (size_t px = 0; px < n; ++px) {
    double mx = -1e300;
    for (int ch = 0; ch < channels; ++ch)
      mx = std::max(mx, double(keyword_logits.data[size_t(ch) * n + px]));
    double denom = 0.0;
    int best = 0;
    for (int ch = 0; ch < channels; ++ch) {
      prob[size_t(ch)] = std::exp(double(keyword_logits.data[size_t(ch) * n + px]) - mx);
      denom += prob[size_t(ch)];
      if (prob[size_t(ch)] > prob[size_t(best)]) best = ch;
    }
    argmax[px] = best;
    prob_of_argmax[px] = prob[size_t(best)] / denom;
  }

  std::vector<KeywordDetection> out;
  std::vector<uint8_t> mask(n);
  std::vector<int> labels;
  for (int k = 1; k < channels; ++k) {
    for (size_t i = 0; i < n; ++i) mask[i] = argmax[i] == k ? 1 : 0;
    const int ncomp = label_components(mask, kMaskSize, kMaskSize, labels);
    if (ncomp == 0) continue;
    std::vector<std::vector<Vec2>> cells(static_cast<size_t>(ncomp));
    std::vector<double> prob_sum(size_t(ncomp), 0.0);
    for (int r = 0; r < kMaskSize; ++r)
      for (int c = 0; c < kMaskSize; ++c) {
        const int l = labels[size_t(r) * kMaskSize + c];
        if (l < 0) continue;
        cells[size_t(l)].push_back({c + 0.5, r + 0.5});
        prob_sum[size_t(l)] += prob_of_argmax[size_t(r) * kMaskSize + c];
      }
    for (int l = 0; l < ncomp; ++l) {
      if (int(cells[size_t(l)].size()) < min_cells) continue;
      KeywordDetection det;
      det.image_id = line.image_id;
      det.class_id = k;
      det.confidence = prob_sum[size_t(l)] / double(cells[size_t(l)].size());
      det.rect =
          fit_component_rect(cells[size_t(l)], refined_box).scaled(1.0 / kKeywordShrink);
      det.parent_line = line.rect;
      out.push_back(std::move(det));
    }
  }
  return out;
}

std::vector<KeywordDetection> cross_proposal_nms(std::vector<KeywordDetection> detections,
                                                 double iou_thr) {
  std::vector<int> order(detections.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (detections[size_t(a)].class_id != detections[size_t(b)].class_id)
      return detections[size_t(a)].class_id < detections[size_t(b)].class_id;
    return detections[size_t(a)].confidence > detections[size_t(b)].confidence;
  });

  std::vector<char> dead(detections.size(), 0);
  std::vector<KeywordDetection> keep;
  for (size_t i = 0; i < order.size(); ++i) {
    const int a = order[i];
    if (dead[size_t(a)]) continue;
    keep.push_back(detections[size_t(a)]);
    for (size_t j = i + 1; j < order.size(); ++j) {
      const int b = order[j];
      if (dead[size_t(b)] || detections[size_t(b)].class_id != detections[size_t(a)].class_id)
        continue;
      if (rotated_iou(detections[size_t(a)].rect, detections[size_t(b)].rect) > iou_thr)
        dead[size_t(b)] = 1;
    }
  }
  return keep;
}

SpotResult spot_image(const Detector<float>& model, const ImageRGB& image,
                      const std::string& image_id, const SpotOptions& opt) {
  SpotResult result;

  nn::Tensor<float> img({3, image.h, image.w});
  for (int c = 0; c < 3; ++c)
    for (int r = 0; r < image.h; ++r)
      for (int x = 0; x < image.w; ++x)
        img.at3(c, r, x) = float(image.at(r, x, c)) / 255.f;

  typename Detector<float>::BackboneCtx bctx;
  FeaturePyramid<float> pyr = model.forward_backbone(img, bctx);
  typename Detector<float>::RpnCtx rctx;
  RpnOutput<float> rpn = model.rpn_forward(pyr, rctx);
  std::vector<Proposal> proposals = model.propose(rpn, pyr, /*train=*/false);
  if (proposals.empty()) return result;

  const int c = model.config().fpn_channels;
  nn::Tensor<float> patches({int(proposals.size()), c * kBoxRoiSize * kBoxRoiSize});
  for (size_t p = 0; p < proposals.size(); ++p) {
    nn::Tensor<float> patch =
        extract_roi(pyr, model.config().anchors, proposals[p].box, kBoxRoiSize);
    std::copy(patch.data.begin(), patch.data.end(),
              patches.data.begin() + long(p * patch.numel()));
  }
  typename Detector<float>::BoxHeadCtx bh_ctx;
  BoxHeadOutput<float> head = model.box_head_forward(patches, bh_ctx);

  struct Candidate {
    Box refined;
    std::array<double, 4> refinement;
    Box proposal;
    double score;
  };
  std::vector<Candidate> cands;
  for (size_t p = 0; p < proposals.size(); ++p) {
    const double l0 = head.cls.at2(int(p), 0), l1 = head.cls.at2(int(p), 1);
    const double mx = std::max(l0, l1);
    const double score = std::exp(l1 - mx) / (std::exp(l0 - mx) + std::exp(l1 - mx));
    if (score < opt.score_thresh) continue;
    std::array<double, 4> d{head.reg.at2(int(p), 0), head.reg.at2(int(p), 1),
                            head.reg.at2(int(p), 2), head.reg.at2(int(p), 3)};
    Box refined = clip_box(apply_deltas(proposals[p].box, d), pyr.image_w, pyr.image_h);
    if (box_w(refined) < 1.0 || box_h(refined) < 1.0) continue;
    cands.push_back(Candidate{refined, d, proposals[p].box, score});
  }
  if (cands.empty()) return result;

  std::vector<Box> boxes;
  std::vector<double> scores;
  for (const Candidate& cd : cands) {
    boxes.push_back(cd.refined);
    scores.push_back(cd.score);
  }
  std::vector<int> keep = nms_axis_aligned(boxes, scores, opt.box_nms_iou);
  if (int(keep.size()) > opt.max_detections) keep.resize(size_t(opt.max_detections));

  for (int idx : keep) {
    const Candidate& cd = cands[size_t(idx)];
    nn::Tensor<float> mpatch =
        extract_roi(pyr, model.config().anchors, cd.refined, kMaskRoiSize);
    typename Detector<float>::MaskHeadsCtx mctx;
    auto [line_logits, kw_logits] = model.mask_heads_forward(mpatch, mctx);

    std::optional<LineDetection> line =
        decode_line(cd.proposal, cd.refinement, cd.score, line_logits, pyr.image_w, pyr.image_h);
    if (!line) continue;
    line->image_id = image_id;
    result.lines.push_back(*line);

    std::vector<KeywordDetection> kws =
        decode_keywords(cd.refined, kw_logits, *line, opt.min_component_cells);
    result.keywords.insert(result.keywords.end(), kws.begin(), kws.end());
  }
  result.keywords = cross_proposal_nms(std::move(result.keywords), opt.keyword_nms_iou);
  return result;
}

std::vector<KeywordDetection> spot_dataset(const Detector<float>& model,
                                           const std::vector<ImageSample>& samples,
                                           const SpotOptions& opt,
                                           std::vector<LineDetection>* lines_out) {
  std::vector<SpotResult> results(samples.size());
  const unsigned workers = std::min<unsigned>(
      std::max(1u, std::thread::hardware_concurrency()), unsigned(std::max<size_t>(samples.size(), 1)));
  std::atomic<size_t> cursor{0};
  auto work = [&] {
    for (size_t i = cursor.fetch_add(1); i < samples.size(); i = cursor.fetch_add(1))
      results[i] = spot_image(model, samples[i].image, samples[i].image_path, opt);
  };
  std::vector<std::thread> threads;
  for (unsigned t = 1; t < workers; ++t) threads.emplace_back(work);
  work();
  for (std::thread& t : threads) t.join();

  std::vector<KeywordDetection> all;
  for (SpotResult& r : results) {
    if (lines_out) lines_out->insert(lines_out->end(), r.lines.begin(), r.lines.end());
    all.insert(all.end(), r.keywords.begin(), r.keywords.end());
  }
  return all;
}

void save_detections(const std::vector<KeywordDetection>& detections, const std::string& path) {
  std::ostringstream body;
  for (const KeywordDetection& d : detections) {
    json j;
    j["image"] = d.image_id;
    j["class_id"] = d.class_id;
    j["confidence"] = d.confidence;
    j["rect"] = {d.rect.cx, d.rect.cy, d.rect.w, d.rect.h, d.rect.theta};
    body << j.dump() << "\n";
  }
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw IoError("cannot write detections " + path);
  out << body.str();
}

std::vector<KeywordDetection> load_detections(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open detections " + path);
  std::vector<KeywordDetection> out;
  std::string linestr;
  int record = -1;
  while (std::getline(in, linestr)) {
    if (linestr.empty()) continue;
    ++record;
    json j;
    try {
      j = json::parse(linestr);
    } catch (const json::exception& e) {
      throw SchemaError("detections record " + std::to_string(record) + ": " + e.what());
    }
    if (!j.contains("image") || !j.contains("class_id") || !j.contains("confidence") ||
        !j.contains("rect") || !j["rect"].is_array() || j["rect"].size() != 5)
      throw SchemaError("detections record " + std::to_string(record) +
                        ": needs image, class_id, confidence, rect[5]");
    KeywordDetection d;
    d.image_id = j["image"].get<std::string>();
    d.class_id = j["class_id"].get<int>();
    d.confidence = j["confidence"].get<double>();
    d.rect = RotatedRect{j["rect"][0], j["rect"][1], j["rect"][2], j["rect"][3], j["rect"][4]};
    d.parent_line = d.rect;  // interchange format carries no parent geometry
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace kwspot
