#include "kwspot/targets.hpp"

#include <algorithm>
#include <numeric>

#include "kwspot/errors.hpp"

namespace kwspot {

std::vector<int> assign_proposals(const std::vector<Box>& proposals,
                                  const std::vector<Box>& gt_boxes, double iou_thr) {
  std::vector<int> matches(proposals.size(), -1);
  for (size_t p = 0; p < proposals.size(); ++p) {
    double best = iou_thr;
    int best_idx = -1;
    for (size_t g = 0; g < gt_boxes.size(); ++g) {
      double iou = aabb_iou(proposals[p], gt_boxes[g]);
      if (iou > best) {
        best = iou;
        best_idx = int(g);
      }
    }
    matches[p] = best_idx;
  }
  return matches;
}

GridTransform proposal_frame(const Box& proposal, int grid_size) {
  GridTransform tf;
  tf.origin = {proposal[0], proposal[1]};
  tf.scale_x = grid_size / std::max(1e-9, proposal[2] - proposal[0]);
  tf.scale_y = grid_size / std::max(1e-9, proposal[3] - proposal[1]);
  return tf;
}

LineMaskTarget make_line_target(const Box& proposal, const QuadPolygon& line_poly) {
  LineMaskTarget t;
  t.mask = rasterize(line_poly, kMaskSize, kMaskSize, proposal_frame(proposal));
  return t;
}

KeywordMaskTarget make_keyword_target(const Box& proposal,
                                      std::span<const KeywordAnno> keywords, int vocab_size,
                                      double shrink) {
  KeywordMaskTarget t;
  t.valid = true;
  t.y.assign(size_t(kMaskSize) * kMaskSize, 0);

  // Paint large keywords first so smaller ones win overlapping cells.
  std::vector<size_t> order(keywords.size());
  std::iota(order.begin(), order.end(), size_t(0));
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return keywords[a].poly.area() > keywords[b].poly.area();
  });

  GridTransform tf = proposal_frame(proposal);
  for (size_t oi : order) {
    const KeywordAnno& kw = keywords[oi];
    if (kw.class_id < 1 || kw.class_id > vocab_size)
      throw VocabError("keyword class id " + std::to_string(kw.class_id) +
                       " outside vocabulary of size " + std::to_string(vocab_size));
    BinaryMask m = rasterize(shrink_polygon(kw.poly, shrink), kMaskSize, kMaskSize, tf);
    for (int r = 0; r < kMaskSize; ++r)
      for (int c = 0; c < kMaskSize; ++c)
        if (m.at(r, c)) t.y[size_t(r) * kMaskSize + c] = uint8_t(kw.class_id);
  }
  return t;
}

}  // namespace kwspot
