#pragma once

#include <span>
#include <vector>

#include "kwspot/datamodel.hpp"
#include "kwspot/geometry.hpp"
#include "kwspot/network.hpp"

namespace kwspot {

constexpr int kMaskSize = 28;      // mask branch output resolution
constexpr int kBoxRoiSize = 7;     // box head RoI
constexpr int kMaskRoiSize = 14;   // mask branch RoI
constexpr double kKeywordShrink = 0.8;

// 28x28 binary target for the matched line instance, in the proposal frame.
struct LineMaskTarget {
  BinaryMask mask;
};

// 28x28 map with values in {0..K}; 0 is background. `valid` marks proposals
// matched to a ground-truth line.
struct KeywordMaskTarget {
  std::vector<uint8_t> y;
  bool valid = false;

  uint8_t at(int row, int col) const { return y[size_t(row) * kMaskSize + col]; }
};

// Axis-aligned IoU >= 0.5 matches a proposal to the argmax ground-truth box;
// ties go to the lower line index; otherwise background (-1).
std::vector<int> assign_proposals(const std::vector<Box>& proposals,
                                  const std::vector<Box>& gt_boxes, double iou_thr = 0.5);

// The proposal box spans the full 28x28 grid; the line polygon is rasterized
// in that frame (implicitly clipped at the proposal boundary).
LineMaskTarget make_line_target(const Box& proposal, const QuadPolygon& line_poly);

// Each keyword polygon is shrunk about its centroid, transformed into the
// proposal frame, and rasterized with its class id. Cells covered by several
// shrunk keywords take the smallest-area keyword's class.
KeywordMaskTarget make_keyword_target(const Box& proposal,
                                      std::span<const KeywordAnno> keywords, int vocab_size,
                                      double shrink = kKeywordShrink);

// Proposal-frame grid transform shared by the target builders.
GridTransform proposal_frame(const Box& proposal, int grid_size = kMaskSize);

}  // namespace kwspot
