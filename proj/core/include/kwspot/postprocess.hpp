#pragma once

#include <optional>
#include <string>
#include <vector>

#include "kwspot/datamodel.hpp"
#include "kwspot/geometry.hpp"
#include "kwspot/image.hpp"
#include "kwspot/network.hpp"

namespace kwspot {

struct LineDetection {
  std::string image_id;
  double confidence = 0.0;
  RotatedRect rect;
};

struct KeywordDetection {
  std::string image_id;
  int class_id = 0;  // 1..K
  double confidence = 0.0;
  RotatedRect rect;
  RotatedRect parent_line;
};

// Refines the proposal with the box-head deltas, thresholds the line mask at
// foreground probability 0.5, fits a rotated rect to the largest connected
// component, and maps it back to the image frame. Returns nothing when the
// thresholded mask is empty.
std::optional<LineDetection> decode_line(const Box& proposal,
                                         const std::array<double, 4>& refinement,
                                         double text_score,
                                         const nn::Tensor<float>& line_logits,
                                         double image_w, double image_h);

// Argmax over K+1 channels, 8-connected components per keyword class,
// components under `min_cells` dropped. Confidence is the mean class
// probability over the component; rects are inflated by 1/0.8 to undo the
// training-time shrink.
std::vector<KeywordDetection> decode_keywords(const Box& refined_box,
                                              const nn::Tensor<float>& keyword_logits,
                                              const LineDetection& line, int min_cells = 4);

// Per-class greedy rotated-IoU NMS by confidence.
std::vector<KeywordDetection> cross_proposal_nms(std::vector<KeywordDetection> detections,
                                                 double iou_thr = 0.5);

struct SpotOptions {
  double score_thresh = 0.35;   // box-head text probability gate
  double box_nms_iou = 0.5;     // axis-aligned NMS over refined boxes
  int max_detections = 100;
  double keyword_nms_iou = 0.5;
  int min_component_cells = 4;
};

struct SpotResult {
  std::vector<LineDetection> lines;
  std::vector<KeywordDetection> keywords;
};

// Full eval-mode pipeline for one image.
SpotResult spot_image(const Detector<float>& model, const ImageRGB& image,
                      const std::string& image_id, const SpotOptions& opt = {});

// Runs spot_image over every sample (in parallel), tagging detections with
// the sample's image_path. Output order follows the input order.
std::vector<KeywordDetection> spot_dataset(const Detector<float>& model,
                                           const std::vector<ImageSample>& samples,
                                           const SpotOptions& opt = {},
                                           std::vector<LineDetection>* lines_out = nullptr);

// Detection interchange: JSON-lines records
// {image, class_id, confidence, rect: [cx, cy, w, h, theta]}.
void save_detections(const std::vector<KeywordDetection>& detections, const std::string& path);
std::vector<KeywordDetection> load_detections(const std::string& path);

// 8-connected component labeling of a binary grid; labels start at 0,
// -1 marks background. Returns the number of components.
int label_components(const std::vector<uint8_t>& grid, int h, int w, std::vector<int>& labels);

}  // namespace kwspot
