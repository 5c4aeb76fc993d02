#pragma once

#include <string>
#include <utility>
#include <vector>

#include "kwspot/datamodel.hpp"
#include "kwspot/postprocess.hpp"

namespace kwspot {

// Ranked image list for one keyword class. Entries are sorted by score
// descending, ties broken by image id ascending; images with no class-k
// detection are excluded. total_relevant counts relevant images over the
// whole test set.
struct RankedRetrieval {
  int class_id = 0;
  std::vector<std::pair<std::string, double>> entries;
  std::vector<int> relevance;  // r(j), aligned with entries
  int total_relevant = 0;      // |r|
};

struct ClassAP {
  int class_id = 0;
  double ap = 0.0;
  int total_relevant = 0;
};

// An image is relevant for class k iff any of its ground-truth line
// transcriptions contains the keyword as a substring.
bool image_contains_keyword(const ImageSample& sample, const std::string& keyword);

// Per-image score is the max confidence over that image's class-k detections.
RankedRetrieval build_retrieval(const std::vector<KeywordDetection>& detections,
                                const std::vector<ImageSample>& ground_truth,
                                const KeywordVocab& vocab, int class_id);

// AP = (1/|r|) * sum_j p(j) r(j). Throws EvalError when |r| == 0 (such
// classes are excluded from mAP rather than scored).
ClassAP average_precision(const RankedRetrieval& rr);

// Arithmetic mean over the included classes; throws EvalError when empty.
double mean_average_precision(const std::vector<ClassAP>& aps);

// (recall, precision) points at each relevant hit.
std::vector<std::pair<double, double>> pr_curve(const RankedRetrieval& rr);

struct EvalReport {
  std::vector<ClassAP> per_class;  // classes with |r| > 0, ascending class id
  double map = 0.0;
};

EvalReport evaluate(const std::vector<KeywordDetection>& detections,
                    const std::vector<ImageSample>& ground_truth, const KeywordVocab& vocab);

std::string eval_report_to_json(const EvalReport& report, const KeywordVocab& vocab);
void save_eval_report(const EvalReport& report, const KeywordVocab& vocab,
                      const std::string& path);

}  // namespace kwspot
