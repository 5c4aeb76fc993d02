#include "kwspot/evalkit.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

#include "kwspot/errors.hpp"

using json = nlohmann::json;

namespace kwspot {

bool image_contains_keyword(const ImageSample& sample, const std::string& keyword) {
  for (const TextLineAnno& line : sample.lines)
    if (line.transcription.find(keyword) != std::string::npos) return true;
  return false;
}

RankedRetrieval build_retrieval(const std::vector<KeywordDetection>& detections,
                                const std::vector<ImageSample>& ground_truth,
                                const KeywordVocab& vocab, int class_id) {
  const std::string& keyword = vocab.keyword(class_id);  // validates the class id

  RankedRetrieval rr;
  rr.class_id = class_id;

  std::map<std::string, double> best;  // image id -> max confidence
  for (const KeywordDetection& d : detections) {
    if (d.class_id != class_id) continue;
    auto [it, inserted] = best.emplace(d.image_id, d.confidence);
    if (!inserted) it->second = std::max(it->second, d.confidence);
  }

  rr.entries.assign(best.begin(), best.end());
  std::stable_sort(rr.entries.begin(), rr.entries.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  std::map<std::string, bool> relevant;
  for (const ImageSample& s : ground_truth) {
    const bool rel = image_contains_keyword(s, keyword);
    relevant[s.image_path] = rel;
    if (rel) ++rr.total_relevant;
  }
  for (const auto& [id, score] : rr.entries) {
    auto it = relevant.find(id);
    rr.relevance.push_back(it != relevant.end() && it->second ? 1 : 0);
  }
  return rr;
}

ClassAP average_precision(const RankedRetrieval& rr) {
  if (rr.total_relevant == 0)
    throw EvalError("class " + std::to_string(rr.class_id) +
                    " has no relevant images; excluded from mAP");
  double sum = 0.0;
  int hits = 0;
  for (size_t j = 0; j < rr.relevance.size(); ++j) {
    if (rr.relevance[j]) {
      ++hits;
      sum += double(hits) / double(j + 1);  // p(j) * r(j)
    }
  }
  return ClassAP{rr.class_id, sum / double(rr.total_relevant), rr.total_relevant};
}

double mean_average_precision(const std::vector<ClassAP>& aps) {
  if (aps.empty()) throw EvalError("no classes to average; all were excluded");
  double sum = 0.0;
  for (const ClassAP& a : aps) sum += a.ap;
  return sum / double(aps.size());
}

std::vector<std::pair<double, double>> pr_curve(const RankedRetrieval& rr) {
  std::vector<std::pair<double, double>> points;
  int hits = 0;
  for (size_t j = 0; j < rr.relevance.size(); ++j) {
    if (!rr.relevance[j]) continue;
    ++hits;
    points.emplace_back(double(hits) / double(std::max(rr.total_relevant, 1)),
                        double(hits) / double(j + 1));
  }
  return points;
}

EvalReport evaluate(const std::vector<KeywordDetection>& detections,
                    const std::vector<ImageSample>& ground_truth, const KeywordVocab& vocab) {
  EvalReport report;
  std::vector<ClassAP> included;
  for (int k = 1; k <= vocab.size(); ++k) {
    RankedRetrieval rr = build_retrieval(detections, ground_truth, vocab, k);
    if (rr.total_relevant == 0) continue;
    included.push_back(average_precision(rr));
  }
  report.per_class = std::move(included);
  report.map = mean_average_precision(report.per_class);
  return report;
}

std::string eval_report_to_json(const EvalReport& report, const KeywordVocab& vocab) {
  json j;
  j["mAP"] = report.map;
  j["evaluated_classes"] = report.per_class.size();
  json classes = json::array();
  for (const ClassAP& a : report.per_class) {
    json jc;
    jc["class_id"] = a.class_id;
    jc["keyword"] = vocab.keyword(a.class_id);
    jc["ap"] = a.ap;
    jc["relevant"] = a.total_relevant;
    classes.push_back(std::move(jc));
  }
  j["classes"] = std::move(classes);
  return j.dump(2);
}

void save_eval_report(const EvalReport& report, const KeywordVocab& vocab,
                      const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write report " + path);
  out << eval_report_to_json(report, vocab) << "\n";
}

}  // namespace kwspot
