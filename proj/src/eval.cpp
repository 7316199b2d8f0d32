#include "kneedet/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "kneedet/dataset.hpp"
#include "kneedet/errors.hpp"

namespace kneedet {

MatchResult match_detections(const std::vector<ImageSample>& samples,
                             double iou_threshold, int n_classes) {
  MatchResult result;
  result.gt_count.assign(n_classes, 0);

  for (int img = 0; img < static_cast<int>(samples.size()); ++img) {
    for (const GtBox& gt : samples[img].gts) {
      if (gt.class_id < 0 || gt.class_id >= n_classes) {
        throw InvalidInputError("ground truth class " +
                                std::to_string(gt.class_id) +
                                " absent from schema");
      }
      ++result.gt_count[gt.class_id];
    }
    for (int d = 0; d < static_cast<int>(samples[img].dets.size()); ++d) {
      const PredBox& p = samples[img].dets[d];
      if (p.class_id < 0 || p.class_id >= n_classes) {
        throw InvalidInputError("detection class " + std::to_string(p.class_id) +
                                " absent from schema");
      }
      DetectionMatch m;
      m.image = img;
      m.det_index = d;
      m.class_id = p.class_id;
      m.score = p.score;
      result.matches.push_back(m);
    }
  }

  std::stable_sort(result.matches.begin(), result.matches.end(),
                   [](const DetectionMatch& a, const DetectionMatch& b) {
                     return a.score > b.score;
                   });

  // per image: which ground truths are already consumed
  std::vector<std::vector<bool>> taken(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    taken[i].assign(samples[i].gts.size(), false);
  }

  for (DetectionMatch& m : result.matches) {
    const ImageSample& sample = samples[m.image];
    const PredBox& det = sample.dets[m.det_index];
    double best_iou = 0;
    int best_gt = -1;
    for (int g = 0; g < static_cast<int>(sample.gts.size()); ++g) {
      if (taken[m.image][g] || sample.gts[g].class_id != m.class_id) {
        continue;
      }
      const double v = iou(det.box, sample.gts[g].box);
      if (v > best_iou) {
        best_iou = v;
        best_gt = g;
      }
    }
    if (best_gt >= 0 && best_iou >= iou_threshold) {
      m.tp = true;
      m.gt_index = best_gt;
      m.iou_value = best_iou;
      taken[m.image][best_gt] = true;
    }
  }
  return result;
}

double average_precision(const std::vector<bool>& tp_flags, std::int64_t n_gt) {
  if (n_gt <= 0) {
    return 0.0;
  }
  const std::size_t n = tp_flags.size();
  std::vector<double> precision(n), recall(n);
  std::int64_t tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (tp_flags[i]) ++tp;
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / static_cast<double>(n_gt);
  }
  // precision envelope from the right
  for (std::size_t i = n; i-- > 1;) {
    precision[i - 1] = std::max(precision[i - 1], precision[i]);
  }
  double ap = 0;
  double prev_recall = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

double f1_score(double precision, double recall) {
  const double denom = precision + recall;
  return denom > 0 ? 2 * precision * recall / denom : 0.0;
}

EvalReport evaluate(const std::vector<ImageSample>& samples,
                    double iou_threshold) {
  const int n_classes = kClassCount;
  const MatchResult match = match_detections(samples, iou_threshold, n_classes);

  EvalReport report;
  report.per_class.assign(n_classes, {});

  std::int64_t total_tp = 0, total_dets = 0, total_gt = 0;
  double iou_sum = 0;
  std::int64_t iou_n = 0;
  double ap_sum = 0;
  int ap_classes = 0;
  double macro_p = 0, macro_r = 0, macro_f = 0;
  int macro_classes = 0;

  for (int c = 0; c < n_classes; ++c) {
    std::vector<bool> flags;
    std::int64_t tp = 0;
    for (const DetectionMatch& m : match.matches) {
      if (m.class_id != c) continue;
      flags.push_back(m.tp);
      if (m.tp) {
        ++tp;
        iou_sum += m.iou_value;
        ++iou_n;
      }
    }
    const std::int64_t n_det = static_cast<std::int64_t>(flags.size());
    const std::int64_t n_gt = match.gt_count[c];

    ClassMetrics& cm = report.per_class[c];
    cm.precision = n_det > 0 ? static_cast<double>(tp) / n_det : 0.0;
    cm.recall = n_gt > 0 ? static_cast<double>(tp) / n_gt : 0.0;
    cm.ap = average_precision(flags, n_gt);
    cm.f1 = f1_score(cm.precision, cm.recall);

    if (n_gt > 0) {
      ap_sum += cm.ap;
      ++ap_classes;
    } else if (n_det > 0) {
      report.notes.push_back("class " + class_names()[c] +
                             ": detections but no ground truth; AP set to 0");
      ap_sum += cm.ap;
      ++ap_classes;
    }
    if (n_gt > 0 || n_det > 0) {
      macro_p += cm.precision;
      macro_r += cm.recall;
      macro_f += cm.f1;
      ++macro_classes;
    }

    total_tp += tp;
    total_dets += n_det;
    total_gt += n_gt;
  }

  report.precision = total_dets > 0 ? static_cast<double>(total_tp) / total_dets : 0.0;
  report.recall = total_gt > 0 ? static_cast<double>(total_tp) / total_gt : 0.0;
  report.f1 = f1_score(report.precision, report.recall);
  report.map = ap_classes > 0 ? ap_sum / ap_classes : 0.0;
  if (macro_classes > 0) {
    report.macro_precision = macro_p / macro_classes;
    report.macro_recall = macro_r / macro_classes;
    report.macro_f1 = macro_f / macro_classes;
  }
  report.mean_matched_iou = iou_n > 0 ? iou_sum / iou_n : 0.0;
  return report;
}

std::string report_to_json(const EvalReport& report) {
  const auto round3 = [](double v) { return std::round(v * 1000.0) / 1000.0; };
  nlohmann::ordered_json j;
  for (int c = 0; c < kClassCount; ++c) {
    const ClassMetrics& cm = report.per_class[c];
    nlohmann::ordered_json jc;
    jc["precision"] = round3(cm.precision);
    jc["recall"] = round3(cm.recall);
    jc["ap"] = round3(cm.ap);
    jc["f1"] = round3(cm.f1);
    j[class_names()[c]] = std::move(jc);
  }
  nlohmann::ordered_json all;
  all["precision"] = round3(report.precision);
  all["recall"] = round3(report.recall);
  all["f1"] = round3(report.f1);
  all["map"] = round3(report.map);
  j["all"] = std::move(all);
  nlohmann::ordered_json macro;
  macro["precision"] = round3(report.macro_precision);
  macro["recall"] = round3(report.macro_recall);
  macro["f1"] = round3(report.macro_f1);
  j["all_macro"] = std::move(macro);
  j["mean_matched_iou"] = round3(report.mean_matched_iou);
  j["notes"] = report.notes;
  return j.dump(2) + "\n";
}

}  // namespace kneedet
