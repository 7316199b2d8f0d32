#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kneedet/geometry.hpp"
#include "kneedet/postprocess.hpp"

namespace kneedet {

struct GtBox {
  int class_id = 0;
  Box box;
};

// Detections and ground truth of one image.
struct ImageSample {
  std::vector<PredBox> dets;
  std::vector<GtBox> gts;
};

struct DetectionMatch {
  int image = 0;      // index into the sample list
  int det_index = 0;  // index within that image's detections
  int class_id = 0;
  double score = 0;
  bool tp = false;
  int gt_index = -1;  // matched ground truth within the image, -1 for FP
  double iou_value = 0;
};

struct MatchResult {
  std::vector<DetectionMatch> matches;     // sorted by score descending
  std::vector<std::int64_t> gt_count;      // per class
};

// Greedy matching in descending score order; a detection is a true
// positive iff its best-IoU unmatched same-class ground truth in the same
// image reaches the threshold. IoU ties go to the lower ground-truth
// index; score ties keep input order.
MatchResult match_detections(const std::vector<ImageSample>& samples,
                             double iou_threshold, int n_classes);

// Area under the precision-recall curve with the precision envelope
// (all-point interpolation), recall denominator n_gt. Flags must be
// ordered by descending score.
double average_precision(const std::vector<bool>& tp_flags, std::int64_t n_gt);

double f1_score(double precision, double recall);

struct ClassMetrics {
  double precision = 0, recall = 0, ap = 0, f1 = 0;
};

struct EvalReport {
  std::vector<ClassMetrics> per_class;  // schema order, size 4
  // micro-averaged over all detections / ground truths
  double precision = 0, recall = 0, f1 = 0;
  // unweighted means over classes present in the data
  double macro_precision = 0, macro_recall = 0, macro_f1 = 0;
  double map = 0;               // mean AP over classes with ground truth
  double mean_matched_iou = 0;  // mean IoU over true positives
  std::vector<std::string> notes;
};

EvalReport evaluate(const std::vector<ImageSample>& samples, double iou_threshold);

// JSON object with fixed key order: one object per class name, "all",
// "all_macro", "mean_matched_iou", "notes". Values rounded to 3 decimals.
std::string report_to_json(const EvalReport& report);

}  // namespace kneedet
