#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "kneedet/geometry.hpp"
#include "kneedet/tensor.hpp"

namespace kneedet {

struct NetworkConfig;

// One detection head: S x S grid, B anchors per cell, C classes.
// Anchors are (w, h) in network-input pixels.
struct GridSpec {
  int s = 0;
  int b = 0;
  int classes = 0;
  std::vector<std::pair<double, double>> anchors;  // size b
  int net_w = 0, net_h = 0;
};

struct Detection {
  Box box;           // absolute pixels
  int class_id = 0;
  double objectness = 0;
  double class_prob = 0;
  double score() const { return objectness * class_prob; }
};

// Box corresponding to class id and score only, as stored in detection
// text files and consumed by evaluation.
struct PredBox {
  int class_id = 0;
  double score = 0;
  Box box;
};

// Anchor priors derived by k-means over the synthetic corpus generator's
// box sizes at 128 px; cfg files may override them.
const std::vector<std::pair<double, double>>& default_anchors();

// One GridSpec per yolo layer, in cfg order.
std::vector<GridSpec> grids_from_config(const NetworkConfig& config);

// Decodes one raw cell/anchor prediction into an absolute box in an
// img_w x img_h frame. Shared by head decoding and target encoding.
Box decode_box(double tx, double ty, double tw, double th, int row, int col,
               const GridSpec& grid, int anchor, int img_w, int img_h);

// All S*S*B*C candidates, one Detection per (cell, anchor, class), in
// (row, col, anchor, class) order.
std::vector<Detection> decode(const Tensor& head, const GridSpec& grid,
                              int img_w, int img_h);

std::vector<Detection> filter_confidence(const std::vector<Detection>& dets,
                                         double threshold);

// Greedy class-wise suppression: sort by score descending (ties keep input
// order), keep a box iff its IoU with every kept box of the same class is
// <= iou_threshold.
std::vector<Detection> nms(const std::vector<Detection>& dets,
                           double iou_threshold);

// Line format: class_id score x1 y1 x2 y2, absolute pixels, 6 significant
// digits.
std::string write_detections(const std::vector<Detection>& dets);
std::vector<PredBox> read_detections(std::string_view text);

}  // namespace kneedet
