#pragma once

#include <cstdint>
#include <vector>

#include "kneedet/dataset.hpp"
#include "kneedet/geometry.hpp"
#include "kneedet/postprocess.hpp"
#include "kneedet/tensor.hpp"

namespace kneedet {

struct TrainHyperparams {
  int epochs = 48;
  int batch_size = 32;
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double ignore_iou = 0.5;
};

struct LossWeights {
  double box = 1, obj = 1, noobj = 1, cls = 1;
};

struct LossBreakdown {
  double giou_term = 0, obj_term = 0, noobj_term = 0, cls_term = 0, total = 0;
  LossWeights weights;
};

struct EncodedTarget {
  double tx = 0, ty = 0, tw = 0, th = 0;
};

struct PositiveTarget {
  int head = 0, row = 0, col = 0, anchor = 0;
  int gt_index = 0;
  int class_id = 0;
  EncodedTarget encoded;
  Box gt_box;  // absolute pixels
};

struct TargetAssignment {
  std::vector<PositiveTarget> positives;  // (head, row, col, anchor) order
  // per head, S*S*B mask indexed (row*S + col)*B + anchor; ignored cells
  // are exempt from the no-objectness term. Positives are always ignored.
  std::vector<std::vector<std::uint8_t>> ignore;
  std::vector<int> dropped;  // ground truths displaced by a larger one
};

// Assigns each ground truth to the (head, anchor) whose anchor shape has
// maximal IoU with it (both centered at the origin), at the cell holding
// the ground-truth center. Anchors whose cell-centered box exceeds
// ignore_iou against any ground truth are exempted from the
// no-objectness penalty.
TargetAssignment assign_targets(const std::vector<Annotation>& gts,
                                const std::vector<GridSpec>& grids,
                                int img_w, int img_h, double ignore_iou);

// Four-term loss: mean (1 - giou) over positives, BCE of objectness over
// positives, BCE of no-objectness over non-ignored negatives, summed
// per-class BCE over positives. Empty reductions are 0.
LossBreakdown yolo_loss(const std::vector<Tensor>& heads,
                        const TargetAssignment& assignment,
                        const std::vector<GridSpec>& grids, int img_w,
                        int img_h, const LossWeights& weights = {});

// Analytic gradient of yolo_loss with respect to the raw head values;
// zero at non-participating entries.
std::vector<Tensor> yolo_loss_gradient(const std::vector<Tensor>& heads,
                                       const TargetAssignment& assignment,
                                       const std::vector<GridSpec>& grids,
                                       int img_w, int img_h,
                                       const LossWeights& weights = {});

struct OptimizerState {
  std::vector<std::vector<double>> m, v;  // parallel to the parameter arrays
  std::int64_t step = 0;
};

// Bias-corrected Adam over a set of parameter arrays. The state is sized
// on first use and must keep matching shapes afterwards.
void adam_step(std::vector<std::vector<double>*>& params,
               const std::vector<std::vector<double>>& grads,
               OptimizerState& state, double lr, double beta1, double beta2,
               double eps);

double sigmoid(double x);
double sigmoid_inverse(double p);
// log(1 + e^x), overflow-safe
double softplus(double x);

}  // namespace kneedet
