#include "kneedet/loss.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

#include "kneedet/errors.hpp"

namespace kneedet {

namespace {

constexpr double kEncodeEps = 1e-6;

// IoU of two box shapes centered at the origin.
double shape_iou(double w1, double h1, double w2, double h2) {
  const double inter = std::min(w1, w2) * std::min(h1, h2);
  const double uni = w1 * h1 + w2 * h2 - inter;
  return uni > 0 ? inter / uni : 0.0;
}

struct SlotIndex {
  int head, row, col, anchor;
};

std::size_t flat_slot(const GridSpec& g, int row, int col, int anchor) {
  return (static_cast<std::size_t>(row) * g.s + col) * g.b + anchor;
}

void check_heads(const std::vector<Tensor>& heads,
                 const std::vector<GridSpec>& grids) {
  if (heads.size() != grids.size()) {
    throw InvalidInputError("head count does not match grid count");
  }
  for (std::size_t h = 0; h < heads.size(); ++h) {
    const GridSpec& g = grids[h];
    if (heads[h].h != g.s || heads[h].w != g.s ||
        heads[h].c != g.b * (5 + g.classes)) {
      throw InvalidInputError("head " + std::to_string(h) +
                              " shape does not match its grid");
    }
  }
}

}  // namespace

double sigmoid(double x) {
  if (x >= 0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double sigmoid_inverse(double p) {
  return std::log(p / (1.0 - p));
}

double softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

TargetAssignment assign_targets(const std::vector<Annotation>& gts,
                                const std::vector<GridSpec>& grids,
                                int img_w, int img_h, double ignore_iou) {
  if (grids.empty()) {
    throw InvalidInputError("no detection heads configured");
  }
  if (img_w <= 0 || img_h <= 0) {
    throw InvalidInputError("image dimensions must be positive");
  }

  TargetAssignment out;
  out.ignore.resize(grids.size());
  for (std::size_t h = 0; h < grids.size(); ++h) {
    out.ignore[h].assign(
        static_cast<std::size_t>(grids[h].s) * grids[h].s * grids[h].b, 0);
  }

  // winner per slot: gt index, resolved by area on collision
  std::vector<std::map<std::size_t, int>> slot_gt(grids.size());
  std::vector<SlotIndex> chosen(gts.size());

  for (int gi = 0; gi < static_cast<int>(gts.size()); ++gi) {
    const Annotation& gt = gts[gi];
    validate_norm_box(gt.box);
    const double gw = gt.box.w * img_w;
    const double gh = gt.box.h * img_h;

    double best = -1;
    SlotIndex best_slot{0, 0, 0, 0};
    for (int h = 0; h < static_cast<int>(grids.size()); ++h) {
      const GridSpec& g = grids[h];
      for (int k = 0; k < g.b; ++k) {
        const double aw = g.anchors[k].first * img_w / g.net_w;
        const double ah = g.anchors[k].second * img_h / g.net_h;
        const double v = shape_iou(gw, gh, aw, ah);
        if (v > best) {
          best = v;
          const int col = std::min(static_cast<int>(gt.box.cx * g.s), g.s - 1);
          const int row = std::min(static_cast<int>(gt.box.cy * g.s), g.s - 1);
          best_slot = {h, row, col, k};
        }
      }
    }
    chosen[gi] = best_slot;

    const std::size_t flat =
        flat_slot(grids[best_slot.head], best_slot.row, best_slot.col,
                  best_slot.anchor);
    auto [it, inserted] = slot_gt[best_slot.head].try_emplace(flat, gi);
    if (!inserted) {
      const Annotation& other = gts[it->second];
      if (gt.box.w * gt.box.h > other.box.w * other.box.h) {
        out.dropped.push_back(it->second);
        it->second = gi;
      } else {
        out.dropped.push_back(gi);
      }
    }
  }

  for (int h = 0; h < static_cast<int>(grids.size()); ++h) {
    const GridSpec& g = grids[h];
    for (const auto& [flat, gi] : slot_gt[h]) {
      const SlotIndex slot = chosen[gi];
      const Annotation& gt = gts[gi];

      PositiveTarget p;
      p.head = h;
      p.row = slot.row;
      p.col = slot.col;
      p.anchor = slot.anchor;
      p.gt_index = gi;
      p.class_id = gt.class_id;
      p.gt_box = norm_to_abs(gt.box, img_w, img_h);

      const double ox = std::clamp(gt.box.cx * g.s - slot.col, kEncodeEps,
                                   1.0 - kEncodeEps);
      const double oy = std::clamp(gt.box.cy * g.s - slot.row, kEncodeEps,
                                   1.0 - kEncodeEps);
      p.encoded.tx = sigmoid_inverse(ox);
      p.encoded.ty = sigmoid_inverse(oy);
      p.encoded.tw = std::log(gt.box.w * g.net_w / g.anchors[slot.anchor].first);
      p.encoded.th = std::log(gt.box.h * g.net_h / g.anchors[slot.anchor].second);

      out.positives.push_back(p);
      out.ignore[h][flat] = 1;
    }
  }

  // exempt confusable anchors from the no-objectness penalty
  for (int h = 0; h < static_cast<int>(grids.size()); ++h) {
    const GridSpec& g = grids[h];
    for (int row = 0; row < g.s; ++row) {
      for (int col = 0; col < g.s; ++col) {
        for (int k = 0; k < g.b; ++k) {
          const std::size_t flat = flat_slot(g, row, col, k);
          if (out.ignore[h][flat]) {
            continue;
          }
          const Box anchor_box =
              decode_box(0, 0, 0, 0, row, col, g, k, img_w, img_h);
          for (const Annotation& gt : gts) {
            if (iou(anchor_box, norm_to_abs(gt.box, img_w, img_h)) > ignore_iou) {
              out.ignore[h][flat] = 1;
              break;
            }
          }
        }
      }
    }
  }
  return out;
}

LossBreakdown yolo_loss(const std::vector<Tensor>& heads,
                        const TargetAssignment& assignment,
                        const std::vector<GridSpec>& grids, int img_w,
                        int img_h, const LossWeights& weights) {
  check_heads(heads, grids);
  LossBreakdown lb;
  lb.weights = weights;

  double giou_sum = 0, obj_sum = 0, cls_sum = 0;
  for (const PositiveTarget& p : assignment.positives) {
    const GridSpec& g = grids[p.head];
    const Tensor& head = heads[p.head];
    const int base = p.anchor * (5 + g.classes);
    const double tx = head.at(base + 0, p.row, p.col);
    const double ty = head.at(base + 1, p.row, p.col);
    const double tw = head.at(base + 2, p.row, p.col);
    const double th = head.at(base + 3, p.row, p.col);
    const double to = head.at(base + 4, p.row, p.col);

    const Box pred =
        decode_box(tx, ty, tw, th, p.row, p.col, g, p.anchor, img_w, img_h);
    giou_sum += 1.0 - giou(pred, p.gt_box).giou;
    obj_sum += softplus(-to);
    for (int c = 0; c < g.classes; ++c) {
      const double tc = head.at(base + 5 + c, p.row, p.col);
      cls_sum += c == p.class_id ? softplus(-tc) : softplus(tc);
    }
  }

  double noobj_sum = 0;
  std::int64_t n_neg = 0;
  for (std::size_t h = 0; h < heads.size(); ++h) {
    const GridSpec& g = grids[h];
    for (int row = 0; row < g.s; ++row) {
      for (int col = 0; col < g.s; ++col) {
        for (int k = 0; k < g.b; ++k) {
          if (assignment.ignore[h][flat_slot(g, row, col, k)]) {
            continue;
          }
          const double to = heads[h].at(k * (5 + g.classes) + 4, row, col);
          noobj_sum += softplus(to);
          ++n_neg;
        }
      }
    }
  }

  const std::size_t n_pos = assignment.positives.size();
  lb.giou_term = n_pos > 0 ? giou_sum / n_pos : 0.0;
  lb.obj_term = n_pos > 0 ? obj_sum / n_pos : 0.0;
  lb.cls_term = n_pos > 0 ? cls_sum / n_pos : 0.0;
  lb.noobj_term = n_neg > 0 ? noobj_sum / n_neg : 0.0;
  lb.total = weights.box * lb.giou_term + weights.obj * lb.obj_term +
             weights.noobj * lb.noobj_term + weights.cls * lb.cls_term;
  if (!std::isfinite(lb.total)) {
    throw NumericError("non-finite loss");
  }
  return lb;
}

std::vector<Tensor> yolo_loss_gradient(const std::vector<Tensor>& heads,
                                       const TargetAssignment& assignment,
                                       const std::vector<GridSpec>& grids,
                                       int img_w, int img_h,
                                       const LossWeights& weights) {
  check_heads(heads, grids);
  std::vector<Tensor> grads;
  grads.reserve(heads.size());
  for (const Tensor& h : heads) {
    grads.emplace_back(h.c, h.h, h.w);
  }

  const std::size_t n_pos = assignment.positives.size();
  for (const PositiveTarget& p : assignment.positives) {
    const GridSpec& g = grids[p.head];
    const Tensor& head = heads[p.head];
    Tensor& grad = grads[p.head];
    const int base = p.anchor * (5 + g.classes);
    const double tx = head.at(base + 0, p.row, p.col);
    const double ty = head.at(base + 1, p.row, p.col);
    const double tw = head.at(base + 2, p.row, p.col);
    const double th = head.at(base + 3, p.row, p.col);
    const double to = head.at(base + 4, p.row, p.col);

    const Box pred =
        decode_box(tx, ty, tw, th, p.row, p.col, g, p.anchor, img_w, img_h);
    const auto [gx1, gy1, gx2, gy2] = giou_gradient(pred, p.gt_box);

    const double sx = sigmoid(tx);
    const double sy = sigmoid(ty);
    const double dcx_dtx = sx * (1.0 - sx) / g.s * img_w;
    const double dcy_dty = sy * (1.0 - sy) / g.s * img_h;
    const double w_px = g.anchors[p.anchor].first * std::exp(tw) * img_w / g.net_w;
    const double h_px = g.anchors[p.anchor].second * std::exp(th) * img_h / g.net_h;

    // box corners: x1 = cx - w/2, x2 = cx + w/2
    const double dgiou_dtx = (gx1 + gx2) * dcx_dtx;
    const double dgiou_dty = (gy1 + gy2) * dcy_dty;
    const double dgiou_dtw = (gx2 - gx1) * w_px / 2.0;
    const double dgiou_dth = (gy2 - gy1) * h_px / 2.0;

    const double scale = weights.box / static_cast<double>(n_pos);
    grad.at(base + 0, p.row, p.col) -= scale * dgiou_dtx;
    grad.at(base + 1, p.row, p.col) -= scale * dgiou_dty;
    grad.at(base + 2, p.row, p.col) -= scale * dgiou_dtw;
    grad.at(base + 3, p.row, p.col) -= scale * dgiou_dth;

    grad.at(base + 4, p.row, p.col) +=
        weights.obj * (sigmoid(to) - 1.0) / static_cast<double>(n_pos);
    for (int c = 0; c < g.classes; ++c) {
      const double tc = head.at(base + 5 + c, p.row, p.col);
      const double target = c == p.class_id ? 1.0 : 0.0;
      grad.at(base + 5 + c, p.row, p.col) +=
          weights.cls * (sigmoid(tc) - target) / static_cast<double>(n_pos);
    }
  }

  std::int64_t n_neg = 0;
  for (std::size_t h = 0; h < heads.size(); ++h) {
    const GridSpec& g = grids[h];
    for (std::size_t flat = 0; flat < assignment.ignore[h].size(); ++flat) {
      if (!assignment.ignore[h][flat]) {
        ++n_neg;
      }
    }
  }
  if (n_neg > 0) {
    for (std::size_t h = 0; h < heads.size(); ++h) {
      const GridSpec& g = grids[h];
      for (int row = 0; row < g.s; ++row) {
        for (int col = 0; col < g.s; ++col) {
          for (int k = 0; k < g.b; ++k) {
            if (assignment.ignore[h][flat_slot(g, row, col, k)]) {
              continue;
            }
            const int ch = k * (5 + g.classes) + 4;
            grads[h].at(ch, row, col) +=
                weights.noobj * sigmoid(heads[h].at(ch, row, col)) /
                static_cast<double>(n_neg);
          }
        }
      }
    }
  }
  return grads;
}

void adam_step(std::vector<std::vector<double>*>& params,
               const std::vector<std::vector<double>>& grads,
               OptimizerState& state, double lr, double beta1, double beta2,
               double eps) {
  if (params.size() != grads.size()) {
    throw InvalidInputError("adam: parameter and gradient array counts differ");
  }
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i]->size(), 0.0);
      state.v[i].assign(params[i]->size(), 0.0);
    }
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));

  for (std::size_t i = 0; i < params.size(); ++i) {
    std::vector<double>& p = *params[i];
    const std::vector<double>& g = grads[i];
    if (p.size() != g.size() || p.size() != state.m[i].size()) {
      throw InvalidInputError("adam: array shape mismatch");
    }
    for (std::size_t j = 0; j < p.size(); ++j) {
      state.m[i][j] = beta1 * state.m[i][j] + (1.0 - beta1) * g[j];
      state.v[i][j] = beta2 * state.v[i][j] + (1.0 - beta2) * g[j] * g[j];
      const double mhat = state.m[i][j] / bc1;
      const double vhat = state.v[i][j] / bc2;
      p[j] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

}  // namespace kneedet
