#include "kneedet/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "kneedet/errors.hpp"

namespace kneedet {

namespace {

bool finite_box(const Box& b) {
  return std::isfinite(b.x1) && std::isfinite(b.y1) && std::isfinite(b.x2) &&
         std::isfinite(b.y2);
}

}  // namespace

void validate_box(const Box& b) {
  if (!finite_box(b)) {
    throw InvalidInputError("box has non-finite coordinates");
  }
  if (b.x1 > b.x2 || b.y1 > b.y2) {
    throw InvalidInputError("box corners out of order: (" +
                            std::to_string(b.x1) + "," + std::to_string(b.y1) +
                            "," + std::to_string(b.x2) + "," +
                            std::to_string(b.y2) + ")");
  }
}

void validate_norm_box(const NormBox& nb) {
  if (!(std::isfinite(nb.cx) && std::isfinite(nb.cy) && std::isfinite(nb.w) &&
        std::isfinite(nb.h))) {
    throw InvalidInputError("normalized box has non-finite fields");
  }
  if (nb.cx < 0 || nb.cx > 1 || nb.cy < 0 || nb.cy > 1) {
    throw InvalidInputError("normalized box center outside [0,1]");
  }
  if (nb.w <= 0 || nb.w > 1 || nb.h <= 0 || nb.h > 1) {
    throw InvalidInputError("normalized box extent outside (0,1]");
  }
}

double iou(const Box& a, const Box& b) {
  validate_box(a);
  validate_box(b);
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  const double inter = std::max(iw, 0.0) * std::max(ih, 0.0);
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

GIoUResult giou(const Box& a, const Box& b) {
  validate_box(a);
  validate_box(b);
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  const double inter = std::max(iw, 0.0) * std::max(ih, 0.0);
  const double uni = a.area() + b.area() - inter;
  // the hull contains the union; keep that exact under rounding
  const double hull =
      std::max((std::max(a.x2, b.x2) - std::min(a.x1, b.x1)) *
                   (std::max(a.y2, b.y2) - std::min(a.y1, b.y1)),
               uni);
  if (hull <= 0) {
    throw InvalidInputError("degenerate geometry: enclosing hull has zero area");
  }
  GIoUResult r;
  r.intersection = inter;
  r.union_area = uni;
  r.hull_area = hull;
  r.iou = uni > 0 ? inter / uni : 0.0;
  r.giou = r.iou - (hull - uni) / hull;
  return r;
}

std::array<double, 4> giou_gradient(const Box& pred, const Box& target) {
  validate_box(pred);
  validate_box(target);
  if (pred.area() <= 0) {
    throw InvalidInputError("degenerate geometry: prediction box has zero area");
  }

  const double iw = std::min(pred.x2, target.x2) - std::max(pred.x1, target.x1);
  const double ih = std::min(pred.y2, target.y2) - std::max(pred.y1, target.y1);
  const bool touching = iw >= 0 && ih >= 0;
  const double inter = std::max(iw, 0.0) * std::max(ih, 0.0);
  const double uni = pred.area() + target.area() - inter;
  const double hw = std::max(pred.x2, target.x2) - std::min(pred.x1, target.x1);
  const double hh = std::max(pred.y2, target.y2) - std::min(pred.y1, target.y1);
  const double hull = hw * hh;

  const double pw = pred.width();
  const double ph = pred.height();

  // Intersection partials; at ties the pred edge is the active one.
  const double di_x1 = (touching && pred.x1 >= target.x1) ? -std::max(ih, 0.0) : 0.0;
  const double di_y1 = (touching && pred.y1 >= target.y1) ? -std::max(iw, 0.0) : 0.0;
  const double di_x2 = (touching && pred.x2 <= target.x2) ? std::max(ih, 0.0) : 0.0;
  const double di_y2 = (touching && pred.y2 <= target.y2) ? std::max(iw, 0.0) : 0.0;

  const double da_x1 = -ph, da_y1 = -pw, da_x2 = ph, da_y2 = pw;

  const double dh_x1 = (pred.x1 <= target.x1) ? -hh : 0.0;
  const double dh_y1 = (pred.y1 <= target.y1) ? -hw : 0.0;
  const double dh_x2 = (pred.x2 >= target.x2) ? hh : 0.0;
  const double dh_y2 = (pred.y2 >= target.y2) ? hw : 0.0;

  // giou = inter/union + union/hull − 1
  const auto partial = [&](double di, double da, double dh) {
    const double du = da - di;
    return (di * uni - inter * du) / (uni * uni) +
           (du * hull - uni * dh) / (hull * hull);
  };
  return {partial(di_x1, da_x1, dh_x1), partial(di_y1, da_y1, dh_y1),
          partial(di_x2, da_x2, dh_x2), partial(di_y2, da_y2, dh_y2)};
}

Box norm_to_abs(const NormBox& nb, int img_w, int img_h) {
  validate_norm_box(nb);
  if (img_w <= 0 || img_h <= 0) {
    throw InvalidInputError("image dimensions must be positive");
  }
  const double w = static_cast<double>(img_w);
  const double h = static_cast<double>(img_h);
  Box b{(nb.cx - nb.w / 2) * w, (nb.cy - nb.h / 2) * h,
        (nb.cx + nb.w / 2) * w, (nb.cy + nb.h / 2) * h};
  b.x1 = std::clamp(b.x1, 0.0, w);
  b.y1 = std::clamp(b.y1, 0.0, h);
  b.x2 = std::clamp(b.x2, 0.0, w);
  b.y2 = std::clamp(b.y2, 0.0, h);
  return b;
}

NormBox abs_to_norm(const Box& b, int img_w, int img_h) {
  validate_box(b);
  if (img_w <= 0 || img_h <= 0) {
    throw InvalidInputError("image dimensions must be positive");
  }
  const double w = static_cast<double>(img_w);
  const double h = static_cast<double>(img_h);
  const double x1 = std::clamp(b.x1, 0.0, w);
  const double y1 = std::clamp(b.y1, 0.0, h);
  const double x2 = std::clamp(b.x2, 0.0, w);
  const double y2 = std::clamp(b.y2, 0.0, h);
  if (x2 - x1 <= 0 || y2 - y1 <= 0) {
    throw InvalidInputError("box has zero extent inside the image");
  }
  NormBox nb{(x1 + x2) / 2 / w, (y1 + y2) / 2 / h, (x2 - x1) / w, (y2 - y1) / h};
  validate_norm_box(nb);
  return nb;
}

}  // namespace kneedet
