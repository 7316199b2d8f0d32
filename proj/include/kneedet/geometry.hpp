#pragma once

#include <array>

namespace kneedet {

// Axis-aligned rectangle in absolute pixel coordinates, corner form.
// Invariants: x1 <= x2, y1 <= y2, all coordinates finite.
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  bool operator==(const Box&) const = default;
};

// Center-form box normalized by image dimensions.
// Invariants: cx, cy in [0,1]; w, h in (0,1].
struct NormBox {
  double cx = 0, cy = 0, w = 0, h = 0;
  bool operator==(const NormBox&) const = default;
};

struct GIoUResult {
  double giou = 0;
  double iou = 0;
  double intersection = 0;
  double union_area = 0;
  double hull_area = 0;
};

// Throws InvalidInputError when the invariants do not hold.
void validate_box(const Box& b);
void validate_norm_box(const NormBox& nb);

// |A∩B| / |A∪B|; 0 when the union has zero area.
double iou(const Box& a, const Box& b);

// iou − (hull − union)/hull where the hull is the minimal enclosing
// axis-aligned rectangle. Throws when the hull has zero area.
GIoUResult giou(const Box& a, const Box& b);

// Partial derivatives of giou(pred, target) with respect to pred's
// (x1, y1, x2, y2), target held constant. At overlap-boundary kinks the
// pred edge is taken as the active one, so the gradient vanishes at
// perfect overlap. Requires pred to have positive area.
std::array<double, 4> giou_gradient(const Box& pred, const Box& target);

// Center-relative to absolute corner form; the result is clamped to the
// image rectangle [0,img_w] x [0,img_h].
Box norm_to_abs(const NormBox& nb, int img_w, int img_h);

// Inverse of norm_to_abs; the box is clamped to image bounds first.
NormBox abs_to_norm(const Box& b, int img_w, int img_h);

}  // namespace kneedet
