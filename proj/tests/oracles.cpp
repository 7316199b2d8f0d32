#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace oracle {

using kneedet::Box;
using kneedet::Detection;
using kneedet::Rng;
using kneedet::Tensor;

Areas rasterize_areas(const Box& a, const Box& b, int cells_per_unit) {
  const double cs = 1.0 / cells_per_unit;
  const double x0 = std::floor(std::min(a.x1, b.x1));
  const double y0 = std::floor(std::min(a.y1, b.y1));
  const double x1 = std::ceil(std::max(a.x2, b.x2));
  const double y1 = std::ceil(std::max(a.y2, b.y2));
  const long nx = std::lround((x1 - x0) / cs);
  const long ny = std::lround((y1 - y0) / cs);

  long in_a = 0, in_b = 0, in_both = 0;
  for (long iy = 0; iy < ny; ++iy) {
    const double cy = y0 + (iy + 0.5) * cs;
    const bool ya = cy > a.y1 && cy < a.y2;
    const bool yb = cy > b.y1 && cy < b.y2;
    if (!ya && !yb) continue;
    for (long ix = 0; ix < nx; ++ix) {
      const double cx = x0 + (ix + 0.5) * cs;
      const bool ia = ya && cx > a.x1 && cx < a.x2;
      const bool ib = yb && cx > b.x1 && cx < b.x2;
      in_a += ia;
      in_b += ib;
      in_both += ia && ib;
    }
  }
  const double cell_area = cs * cs;
  Areas r;
  r.intersection = in_both * cell_area;
  r.a_area = in_a * cell_area;
  r.b_area = in_b * cell_area;
  r.union_area = (in_a + in_b - in_both) * cell_area;
  return r;
}

double iou_rasterized(const Box& a, const Box& b, int cells_per_unit) {
  const Areas areas = rasterize_areas(a, b, cells_per_unit);
  return areas.union_area > 0 ? areas.intersection / areas.union_area : 0.0;
}

std::array<double, 4> giou_gradient_fd(const Box& pred, const Box& target,
                                       double step) {
  std::array<double, 4> grad{};
  for (int i = 0; i < 4; ++i) {
    Box hi = pred, lo = pred;
    double* hp = i == 0 ? &hi.x1 : i == 1 ? &hi.y1 : i == 2 ? &hi.x2 : &hi.y2;
    double* lp = i == 0 ? &lo.x1 : i == 1 ? &lo.y1 : i == 2 ? &lo.x2 : &lo.y2;
    *hp += step;
    *lp -= step;
    grad[i] =
        (kneedet::giou(hi, target).giou - kneedet::giou(lo, target).giou) /
        (2 * step);
  }
  return grad;
}

std::vector<int> nms_bruteforce(const std::vector<Detection>& dets,
                                double iou_threshold) {
  std::vector<int> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (dets[a].score() != dets[b].score()) {
      return dets[a].score() > dets[b].score();
    }
    return a < b;
  });
  std::vector<int> kept;
  for (int idx : order) {
    bool ok = true;
    for (int k : kept) {
      if (dets[k].class_id == dets[idx].class_id &&
          kneedet::iou(dets[k].box, dets[idx].box) > iou_threshold) {
        ok = false;
        break;
      }
    }
    if (ok) {
      kept.push_back(idx);
    }
  }
  return kept;
}

double average_precision_envelope(const std::vector<bool>& flags,
                                  std::int64_t n_gt) {
  if (n_gt <= 0) {
    return 0.0;
  }
  struct Point {
    double recall, precision;
  };
  std::vector<Point> points;
  long tp = 0;
  for (std::size_t i = 0; i < flags.size(); ++i) {
    tp += flags[i] ? 1 : 0;
    points.push_back({static_cast<double>(tp) / n_gt,
                      static_cast<double>(tp) / static_cast<double>(i + 1)});
  }

  const auto envelope = [&](double r) {
    double best = 0;
    for (const Point& p : points) {
      if (p.recall >= r) {
        best = std::max(best, p.precision);
      }
    }
    return best;
  };

  // integrate the step function exactly over the recall partition
  std::vector<double> knots{0.0};
  for (const Point& p : points) {
    knots.push_back(p.recall);
  }
  std::sort(knots.begin(), knots.end());
  knots.erase(std::unique(knots.begin(), knots.end()), knots.end());

  double ap = 0;
  for (std::size_t i = 0; i + 1 < knots.size(); ++i) {
    const double mid = (knots[i] + knots[i + 1]) / 2;
    ap += (knots[i + 1] - knots[i]) * envelope(mid);
  }
  return ap;
}

Tensor conv2d_naive(const Tensor& input, int filters, int size, int stride,
                    int pad, const std::vector<double>& kernel,
                    const std::vector<double>& bias, bool leaky) {
  const int out_h = (input.h + 2 * pad - size) / stride + 1;
  const int out_w = (input.w + 2 * pad - size) / stride + 1;
  Tensor out(filters, out_h, out_w);
  for (int f = 0; f < filters; ++f) {
    for (int oy = 0; oy < out_h; ++oy) {
      for (int ox = 0; ox < out_w; ++ox) {
        out.at(f, oy, ox) = bias[f];
      }
    }
  }
  for (int ic = 0; ic < input.c; ++ic) {
    for (int f = 0; f < filters; ++f) {
      for (int ky = 0; ky < size; ++ky) {
        for (int kx = 0; kx < size; ++kx) {
          const double w =
              kernel[((static_cast<std::size_t>(f) * input.c + ic) * size + ky) *
                         size +
                     kx];
          for (int oy = 0; oy < out_h; ++oy) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= input.h) continue;
            for (int ox = 0; ox < out_w; ++ox) {
              const int ix = ox * stride - pad + kx;
              if (ix < 0 || ix >= input.w) continue;
              out.at(f, oy, ox) += w * input.at(ic, iy, ix);
            }
          }
        }
      }
    }
  }
  if (leaky) {
    for (double& v : out.data) {
      if (v < 0) v *= 0.1;
    }
  }
  return out;
}

Box random_box(Rng& rng, double lo, double hi, double min_extent) {
  while (true) {
    const double x1 = rng.uniform(lo, hi);
    const double x2 = rng.uniform(lo, hi);
    const double y1 = rng.uniform(lo, hi);
    const double y2 = rng.uniform(lo, hi);
    Box b{std::min(x1, x2), std::min(y1, y2), std::max(x1, x2),
          std::max(y1, y2)};
    if (b.width() >= min_extent && b.height() >= min_extent) {
      return b;
    }
  }
}

}  // namespace oracle
