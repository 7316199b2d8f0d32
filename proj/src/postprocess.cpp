#include "kneedet/postprocess.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>

#include "kneedet/errors.hpp"
#include "kneedet/fileio.hpp"
#include "kneedet/model.hpp"

namespace kneedet {

namespace {

double sigmoid(double x) {
  if (x >= 0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

const std::vector<std::pair<double, double>>& default_anchors() {
  // k-means (k=9) over ~2e3 synthetic glyph boxes at 128 px input.
  static const std::vector<std::pair<double, double>> anchors = {
      {26.0, 26.0}, {31.0, 28.0}, {29.0, 33.0},
      {36.0, 32.0}, {33.0, 37.0}, {36.0, 40.0},
      {42.0, 37.0}, {39.0, 44.0}, {44.0, 45.0}};
  return anchors;
}

std::vector<GridSpec> grids_from_config(const NetworkConfig& config) {
  std::vector<GridSpec> grids;
  for (int idx : config.yolo_layers()) {
    const LayerSpec& l = config.layers[idx];
    const Shape shape = config.output_shapes[idx];
    if (shape.h != shape.w) {
      throw InvalidInputError("yolo layer " + std::to_string(idx) +
                              " has a non-square grid");
    }
    GridSpec g;
    g.s = shape.h;
    g.b = static_cast<int>(l.mask.size());
    g.classes = l.classes;
    for (int m : l.mask) {
      g.anchors.push_back(l.anchors[m]);
    }
    g.net_w = config.width;
    g.net_h = config.height;
    grids.push_back(std::move(g));
  }
  return grids;
}

Box decode_box(double tx, double ty, double tw, double th, int row, int col,
               const GridSpec& grid, int anchor, int img_w, int img_h) {
  const double cx = (col + sigmoid(tx)) / grid.s * img_w;
  const double cy = (row + sigmoid(ty)) / grid.s * img_h;
  const double w =
      grid.anchors[anchor].first * std::exp(tw) * img_w / grid.net_w;
  const double h =
      grid.anchors[anchor].second * std::exp(th) * img_h / grid.net_h;
  return Box{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
}

std::vector<Detection> decode(const Tensor& head, const GridSpec& grid,
                              int img_w, int img_h) {
  const int per_anchor = 5 + grid.classes;
  if (head.h != grid.s || head.w != grid.s || head.c != grid.b * per_anchor) {
    throw InvalidInputError("head tensor shape does not match grid spec");
  }
  for (double v : head.data) {
    if (!std::isfinite(v)) {
      throw NumericError("non-finite value in detection head");
    }
  }

  std::vector<Detection> out;
  out.reserve(static_cast<std::size_t>(grid.s) * grid.s * grid.b * grid.classes);
  for (int i = 0; i < grid.s; ++i) {
    for (int j = 0; j < grid.s; ++j) {
      for (int k = 0; k < grid.b; ++k) {
        const int base = k * per_anchor;
        const double tx = head.at(base + 0, i, j);
        const double ty = head.at(base + 1, i, j);
        const double tw = head.at(base + 2, i, j);
        const double th = head.at(base + 3, i, j);
        const double to = head.at(base + 4, i, j);
        const Box box = decode_box(tx, ty, tw, th, i, j, grid, k, img_w, img_h);
        const double objectness = sigmoid(to);
        for (int c = 0; c < grid.classes; ++c) {
          Detection d;
          d.box = box;
          d.class_id = c;
          d.objectness = objectness;
          d.class_prob = sigmoid(head.at(base + 5 + c, i, j));
          out.push_back(d);
        }
      }
    }
  }
  return out;
}

std::vector<Detection> filter_confidence(const std::vector<Detection>& dets,
                                         double threshold) {
  std::vector<Detection> out;
  for (const Detection& d : dets) {
    if (d.score() >= threshold) {
      out.push_back(d);
    }
  }
  return out;
}

std::vector<Detection> nms(const std::vector<Detection>& dets,
                           double iou_threshold) {
  if (!(iou_threshold > 0 && iou_threshold < 1)) {
    throw InvalidInputError("nms iou threshold must be in (0,1)");
  }
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dets[a].score() > dets[b].score();
  });

  std::vector<Detection> kept;
  for (std::size_t idx : order) {
    const Detection& cand = dets[idx];
    bool suppressed = false;
    for (const Detection& k : kept) {
      if (k.class_id == cand.class_id && iou(k.box, cand.box) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) {
      kept.push_back(cand);
    }
  }
  return kept;
}

std::string write_detections(const std::vector<Detection>& dets) {
  std::string out;
  for (const Detection& d : dets) {
    out += std::to_string(d.class_id);
    out += ' ';
    out += format_double_6g(d.score());
    out += ' ';
    out += format_double_6g(d.box.x1);
    out += ' ';
    out += format_double_6g(d.box.y1);
    out += ' ';
    out += format_double_6g(d.box.x2);
    out += ' ';
    out += format_double_6g(d.box.y2);
    out += '\n';
  }
  return out;
}

std::vector<PredBox> read_detections(std::string_view text) {
  std::vector<PredBox> out;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t eol = text.find('\n', pos);
    std::string_view line = text.substr(
        pos, eol == std::string_view::npos ? std::string_view::npos : eol - pos);
    pos = eol == std::string_view::npos ? text.size() + 1 : eol + 1;
    ++line_no;

    std::vector<std::string_view> tokens;
    std::size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
      std::size_t start = i;
      while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
      if (i > start) tokens.push_back(line.substr(start, i - start));
    }
    if (tokens.empty()) {
      continue;
    }
    if (tokens.size() != 6) {
      throw ParseError("detections line " + std::to_string(line_no) +
                       ": expected 6 fields, got " + std::to_string(tokens.size()));
    }
    PredBox p;
    const auto parse_num = [&](std::string_view tok, double& v) {
      const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc() || ptr != tok.data() + tok.size()) {
        throw ParseError("detections line " + std::to_string(line_no) +
                         ": malformed number '" + std::string(tok) + "'");
      }
    };
    {
      const auto [ptr, ec] = std::from_chars(
          tokens[0].data(), tokens[0].data() + tokens[0].size(), p.class_id);
      if (ec != std::errc() || ptr != tokens[0].data() + tokens[0].size() ||
          p.class_id < 0) {
        throw ParseError("detections line " + std::to_string(line_no) +
                         ": malformed class id '" + std::string(tokens[0]) + "'");
      }
    }
    parse_num(tokens[1], p.score);
    parse_num(tokens[2], p.box.x1);
    parse_num(tokens[3], p.box.y1);
    parse_num(tokens[4], p.box.x2);
    parse_num(tokens[5], p.box.y2);
    if (!(p.score >= 0 && p.score <= 1)) {
      throw ParseError("detections line " + std::to_string(line_no) +
                       ": score outside [0,1]");
    }
    validate_box(p.box);
    out.push_back(p);
  }
  return out;
}

}  // namespace kneedet
