#include "kneedet/render.hpp"

#include <algorithm>
#include <cmath>

#include "kneedet/errors.hpp"

namespace kneedet {

std::array<std::uint8_t, 3> class_color(int class_id) {
  static const std::array<std::array<std::uint8_t, 3>, 4> palette = {{
      {230, 60, 60},   // kneeApView
      {60, 200, 80},   // kneeLatView
      {70, 110, 240},  // tkaApView
      {235, 200, 40},  // tkaLatView
  }};
  return palette[static_cast<std::size_t>(class_id) % palette.size()];
}

std::vector<std::uint8_t> render_overlay(const Tensor& gray,
                                         const std::vector<OverlayBox>& boxes) {
  if (gray.c != 1) {
    throw InvalidInputError("render expects a 1-channel image");
  }
  const int w = gray.w, h = gray.h;
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(w) * h * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double v = std::clamp(gray.at(0, y, x), 0.0, 1.0);
      const auto g = static_cast<std::uint8_t>(std::lround(v * 255.0));
      const std::size_t p = (static_cast<std::size_t>(y) * w + x) * 3;
      rgb[p] = rgb[p + 1] = rgb[p + 2] = g;
    }
  }

  const auto put = [&](int x, int y, const std::array<std::uint8_t, 3>& c) {
    const std::size_t p = (static_cast<std::size_t>(y) * w + x) * 3;
    rgb[p] = c[0];
    rgb[p + 1] = c[1];
    rgb[p + 2] = c[2];
  };

  for (const OverlayBox& ob : boxes) {
    validate_box(ob.box);
    const auto color = class_color(ob.class_id);
    const int x0 = std::clamp(static_cast<int>(std::floor(ob.box.x1)), 0, w - 1);
    const int y0 = std::clamp(static_cast<int>(std::floor(ob.box.y1)), 0, h - 1);
    const int x1 = std::clamp(static_cast<int>(std::ceil(ob.box.x2)) - 1, 0, w - 1);
    const int y1 = std::clamp(static_cast<int>(std::ceil(ob.box.y2)) - 1, 0, h - 1);
    for (int x = x0; x <= x1; ++x) {
      put(x, y0, color);
      put(x, y1, color);
    }
    for (int y = y0; y <= y1; ++y) {
      put(x0, y, color);
      put(x1, y, color);
    }
  }
  return rgb;
}

}  // namespace kneedet
