#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "kneedet/geometry.hpp"
#include "kneedet/tensor.hpp"

namespace kneedet {

struct OverlayBox {
  int class_id = 0;
  Box box;
};

// Fixed color per class id, cycling after four.
std::array<std::uint8_t, 3> class_color(int class_id);

// Converts the grayscale image to RGB and draws one-pixel box outlines in
// the class color; boxes are clamped to the image. Returns packed RGB
// rows suitable for write_ppm.
std::vector<std::uint8_t> render_overlay(const Tensor& gray,
                                         const std::vector<OverlayBox>& boxes);

}  // namespace kneedet
