#pragma once

#include <cstddef>
#include <vector>

namespace kneedet {

// Dense (channels, height, width) tensor, channel-major then row-major,
// double precision throughout.
struct Tensor {
  int c = 0, h = 0, w = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(int c_, int h_, int w_)
      : c(c_), h(h_), w(w_),
        data(static_cast<std::size_t>(c_) * h_ * w_, 0.0) {}

  std::size_t size() const { return data.size(); }

  double& at(int ch, int y, int x) {
    return data[(static_cast<std::size_t>(ch) * h + y) * w + x];
  }
  double at(int ch, int y, int x) const {
    return data[(static_cast<std::size_t>(ch) * h + y) * w + x];
  }

  bool same_shape(const Tensor& o) const {
    return c == o.c && h == o.h && w == o.w;
  }
  bool operator==(const Tensor&) const = default;
};

}  // namespace kneedet
