#pragma once

#include <span>
#include <vector>

#include "kneedet/model.hpp"
#include "kneedet/tensor.hpp"

namespace kneedet {

// Cross-correlation with zero padding, fused bias, no activation.
// Accumulation runs in (input channel, row, column) order per output
// element so results are bitwise reproducible.
Tensor conv2d_linear(const Tensor& input, const LayerSpec& layer,
                     std::span<const double> kernel,
                     std::span<const double> bias);

// conv2d_linear followed by the layer's activation.
Tensor conv2d(const Tensor& input, const LayerSpec& layer,
              std::span<const double> kernel, std::span<const double> bias);

Tensor apply_activation(Tensor t, Activation activation);

double leaky_slope();

Tensor upsample_nearest(const Tensor& input, int factor);

Tensor shortcut_add(const Tensor& a, const Tensor& b);

Tensor route_concat(const std::vector<const Tensor*>& inputs);

// Evaluates layers in order and returns the raw head tensor of every yolo
// layer, in cfg order. Throws NumericError naming the layer if any value
// goes non-finite.
std::vector<Tensor> forward(const Model& model, const Tensor& input);

}  // namespace kneedet
