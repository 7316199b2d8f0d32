#include "kneedet/engine.hpp"

#include <cmath>
#include <string>

#include "kneedet/errors.hpp"

namespace kneedet {

namespace {

constexpr double kLeakySlope = 0.1;

void check_finite(const Tensor& t, const std::string& where) {
  for (double v : t.data) {
    if (!std::isfinite(v)) {
      throw NumericError("non-finite value in " + where);
    }
  }
}

}  // namespace

double leaky_slope() { return kLeakySlope; }

Tensor conv2d_linear(const Tensor& input, const LayerSpec& layer,
                     std::span<const double> kernel,
                     std::span<const double> bias) {
  const int in_c = input.c, in_h = input.h, in_w = input.w;
  const int k = layer.size, stride = layer.stride, pad = layer.padding();
  const int filters = layer.filters;
  if (kernel.size() != static_cast<std::size_t>(filters) * in_c * k * k) {
    throw InvalidInputError("conv kernel size does not match input channels");
  }
  if (bias.size() != static_cast<std::size_t>(filters)) {
    throw InvalidInputError("conv bias size does not match filter count");
  }
  if (in_h + 2 * pad < k || in_w + 2 * pad < k) {
    throw InvalidInputError("conv input smaller than kernel");
  }
  const int out_h = (in_h + 2 * pad - k) / stride + 1;
  const int out_w = (in_w + 2 * pad - k) / stride + 1;

  Tensor out(filters, out_h, out_w);
  for (int f = 0; f < filters; ++f) {
    const double* kf = kernel.data() + static_cast<std::size_t>(f) * in_c * k * k;
    double* of = out.data.data() + static_cast<std::size_t>(f) * out_h * out_w;
    for (int oy = 0; oy < out_h; ++oy) {
      for (int ox = 0; ox < out_w; ++ox) {
        double acc = bias[f];
        const int iy0 = oy * stride - pad;
        const int ix0 = ox * stride - pad;
        for (int ic = 0; ic < in_c; ++ic) {
          const double* in_ch =
              input.data.data() + static_cast<std::size_t>(ic) * in_h * in_w;
          const double* kc = kf + static_cast<std::size_t>(ic) * k * k;
          for (int ky = 0; ky < k; ++ky) {
            const int iy = iy0 + ky;
            if (iy < 0 || iy >= in_h) continue;
            const double* row = in_ch + static_cast<std::size_t>(iy) * in_w;
            const double* krow = kc + static_cast<std::size_t>(ky) * k;
            for (int kx = 0; kx < k; ++kx) {
              const int ix = ix0 + kx;
              if (ix < 0 || ix >= in_w) continue;
              acc += row[ix] * krow[kx];
            }
          }
        }
        of[static_cast<std::size_t>(oy) * out_w + ox] = acc;
      }
    }
  }
  return out;
}

Tensor apply_activation(Tensor t, Activation activation) {
  if (activation == Activation::leaky) {
    for (double& v : t.data) {
      if (v < 0) v *= kLeakySlope;
    }
  }
  return t;
}

Tensor conv2d(const Tensor& input, const LayerSpec& layer,
              std::span<const double> kernel, std::span<const double> bias) {
  return apply_activation(conv2d_linear(input, layer, kernel, bias),
                          layer.activation);
}

Tensor upsample_nearest(const Tensor& input, int factor) {
  if (factor < 1) {
    throw InvalidInputError("upsample factor must be >= 1");
  }
  Tensor out(input.c, input.h * factor, input.w * factor);
  for (int ch = 0; ch < input.c; ++ch) {
    for (int y = 0; y < out.h; ++y) {
      for (int x = 0; x < out.w; ++x) {
        out.at(ch, y, x) = input.at(ch, y / factor, x / factor);
      }
    }
  }
  return out;
}

Tensor shortcut_add(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw InvalidInputError("shortcut inputs have different shapes");
  }
  Tensor out = a;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    out.data[i] += b.data[i];
  }
  return out;
}

Tensor route_concat(const std::vector<const Tensor*>& inputs) {
  if (inputs.empty()) {
    throw InvalidInputError("route requires at least one input");
  }
  int channels = 0;
  for (const Tensor* t : inputs) {
    if (t->h != inputs.front()->h || t->w != inputs.front()->w) {
      throw InvalidInputError("route inputs have mismatched spatial sizes");
    }
    channels += t->c;
  }
  Tensor out(channels, inputs.front()->h, inputs.front()->w);
  std::size_t offset = 0;
  for (const Tensor* t : inputs) {
    std::copy(t->data.begin(), t->data.end(), out.data.begin() + offset);
    offset += t->data.size();
  }
  return out;
}

std::vector<Tensor> forward(const Model& model, const Tensor& input) {
  const NetworkConfig& cfg = model.config;
  if (input.c != cfg.channels || input.h != cfg.height || input.w != cfg.width) {
    throw InvalidInputError(
        "input tensor " + std::to_string(input.c) + "x" +
        std::to_string(input.h) + "x" + std::to_string(input.w) +
        " does not match network input " + std::to_string(cfg.channels) + "x" +
        std::to_string(cfg.height) + "x" + std::to_string(cfg.width));
  }
  check_finite(input, "input tensor");

  std::vector<Tensor> outputs;
  outputs.reserve(cfg.layers.size());
  std::vector<Tensor> heads;

  for (std::size_t i = 0; i < cfg.layers.size(); ++i) {
    const LayerSpec& l = cfg.layers[i];
    const Tensor& prev = i == 0 ? input : outputs[i - 1];
    Tensor out;
    switch (l.kind) {
      case LayerKind::convolutional:
        out = conv2d(prev, l, model.fused_kernel[i], model.fused_bias[i]);
        break;
      case LayerKind::shortcut:
        out = shortcut_add(prev, outputs[l.from_resolved]);
        break;
      case LayerKind::route: {
        std::vector<const Tensor*> ins;
        ins.reserve(l.layers_resolved.size());
        for (int idx : l.layers_resolved) {
          ins.push_back(&outputs[idx]);
        }
        out = route_concat(ins);
        break;
      }
      case LayerKind::upsample:
        out = upsample_nearest(prev, l.factor);
        break;
      case LayerKind::yolo:
        out = prev;  // raw head; decoding happens in postprocess
        break;
      case LayerKind::net:
        throw InvalidInputError("unexpected [net] layer in graph");
    }
    check_finite(out, "layer " + std::to_string(i) + " (" +
                          std::string(to_string(l.kind)) + ")");
    if (l.kind == LayerKind::yolo) {
      heads.push_back(out);
    }
    outputs.push_back(std::move(out));
  }
  return heads;
}

}  // namespace kneedet
