#include "kneedet/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "kneedet/engine.hpp"
#include "kneedet/errors.hpp"
#include "kneedet/fileio.hpp"
#include "kneedet/netpbm.hpp"
#include "kneedet/rng.hpp"

namespace kneedet {

Model init_model(const NetworkConfig& config, std::uint64_t seed) {
  Rng rng(seed);
  Model m;
  m.config = config;
  m.conv.resize(config.layers.size());
  for (std::size_t i = 0; i < config.layers.size(); ++i) {
    const LayerSpec& l = config.layers[i];
    if (l.kind != LayerKind::convolutional) {
      continue;
    }
    const int in_c = i == 0 ? config.channels : config.output_shapes[i - 1].c;
    const std::size_t n =
        static_cast<std::size_t>(l.filters) * in_c * l.size * l.size;
    const double stddev = std::sqrt(2.0 / (in_c * l.size * l.size));
    ConvWeights& cw = m.conv[i];
    cw.kernel.resize(n);
    for (double& w : cw.kernel) {
      w = rng.normal(0.0, stddev);
    }
    cw.bias.assign(l.filters, 0.0);
    if (l.batch_normalize) {
      cw.bn_scale.assign(l.filters, 1.0);
      cw.bn_mean.assign(l.filters, 0.0);
      cw.bn_var.assign(l.filters, 1.0);
    }
  }
  m.refold();
  return m;
}

Tensor leaky_backward(const Tensor& pre_activation, const Tensor& dout) {
  if (!pre_activation.same_shape(dout)) {
    throw InvalidInputError("leaky_backward shape mismatch");
  }
  Tensor dpre = dout;
  const double slope = leaky_slope();
  for (std::size_t i = 0; i < dpre.data.size(); ++i) {
    if (pre_activation.data[i] <= 0) {
      dpre.data[i] *= slope;
    }
  }
  return dpre;
}

ConvGrads conv2d_backward(const Tensor& input, const LayerSpec& layer,
                          std::span<const double> kernel, const Tensor& dpre) {
  const int in_c = input.c, in_h = input.h, in_w = input.w;
  const int k = layer.size, stride = layer.stride, pad = layer.padding();
  const int filters = layer.filters;
  if (kernel.size() != static_cast<std::size_t>(filters) * in_c * k * k) {
    throw InvalidInputError("conv kernel size does not match input channels");
  }
  if (dpre.c != filters) {
    throw InvalidInputError("conv gradient channel mismatch");
  }

  ConvGrads g;
  g.dinput = Tensor(in_c, in_h, in_w);
  g.dkernel.assign(kernel.size(), 0.0);
  g.dbias.assign(filters, 0.0);

  for (int f = 0; f < filters; ++f) {
    const double* kf = kernel.data() + static_cast<std::size_t>(f) * in_c * k * k;
    double* dkf = g.dkernel.data() + static_cast<std::size_t>(f) * in_c * k * k;
    for (int oy = 0; oy < dpre.h; ++oy) {
      for (int ox = 0; ox < dpre.w; ++ox) {
        const double d = dpre.at(f, oy, ox);
        if (d == 0.0) continue;
        g.dbias[f] += d;
        const int iy0 = oy * stride - pad;
        const int ix0 = ox * stride - pad;
        for (int ic = 0; ic < in_c; ++ic) {
          for (int ky = 0; ky < k; ++ky) {
            const int iy = iy0 + ky;
            if (iy < 0 || iy >= in_h) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int ix = ix0 + kx;
              if (ix < 0 || ix >= in_w) continue;
              const std::size_t ki = (static_cast<std::size_t>(ic) * k + ky) * k + kx;
              dkf[ki] += d * input.at(ic, iy, ix);
              g.dinput.at(ic, iy, ix) += d * kf[ki];
            }
          }
        }
      }
    }
  }
  return g;
}

Tensor upsample_backward(const Tensor& dout, int factor) {
  if (factor < 1) {
    throw InvalidInputError("upsample factor must be >= 1");
  }
  if (dout.h % factor != 0 || dout.w % factor != 0) {
    throw InvalidInputError("upsample_backward shape not divisible by factor");
  }
  Tensor din(dout.c, dout.h / factor, dout.w / factor);
  for (int ch = 0; ch < dout.c; ++ch) {
    for (int y = 0; y < dout.h; ++y) {
      for (int x = 0; x < dout.w; ++x) {
        din.at(ch, y / factor, x / factor) += dout.at(ch, y, x);
      }
    }
  }
  return din;
}

namespace {

struct Tape {
  std::vector<Tensor> post;  // layer outputs
  std::vector<Tensor> pre;   // conv pre-activation (empty otherwise)
  std::vector<Tensor> heads;
};

void validate_trainable(const NetworkConfig& cfg) {
  for (std::size_t i = 0; i < cfg.layers.size(); ++i) {
    if (cfg.layers[i].kind == LayerKind::convolutional &&
        cfg.layers[i].batch_normalize) {
      throw InvalidInputError(
          "toy training does not support batch_normalize (layer " +
          std::to_string(i) + ")");
    }
  }
}

Tape forward_train(const Model& model, const Tensor& input) {
  const NetworkConfig& cfg = model.config;
  Tape tape;
  tape.post.reserve(cfg.layers.size());
  tape.pre.resize(cfg.layers.size());
  for (std::size_t i = 0; i < cfg.layers.size(); ++i) {
    const LayerSpec& l = cfg.layers[i];
    const Tensor& prev = i == 0 ? input : tape.post[i - 1];
    Tensor out;
    switch (l.kind) {
      case LayerKind::convolutional: {
        tape.pre[i] = conv2d_linear(prev, l, model.conv[i].kernel,
                                    model.conv[i].bias);
        out = apply_activation(tape.pre[i], l.activation);
        break;
      }
      case LayerKind::shortcut:
        out = shortcut_add(prev, tape.post[l.from_resolved]);
        break;
      case LayerKind::route: {
        std::vector<const Tensor*> ins;
        for (int idx : l.layers_resolved) {
          ins.push_back(&tape.post[idx]);
        }
        out = route_concat(ins);
        break;
      }
      case LayerKind::upsample:
        out = upsample_nearest(prev, l.factor);
        break;
      case LayerKind::yolo:
        out = prev;
        break;
      case LayerKind::net:
        throw InvalidInputError("unexpected [net] layer in graph");
    }
    if (l.kind == LayerKind::yolo) {
      tape.heads.push_back(out);
    }
    tape.post.push_back(std::move(out));
  }
  return tape;
}

// Accumulates parameter gradients for one sample into kernel/bias grads.
void backward_train(const Model& model, const Tensor& input, const Tape& tape,
                    const std::vector<Tensor>& head_grads,
                    std::vector<std::vector<double>>& dkernel,
                    std::vector<std::vector<double>>& dbias) {
  const NetworkConfig& cfg = model.config;
  std::vector<Tensor> dout(cfg.layers.size());
  int head_idx = 0;
  for (std::size_t i = 0; i < cfg.layers.size(); ++i) {
    if (cfg.layers[i].kind == LayerKind::yolo) {
      dout[i] = head_grads[head_idx++];
    }
  }

  const auto accumulate = [](Tensor& dst, const Tensor& src) {
    if (dst.data.empty()) {
      dst = src;
      return;
    }
    for (std::size_t i = 0; i < dst.data.size(); ++i) {
      dst.data[i] += src.data[i];
    }
  };

  for (std::size_t ii = cfg.layers.size(); ii-- > 0;) {
    const LayerSpec& l = cfg.layers[ii];
    if (dout[ii].data.empty()) {
      continue;  // no gradient reaches this layer
    }
    const Tensor& prev_out = ii == 0 ? input : tape.post[ii - 1];
    switch (l.kind) {
      case LayerKind::convolutional: {
        Tensor dpre = l.activation == Activation::leaky
                          ? leaky_backward(tape.pre[ii], dout[ii])
                          : dout[ii];
        ConvGrads g = conv2d_backward(prev_out, l, model.conv[ii].kernel, dpre);
        for (std::size_t j = 0; j < g.dkernel.size(); ++j) {
          dkernel[ii][j] += g.dkernel[j];
        }
        for (std::size_t j = 0; j < g.dbias.size(); ++j) {
          dbias[ii][j] += g.dbias[j];
        }
        if (ii > 0) {
          accumulate(dout[ii - 1], g.dinput);
        }
        break;
      }
      case LayerKind::shortcut:
        if (ii > 0) {
          accumulate(dout[ii - 1], dout[ii]);
        }
        accumulate(dout[l.from_resolved], dout[ii]);
        break;
      case LayerKind::route: {
        std::size_t offset = 0;
        for (int idx : l.layers_resolved) {
          const Tensor& src_shape = tape.post[idx];
          Tensor slice(src_shape.c, src_shape.h, src_shape.w);
          std::copy(dout[ii].data.begin() + offset,
                    dout[ii].data.begin() + offset + slice.data.size(),
                    slice.data.begin());
          offset += slice.data.size();
          accumulate(dout[idx], slice);
        }
        break;
      }
      case LayerKind::upsample:
        if (ii > 0) {
          accumulate(dout[ii - 1], upsample_backward(dout[ii], l.factor));
        }
        break;
      case LayerKind::yolo:
        if (ii > 0) {
          accumulate(dout[ii - 1], dout[ii]);
        }
        break;
      case LayerKind::net:
        break;
    }
  }
}

}  // namespace

TrainResult train_toy(const DatasetIndex& index, const NetworkConfig& config,
                      const TrainHyperparams& hp, const LossWeights& weights,
                      std::uint64_t seed) {
  validate_trainable(config);
  if (index.records.empty()) {
    throw InvalidInputError("training index is empty");
  }
  if (hp.epochs < 1 || hp.batch_size < 1) {
    throw InvalidInputError("epochs and batch size must be positive");
  }

  const std::vector<GridSpec> grids = grids_from_config(config);
  if (grids.empty()) {
    throw InvalidInputError("config has no yolo head");
  }

  // preload images and precompute assignments; targets do not depend on
  // the weights
  std::vector<Tensor> inputs;
  std::vector<TargetAssignment> assignments;
  inputs.reserve(index.records.size());
  for (const ImageRecord& rec : index.records) {
    Tensor img = read_pgm_file(index.root / rec.image_path);
    if (img.h != config.height || img.w != config.width) {
      throw InvalidInputError(rec.image_path + ": image " +
                              std::to_string(img.w) + "x" +
                              std::to_string(img.h) +
                              " does not match network input");
    }
    if (config.channels == 3 && img.c == 1) {
      Tensor rgb(3, img.h, img.w);
      for (int ch = 0; ch < 3; ++ch) {
        std::copy(img.data.begin(), img.data.end(),
                  rgb.data.begin() + static_cast<std::size_t>(ch) * img.h * img.w);
      }
      img = std::move(rgb);
    }
    inputs.push_back(std::move(img));
    assignments.push_back(assign_targets(rec.annotations, grids, config.width,
                                         config.height, hp.ignore_iou));
  }

  std::int64_t dropped_total = 0;
  for (const TargetAssignment& a : assignments) {
    dropped_total += static_cast<std::int64_t>(a.dropped.size());
  }

  Rng rng(seed);
  Model model = init_model(config, rng.uniform_int(0, 1 << 30));

  std::vector<std::vector<double>*> params;
  std::vector<int> conv_layers;
  for (std::size_t i = 0; i < config.layers.size(); ++i) {
    if (config.layers[i].kind == LayerKind::convolutional) {
      conv_layers.push_back(static_cast<int>(i));
      params.push_back(&model.conv[i].kernel);
      params.push_back(&model.conv[i].bias);
    }
  }
  OptimizerState opt;

  std::vector<int> order(index.records.size());
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  for (int epoch = 1; epoch <= hp.epochs; ++epoch) {
    rng.shuffle(order);
    LossBreakdown epoch_sum;
    epoch_sum.weights = weights;

    for (std::size_t start = 0; start < order.size(); start += hp.batch_size) {
      const std::size_t stop = std::min(order.size(),
                                        start + static_cast<std::size_t>(hp.batch_size));
      std::vector<std::vector<double>> dkernel(config.layers.size());
      std::vector<std::vector<double>> dbias(config.layers.size());
      for (int li : conv_layers) {
        dkernel[li].assign(model.conv[li].kernel.size(), 0.0);
        dbias[li].assign(model.conv[li].bias.size(), 0.0);
      }

      for (std::size_t s = start; s < stop; ++s) {
        const int sample = order[s];
        const Tape tape = forward_train(model, inputs[sample]);
        LossBreakdown lb;
        try {
          lb = yolo_loss(tape.heads, assignments[sample], grids, config.width,
                         config.height, weights);
        } catch (const NumericError& e) {
          throw NumericError("epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(start / hp.batch_size) + ": " +
                             e.what());
        }
        epoch_sum.giou_term += lb.giou_term;
        epoch_sum.obj_term += lb.obj_term;
        epoch_sum.noobj_term += lb.noobj_term;
        epoch_sum.cls_term += lb.cls_term;
        epoch_sum.total += lb.total;

        const std::vector<Tensor> head_grads = yolo_loss_gradient(
            tape.heads, assignments[sample], grids, config.width,
            config.height, weights);
        backward_train(model, inputs[sample], tape, head_grads, dkernel, dbias);
      }

      const double inv_batch = 1.0 / static_cast<double>(stop - start);
      std::vector<std::vector<double>> grads;
      for (int li : conv_layers) {
        for (double& v : dkernel[li]) v *= inv_batch;
        for (double& v : dbias[li]) v *= inv_batch;
        grads.push_back(std::move(dkernel[li]));
        grads.push_back(std::move(dbias[li]));
      }
      adam_step(params, grads, opt, hp.learning_rate, hp.beta1, hp.beta2, hp.eps);
    }

    const double inv_n = 1.0 / static_cast<double>(order.size());
    epoch_sum.giou_term *= inv_n;
    epoch_sum.obj_term *= inv_n;
    epoch_sum.noobj_term *= inv_n;
    epoch_sum.cls_term *= inv_n;
    epoch_sum.total *= inv_n;
    if (!std::isfinite(epoch_sum.total)) {
      throw NumericError("non-finite epoch loss at epoch " + std::to_string(epoch));
    }
    result.history.push_back(epoch_sum);
  }

  model.seen = static_cast<std::uint64_t>(index.records.size()) *
               static_cast<std::uint64_t>(hp.epochs);
  model.refold();
  result.model = std::move(model);
  result.dropped_targets = dropped_total;
  return result;
}

std::string history_to_csv(const std::vector<LossBreakdown>& history) {
  std::string out = "epoch,giou_term,obj_term,noobj_term,cls_term,total\n";
  for (std::size_t i = 0; i < history.size(); ++i) {
    const LossBreakdown& lb = history[i];
    out += std::to_string(i + 1);
    out += ',';
    out += format_double_exact(lb.giou_term);
    out += ',';
    out += format_double_exact(lb.obj_term);
    out += ',';
    out += format_double_exact(lb.noobj_term);
    out += ',';
    out += format_double_exact(lb.cls_term);
    out += ',';
    out += format_double_exact(lb.total);
    out += '\n';
  }
  return out;
}

}  // namespace kneedet
