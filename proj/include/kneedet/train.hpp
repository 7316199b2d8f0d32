#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "kneedet/dataset.hpp"
#include "kneedet/loss.hpp"
#include "kneedet/model.hpp"
#include "kneedet/tensor.hpp"

namespace kneedet {

// Kaiming fan-in initialization from a seeded generator; biases zero.
Model init_model(const NetworkConfig& config, std::uint64_t seed);

// Backward passes mirroring the engine ops, used by the toy trainer.
// Gradients flow with respect to pre-activation values for convolutions.
Tensor leaky_backward(const Tensor& pre_activation, const Tensor& dout);

struct ConvGrads {
  Tensor dinput;
  std::vector<double> dkernel;
  std::vector<double> dbias;
};
ConvGrads conv2d_backward(const Tensor& input, const LayerSpec& layer,
                          std::span<const double> kernel, const Tensor& dpre);

Tensor upsample_backward(const Tensor& dout, int factor);

struct TrainResult {
  Model model;
  std::vector<LossBreakdown> history;  // epoch means
  std::int64_t dropped_targets = 0;    // ground truths lost to slot collisions
};

// Deterministic toy-scale training loop: full backpropagation through the
// supported layer kinds (batchnorm-free graphs only), per-batch gradient
// averaging, Adam updates. Throws NumericError with the epoch and batch
// if the loss goes non-finite.
TrainResult train_toy(const DatasetIndex& index, const NetworkConfig& config,
                      const TrainHyperparams& hp, const LossWeights& weights,
                      std::uint64_t seed);

// CSV: epoch,giou_term,obj_term,noobj_term,cls_term,total
std::string history_to_csv(const std::vector<LossBreakdown>& history);

}  // namespace kneedet
