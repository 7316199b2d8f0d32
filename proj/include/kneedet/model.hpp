#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "kneedet/errors.hpp"

namespace kneedet {

enum class LayerKind { net, convolutional, shortcut, route, upsample, yolo };
enum class Activation { linear, leaky };

std::string_view to_string(LayerKind kind);

struct Shape {
  int c = 0, h = 0, w = 0;
  bool operator==(const Shape&) const = default;
};

struct LayerSpec {
  LayerKind kind = LayerKind::convolutional;

  // convolutional
  int filters = 0;
  int size = 1;
  int stride = 1;
  int pad_flag = 0;  // cfg flag; effective padding = pad_flag ? size/2 : 0
  int batch_normalize = 0;
  Activation activation = Activation::linear;

  // shortcut / route, as written in the cfg (negative = relative)
  int from = 0;
  std::vector<int> layers;
  // resolved absolute indices
  int from_resolved = -1;
  std::vector<int> layers_resolved;

  // upsample
  int factor = 2;

  // yolo
  std::vector<int> mask;
  std::vector<std::pair<double, double>> anchors;
  int classes = 4;

  int padding() const { return pad_flag ? size / 2 : 0; }
  bool operator==(const LayerSpec&) const = default;
};

struct NetworkConfig {
  int width = 0, height = 0, channels = 0;
  std::vector<LayerSpec> layers;
  std::vector<Shape> output_shapes;  // parallel to layers

  Shape input_shape() const { return {channels, height, width}; }
  std::vector<int> yolo_layers() const;
  std::int64_t layer_param_count(int index) const;
  std::int64_t total_param_count() const;
  bool operator==(const NetworkConfig&) const = default;
};

// Parses the INI-like network definition dialect: sections in square
// brackets, key=value lines, '#' comments to end of line, [net] first.
// Errors carry 1-based line numbers.
NetworkConfig parse_cfg(std::string_view text);
NetworkConfig parse_cfg_file(const std::filesystem::path& path);

// Canonical text form; parse_cfg(serialize_cfg(c)) == c.
std::string serialize_cfg(const NetworkConfig& config);

struct ConvWeights {
  std::vector<double> kernel;  // [filters][in_channels][size][size]
  std::vector<double> bias;    // batchnorm beta when batch_normalize is set
  std::vector<double> bn_scale, bn_mean, bn_var;  // empty without batchnorm
};

struct Model {
  NetworkConfig config;
  std::vector<ConvWeights> conv;  // parallel to config.layers

  std::uint32_t version_major = 0;
  std::uint32_t version_minor = 2;
  std::uint32_t version_revision = 0;
  std::uint64_t seen = 0;

  // Inference parameters with batchnorm folded into the kernel and bias
  // (eps 1e-5), rebuilt by refold(). Plain copies when there is no
  // batchnorm.
  std::vector<std::vector<double>> fused_kernel;
  std::vector<std::vector<double>> fused_bias;
  void refold();
};

// Binary little-endian weight file: int32 major, minor, revision, then a
// seen counter (64-bit when major*10+minor >= 2, else 32-bit), then per
// convolutional layer in graph order: with batchnorm beta, scale, mean,
// variance then kernel; otherwise bias then kernel. All parameters are
// 32-bit IEEE-754. The payload must be consumed exactly.
Model load_weights(const NetworkConfig& config, std::span<const std::uint8_t> payload);
std::vector<std::uint8_t> save_weights(const Model& model);

Model load_weights_file(const NetworkConfig& config, const std::filesystem::path& path);
void save_weights_file(const Model& model, const std::filesystem::path& path);

}  // namespace kneedet
