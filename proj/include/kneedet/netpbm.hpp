#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "kneedet/tensor.hpp"

namespace kneedet {

// Reads P2 (plain) or P5 (binary) grayscale images, maxval up to 65535
// (two bytes per sample, most significant first). Values scale to [0,1].
Tensor read_pgm(std::span<const std::uint8_t> bytes);
Tensor read_pgm_file(const std::filesystem::path& path);

// Header-only parse; returns (width, height).
std::pair<int, int> read_pgm_size(const std::filesystem::path& path);

// P5, maxval 255; input must be a 1-channel tensor with values in [0,1].
std::vector<std::uint8_t> write_pgm(const Tensor& gray);

// P6 color image from packed rgb rows (3 bytes per pixel).
std::vector<std::uint8_t> write_ppm(int width, int height,
                                    const std::vector<std::uint8_t>& rgb);

}  // namespace kneedet
