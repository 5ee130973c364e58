#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "x2face/tensor.hpp"

namespace x2face {

// Decodes 8-bit PNG (gray, RGB, or with alpha) to a (1, channels, h, w) tensor
// in [0, 1] via value / 255. `channels` is 3 (alpha dropped) or 4 (alpha
// synthesized as opaque when missing).
Tensor<float> decode_png(std::span<const std::uint8_t> bytes, int channels = 3);
Tensor<float> read_png(const std::filesystem::path& path, int channels = 3);

// Encodes the first sample of a 3- or 4-channel tensor; values are clamped to
// [0, 1] and rounded to the nearest 8-bit level.
std::vector<std::uint8_t> encode_png(const Tensor<float>& image);
void write_png(const std::filesystem::path& path, const Tensor<float>& image);

}  // namespace x2face
