#pragma once

#include <cstdint>
#include <string>

#include "tryon/tensor.hpp"

namespace tryon {

// Images are (C,H,W) float tensors in [0,1], C = 3 (RGB) or 1 (gray).
using Image = Tensor<float>;

// 8-bit RGB PNG. Values are clamped to [0,1] and quantized with round-half-up,
// so identical tensors produce byte-identical files.
void write_png(const std::string& path, const Image& img);
Image read_png(const std::string& path);

// Affine-map an arbitrary-range plane to [0,255] for inspection dumps.
void write_png_normalized(const std::string& path, const Tensor<float>& plane);

// Flow fields: 2-channel float32 binary with a {H, W} header.
void write_flow(const std::string& path, const Tensor<float>& flow);
Tensor<float> read_flow(const std::string& path);

}  // namespace tryon
