#pragma once

#include <string>

#include "casnet/tensor.hpp"

namespace casnet {

/// 8-bit binary netpbm images. Writers clamp to [0,1] and quantize with
/// round-to-nearest-even (so 127.5 becomes 128); readers scale back by 1/255.
void write_ppm(const std::string& path, const Tensor& image);  // (1,H,W,3), P6
void write_pgm(const std::string& path, const Tensor& image);  // (1,H,W,1), P5

/// Reads a P5 or P6 file; channel count follows the magic number.
Tensor read_pnm(const std::string& path);

}  // namespace casnet
