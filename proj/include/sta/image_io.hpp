#pragma once

#include <string>
#include <vector>

#include "sta/tensor.hpp"

namespace sta {

// Images and textures are 3xHxW tensors with values in [0,1].
// PNG files are 8-bit RGB; values quantize as round(v*255).
void write_png(const std::string& path, const Tensor& image);
Tensor read_png(const std::string& path);

// Lossless float64 sidecar for textures (little-endian raw payload).
void write_f64(const std::string& path, const Tensor& t);
Tensor read_f64(const std::string& path);

void write_text_file(const std::string& path, const std::string& contents);
std::string read_text_file(const std::string& path);

}  // namespace sta
