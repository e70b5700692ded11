#pragma once

#include <string>

#include "ucsd/tensor.hpp"

// Binary PGM (P5) and PPM (P6) with maxval 255. Values are stored as
// round(255·v) and read back as k/255, so maps already on that grid round
// trip exactly.
namespace ucsd {

// H×W map in [0,1].
void write_pgm(const std::string& path, const TensorD& map);
TensorD read_pgm(const std::string& path);

// 3×H×W image in [0,1].
void write_ppm(const std::string& path, const TensorD& rgb);
TensorD read_ppm(const std::string& path);

// Nearest 8-bit level k/255.
double quantize8(double v);

}  // namespace ucsd
