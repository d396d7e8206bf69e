#pragma once

#include <filesystem>

#include "pneumo/tensor.hpp"

namespace pneumo {

// 8-bit grayscale images as binary PGM (P5). Pixels map to [0,1] by v/255.
Tensor read_pgm(const std::filesystem::path& file);
void write_pgm(const std::filesystem::path& file, const Tensor& image);

}  // namespace pneumo
