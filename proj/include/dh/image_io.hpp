#pragma once

#include <string>

#include "dh/tensor.hpp"

namespace dh {

// 8-bit RGB PNG to [3,H,W] tensor in [0,1]; grayscale and alpha inputs are
// expanded/dropped respectively.
Tensor read_png_rgb(const std::string& path);

// Any PNG to a binary [1,H,W] mask (luma > 0.5).
Tensor read_png_mask(const std::string& path);

// Clamps to [0,1], quantizes to 8-bit RGB. Output bytes depend only on the
// tensor contents, so identical inputs give identical files.
void write_png_rgb(const std::string& path, const Tensor& img);

// Mask or single-channel map written as 8-bit grayscale.
void write_png_gray(const std::string& path, const Tensor& map);

}  // namespace dh
