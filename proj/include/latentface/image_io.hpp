#pragma once

#include <string>

#include "latentface/tensor.hpp"

namespace lf::img {

// Clamp to [0,1], scale by 255, round half to even.
uint8_t quantize8(double v);

// [3,H,W] float in [0,1] (clamped) -> 8-bit RGB PNG
void write_png_rgb(const std::string& path, const Tensor& image);
void write_png_rgb(const std::string& path, const DTensor& image);

// [H,W] float -> 8-bit grayscale PNG
void write_png_gray(const std::string& path, const Tensor& image);

// Any 8-bit/16-bit gray/palette/RGB/RGBA PNG -> [3,H,W] float in [0,1]
Tensor read_png_rgb(const std::string& path);

// [H,W] float -> binary PGM (P5), mapping [lo,hi] affinely onto [0,255]
void write_pgm(const std::string& path, const Tensor& image, double lo = 0.0, double hi = 1.0);

// Binary PGM (P5, maxval 255) -> [H,W] float in [0,1]
Tensor read_pgm(const std::string& path);

// Bilinear resize of a [C,h,w] image to [C,H,W], half-pixel centers.
DTensor resize_bilinear(const DTensor& src, int64_t out_h, int64_t out_w);

}  // namespace lf::img
