#pragma once

#include <cstddef>
#include <functional>

#include "ichseq/tensor.hpp"

namespace ichseq::imageops {

// All functions operate on (C, H, W) tensors.

Tensor flip_horizontal(const Tensor& chw);
Tensor flip_vertical(const Tensor& chw);

/// Bilinear sample at fractional (y, x) pixel-centre coordinates of one plane;
/// outside the frame reads as 0.
double sample_bilinear(const double* plane, std::size_t h, std::size_t w, double y, double x);

/// out(c, y, x) = in(c, src(y, x)) for a backward map src producing (y, x)
/// source coordinates in pixel units.
using BackwardMap = std::function<void(double y, double x, double& sy, double& sx)>;
Tensor remap(const Tensor& chw, std::size_t out_h, std::size_t out_w, const BackwardMap& src);

/// Bilinear resize with half-pixel centres. Same size returns a copy.
Tensor resize(const Tensor& chw, std::size_t out_h, std::size_t out_w);

Tensor crop(const Tensor& chw, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w);

}  // namespace ichseq::imageops
