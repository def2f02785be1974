#pragma once

#include <span>
#include <vector>

#include "trajguard/tensor.hpp"

namespace trajguard {

// Mirror index into [0, n) without repeating the edge sample (d c b | a b c d | c b a).
int reflect_index(int i, int n);

// Normalized 1-D Gaussian taps, size odd >= 1.
std::vector<double> gaussian_kernel(int size, double sigma);
std::vector<double> box_kernel(int size);

// Per-channel separable correlation with the same 1-D kernel on rows and columns,
// reflect padding. Output shape equals input shape.
Tensor separable_filter(const Tensor& x, std::span<const double> kernel);

// Bilinear resampling (half-pixel centers, edge clamped) to a new spatial size.
Tensor resize_bilinear(const Tensor& x, int height, int width);

}  // namespace trajguard
