#include "trajguard/filters.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace trajguard {

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

std::vector<double> gaussian_kernel(int size, double sigma) {
  if (size < 1 || size % 2 == 0)
    throw ParameterError("kernel size must be odd and >= 1, got " + std::to_string(size));
  if (size > 1 && !(sigma > 0.0)) throw ParameterError("Gaussian sigma must be > 0");
  std::vector<double> k(size, 1.0);
  if (size == 1) return k;
  const int r = size / 2;
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    const double d = i - r;
    k[i] = std::exp(-0.5 * d * d / (sigma * sigma));
    sum += k[i];
  }
  for (double& v : k) v /= sum;
  return k;
}

std::vector<double> box_kernel(int size) {
  if (size < 1 || size % 2 == 0)
    throw ParameterError("kernel size must be odd and >= 1, got " + std::to_string(size));
  return std::vector<double>(size, 1.0 / size);
}

Tensor separable_filter(const Tensor& x, std::span<const double> kernel) {
  const int size = static_cast<int>(kernel.size());
  if (size < 1 || size % 2 == 0) throw ParameterError("filter kernel must have odd length");
  if (size == 1 && kernel[0] == 1.0) return x;
  const Shape s = x.shape();
  const int r = size / 2;
  Tensor rows(s);
  for (int c = 0; c < s.channels; ++c)
    for (int y = 0; y < s.height; ++y)
      for (int xx = 0; xx < s.width; ++xx) {
        double acc = 0.0;
        for (int k = 0; k < size; ++k)
          acc += kernel[k] * x.at(c, y, reflect_index(xx + k - r, s.width));
        rows.at(c, y, xx) = acc;
      }
  Tensor out(s);
  for (int c = 0; c < s.channels; ++c)
    for (int y = 0; y < s.height; ++y)
      for (int xx = 0; xx < s.width; ++xx) {
        double acc = 0.0;
        for (int k = 0; k < size; ++k)
          acc += kernel[k] * rows.at(c, reflect_index(y + k - r, s.height), xx);
        out.at(c, y, xx) = acc;
      }
  return out;
}

Tensor resize_bilinear(const Tensor& x, int height, int width) {
  if (height < 1 || width < 1) throw ParameterError("resize target must be at least 1x1");
  const Shape s = x.shape();
  if (height == s.height && width == s.width) return x;
  Tensor out({s.channels, height, width});
  const double sy = static_cast<double>(s.height) / height;
  const double sx = static_cast<double>(s.width) / width;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, s.height - 1.0);
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, s.height - 1);
    const double wy = fy - y0;
    for (int xx = 0; xx < width; ++xx) {
      const double fx = std::clamp((xx + 0.5) * sx - 0.5, 0.0, s.width - 1.0);
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, s.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < s.channels; ++c) {
        const double top = (1 - wx) * x.at(c, y0, x0) + wx * x.at(c, y0, x1);
        const double bot = (1 - wx) * x.at(c, y1, x0) + wx * x.at(c, y1, x1);
        out.at(c, y, xx) = (1 - wy) * top + wy * bot;
      }
    }
  }
  return out;
}

}  // namespace trajguard
