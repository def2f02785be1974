#include "trajguard/toy_data.hpp"

#include <algorithm>
#include <cmath>

#include "trajguard/filters.hpp"
#include "trajguard/rng.hpp"

namespace trajguard {

Tensor make_toy_face(std::uint64_t seed, Shape shape) {
  Rng rng(derive_seed(seed, 0xface));
  const int H = shape.height;
  const int W = shape.width;
  auto jitter = [&](double lo, double hi) { return lo + (hi - lo) * rng.uniform(); };

  std::vector<double> bg(shape.channels), skin(shape.channels), hair(shape.channels);
  for (int c = 0; c < shape.channels; ++c) {
    bg[c] = jitter(-0.8, 0.2);
    skin[c] = jitter(0.1, 0.7);
    hair[c] = jitter(-0.9, -0.3);
  }
  const double cx = jitter(0.42, 0.58) * W;
  const double cy = jitter(0.45, 0.58) * H;
  const double rx = jitter(0.24, 0.32) * W;
  const double ry = jitter(0.30, 0.38) * H;
  const double eye_dx = jitter(0.30, 0.42) * rx;
  const double eye_y = cy - jitter(0.15, 0.30) * ry;
  const double eye_r = jitter(0.08, 0.12) * W;
  const double mouth_y = cy + jitter(0.35, 0.50) * ry;
  const double mouth_w = jitter(0.30, 0.50) * rx;
  const double tilt = jitter(-0.4, 0.4);

  Tensor img(shape);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const double u = (x - cx) / rx;
      const double v = (y - cy) / ry;
      const double face = 1.0 / (1.0 + std::exp(8.0 * (u * u + v * v - 1.0)));
      const double hair_band =
          face * (1.0 / (1.0 + std::exp(12.0 * (v + 0.55 + 0.1 * std::sin(3 * u))))) * 0.9;
      const double eye_l = std::exp(-(std::pow(x - cx + eye_dx, 2) + std::pow(y - eye_y, 2)) /
                                    (2 * eye_r * eye_r));
      const double eye_r2 = std::exp(-(std::pow(x - cx - eye_dx, 2) + std::pow(y - eye_y, 2)) /
                                     (2 * eye_r * eye_r));
      const double mouth =
          std::exp(-std::pow((y - mouth_y) / (0.06 * H), 2)) *
          std::exp(-std::pow((x - cx) / mouth_w, 4)) * face;
      for (int c = 0; c < shape.channels; ++c) {
        const double shade = bg[c] + tilt * (static_cast<double>(x) / W - 0.5);
        double val = (1 - face) * shade + face * skin[c] * (1.0 - 0.25 * (u * u));
        val = (1 - hair_band) * val + hair_band * hair[c];
        val -= 0.9 * (eye_l + eye_r2) * face;
        val -= 0.6 * mouth;
        img.at(c, y, x) = val;
      }
    }
  }
  Tensor texture = rng.normal_tensor(shape, 0.08);
  texture = separable_filter(texture, gaussian_kernel(3, 0.8));
  img += texture;
  return clamp(std::move(img), -1.0, 1.0);
}

std::vector<Tensor> make_toy_batch(std::uint64_t seed, int count, Shape shape) {
  std::vector<Tensor> batch;
  batch.reserve(count);
  for (int i = 0; i < count; ++i) batch.push_back(make_toy_face(derive_seed(seed, i), shape));
  return batch;
}

}  // namespace trajguard
