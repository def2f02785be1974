#include "trajguard/distortions.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "trajguard/filters.hpp"
#include "trajguard/image_io.hpp"
#include "trajguard/parallel.hpp"

namespace trajguard {

DistortionKind parse_distortion_kind(const std::string& s) {
  if (s == "jpeg") return DistortionKind::jpeg;
  if (s == "gaussian_blur") return DistortionKind::gaussian_blur;
  if (s == "average_blur") return DistortionKind::average_blur;
  if (s == "downscale") return DistortionKind::downscale;
  throw ParameterError("unknown distortion '" + s +
                       "' (expected jpeg|gaussian_blur|average_blur|downscale)");
}

std::string to_string(DistortionKind k) {
  switch (k) {
    case DistortionKind::jpeg: return "jpeg";
    case DistortionKind::gaussian_blur: return "gaussian_blur";
    case DistortionKind::average_blur: return "average_blur";
    case DistortionKind::downscale: return "downscale";
  }
  return "jpeg";
}

const std::vector<DistortionKind>& all_distortion_kinds() {
  static const std::vector<DistortionKind> kinds{DistortionKind::jpeg,
                                                 DistortionKind::gaussian_blur,
                                                 DistortionKind::average_blur,
                                                 DistortionKind::downscale};
  return kinds;
}

namespace {

bool is_integer(double v) { return std::isfinite(v) && v == std::floor(v); }

}  // namespace

void DistortionSpec::validate() const {
  const std::string name = to_string(kind);
  switch (kind) {
    case DistortionKind::jpeg:
      if (!is_integer(parameter) || parameter < 10 || parameter > 100)
        throw ParameterError("jpeg quality must be an integer in [10,100]");
      break;
    case DistortionKind::gaussian_blur:
    case DistortionKind::average_blur:
      if (!is_integer(parameter) || parameter < 1 || parameter > 19 ||
          static_cast<int>(parameter) % 2 == 0)
        throw ParameterError(name + " kernel must be odd in [1,19]");
      break;
    case DistortionKind::downscale:
      if (!(parameter > 0.0 && parameter <= 1.0))
        throw ParameterError("downscale factor must be in (0,1]");
      break;
  }
}

double gaussian_sigma_for_kernel(int kernel) { return 0.3 * ((kernel - 1) * 0.5 - 1.0) + 0.8; }

std::vector<double> gaussian_blur_kernel(int kernel) {
  // fixed taps OpenCV substitutes for small kernels when sigma is derived
  switch (kernel) {
    case 1: return {1.0};
    case 3: return {0.25, 0.5, 0.25};
    case 5: return {0.0625, 0.25, 0.375, 0.25, 0.0625};
    case 7: return {0.03125, 0.109375, 0.21875, 0.28125, 0.21875, 0.109375, 0.03125};
    case 9:
      return {0.015625,   0.05078125, 0.1171875,  0.19921875, 0.234375,
              0.19921875, 0.1171875,  0.05078125, 0.015625};
    default: return gaussian_kernel(kernel, gaussian_sigma_for_kernel(kernel));
  }
}

Tensor apply_distortion(const Tensor& x, const DistortionSpec& spec) {
  spec.validate();
  switch (spec.kind) {
    case DistortionKind::jpeg:
      return jpeg_round_trip(x, static_cast<int>(spec.parameter));
    case DistortionKind::gaussian_blur: {
      const int k = static_cast<int>(spec.parameter);
      if (k == 1) return x;
      return separable_filter(x, gaussian_blur_kernel(k));
    }
    case DistortionKind::average_blur: {
      const int k = static_cast<int>(spec.parameter);
      if (k == 1) return x;
      return separable_filter(x, box_kernel(k));
    }
    case DistortionKind::downscale: {
      const Shape s = x.shape();
      const int h = std::max(1, static_cast<int>(std::lround(s.height * spec.parameter)));
      const int w = std::max(1, static_cast<int>(std::lround(s.width * spec.parameter)));
      return resize_bilinear(resize_bilinear(x, h, w), s.height, s.width);
    }
  }
  return x;
}

LatentImage apply(const LatentImage& x, const DistortionSpec& spec) {
  return {apply_distortion(x.data, spec), x.timestep};
}

std::vector<double> default_grid(DistortionKind kind) {
  std::vector<double> g;
  switch (kind) {
    case DistortionKind::jpeg:
      for (int q = 10; q <= 100; q += 10) g.push_back(q);
      break;
    case DistortionKind::gaussian_blur:
    case DistortionKind::average_blur:
      for (int k = 1; k <= 19; k += 2) g.push_back(k);
      break;
    case DistortionKind::downscale:
      for (int i = 1; i <= 10; ++i) g.push_back(i / 10.0);
      break;
  }
  return g;
}

double normalized_parameter(DistortionKind kind, double p) {
  switch (kind) {
    case DistortionKind::jpeg: return (100.0 - p) / 90.0;
    case DistortionKind::gaussian_blur:
    case DistortionKind::average_blur: return (p - 1.0) / 18.0;
    case DistortionKind::downscale: return (1.0 - p) / 0.9;
  }
  return 0.0;
}

RobustnessCurve sweep(const std::vector<Tensor>& adv_batch,
                      const std::vector<Tensor>& clean_batch, const Model& manipulator,
                      DistortionKind kind, const std::vector<double>& grid,
                      const SweepMetric& metric, const std::string& metric_name, int workers) {
  if (adv_batch.size() != clean_batch.size())
    throw ParameterError("sweep: adversarial and clean batches differ in size");
  if (grid.empty()) throw ParameterError("sweep: empty parameter grid");
  for (double p : grid) DistortionSpec{kind, p}.validate();

  std::vector<Tensor> clean_out(clean_batch.size());
  parallel_for(clean_batch.size(), workers,
               [&](std::size_t i) { clean_out[i] = manipulator.forward(clean_batch[i]); });

  RobustnessCurve curve{kind, metric_name, {}};
  for (double p : grid) {
    const DistortionSpec spec{kind, p};
    std::vector<Tensor> outs(adv_batch.size()), clean_distorted(adv_batch.size());
    parallel_for(adv_batch.size(), workers, [&](std::size_t i) {
      outs[i] = manipulator.forward(apply_distortion(adv_batch[i], spec));
      clean_distorted[i] = manipulator.forward(apply_distortion(clean_batch[i], spec));
    });
    curve.points.push_back({p, normalized_parameter(kind, p),
                            metric(SweepBatch{clean_batch, clean_out, outs, clean_distorted})});
  }
  return curve;
}

double auc(std::vector<std::pair<double, double>> points) {
  if (points.size() < 2) throw ParameterError("AUC needs at least 2 points");
  std::stable_sort(points.begin(), points.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  double area = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i)
    area += 0.5 * (points[i].first - points[i - 1].first) *
            (points[i].second + points[i - 1].second);
  return area;
}

double auc(const RobustnessCurve& curve) {
  if (curve.points.empty()) throw ParameterError("AUC of an empty curve");
  std::vector<std::pair<double, double>> pts;
  pts.reserve(curve.points.size());
  double lo = curve.points.front().normalized, hi = lo;
  for (const auto& p : curve.points) {
    pts.emplace_back(p.normalized, p.value);
    lo = std::min(lo, p.normalized);
    hi = std::max(hi, p.normalized);
  }
  if (hi == lo) {
    double mean = 0.0;
    for (const auto& p : curve.points) mean += p.value;
    return mean / static_cast<double>(curve.points.size());
  }
  return auc(std::move(pts)) / (hi - lo);
}

void write_curves_csv(std::ostream& out, const std::vector<RobustnessCurve>& curves) {
  out << "kind,parameter,metric,value\n";
  char buf[64];
  for (const auto& c : curves) {
    for (const auto& p : c.points) {
      std::snprintf(buf, sizeof buf, "%.10g,", p.parameter);
      out << to_string(c.kind) << ',' << buf << c.metric << ',';
      std::snprintf(buf, sizeof buf, "%.10g", p.value);
      out << buf << '\n';
    }
  }
}

}  // namespace trajguard
