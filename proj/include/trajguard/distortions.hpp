#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "trajguard/diffusion.hpp"
#include "trajguard/model.hpp"
#include "trajguard/tensor.hpp"

namespace trajguard {

// P1..P4
enum class DistortionKind { jpeg, gaussian_blur, average_blur, downscale };

DistortionKind parse_distortion_kind(const std::string& s);
std::string to_string(DistortionKind k);
const std::vector<DistortionKind>& all_distortion_kinds();

// parameter: JPEG quality factor, blur kernel size, or downscale factor.
struct DistortionSpec {
  DistortionKind kind = DistortionKind::jpeg;
  double parameter = 100.0;

  void validate() const;
};

// OpenCV's rule for the Gaussian sigma implied by a kernel size.
double gaussian_sigma_for_kernel(int kernel);
// Taps matching OpenCV GaussianBlur with sigma 0 (fixed tables up to size 9).
std::vector<double> gaussian_blur_kernel(int kernel);

Tensor apply_distortion(const Tensor& x, const DistortionSpec& spec);
LatentImage apply(const LatentImage& x, const DistortionSpec& spec);

// JPEG 10..100 step 10, kernels 1..19 odd, downscale 0.1..1.0 step 0.1.
std::vector<double> default_grid(DistortionKind kind);

// Maps a parameter onto [0, 1] with 0 = no distortion, 1 = strongest.
double normalized_parameter(DistortionKind kind, double parameter);

struct CurvePoint {
  double parameter = 0.0;
  double normalized = 0.0;
  double value = 0.0;
};

struct RobustnessCurve {
  DistortionKind kind = DistortionKind::jpeg;
  std::string metric;
  std::vector<CurvePoint> points;  // in grid order
};

// What a metric sees at one grid point.
struct SweepBatch {
  const std::vector<Tensor>& clean_inputs;
  const std::vector<Tensor>& clean_outputs;      // M(x)
  const std::vector<Tensor>& distorted_outputs;  // M(distort(x_adv))
  const std::vector<Tensor>& distorted_clean_outputs;  // M(distort(x))
};

using SweepMetric = std::function<double(const SweepBatch&)>;

RobustnessCurve sweep(const std::vector<Tensor>& adv_batch,
                      const std::vector<Tensor>& clean_batch, const Model& manipulator,
                      DistortionKind kind, const std::vector<double>& grid,
                      const SweepMetric& metric, const std::string& metric_name = "dsr",
                      int workers = 1);

// Trapezoidal area under (x, y) points, sorted by x first. Needs >= 2 points.
double auc(std::vector<std::pair<double, double>> points);
// Area over the normalized parameter axis, divided by the span the grid covers
// (1 for the default grids). A single-point curve gives its value.
double auc(const RobustnessCurve& curve);

void write_curves_csv(std::ostream& out, const std::vector<RobustnessCurve>& curves);

}  // namespace trajguard
