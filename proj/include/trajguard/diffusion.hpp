#pragma once

#include <vector>

#include "trajguard/model.hpp"
#include "trajguard/tensor.hpp"

namespace trajguard {

// beta/alpha/alpha_bar tables. Index t runs 1..T for betas and alphas
// (slot 0 unused, held at beta=0, alpha=1); alpha_bar(0) = 1.
class NoiseSchedule {
 public:
  static NoiseSchedule from_betas(std::vector<double> betas);

  int total_steps() const { return static_cast<int>(betas_.size()) - 1; }
  double beta(int t) const { return betas_.at(t); }
  double alpha(int t) const { return alphas_.at(t); }
  double alpha_bar(int t) const { return alpha_bars_.at(t); }
  const std::vector<double>& alpha_bars() const { return alpha_bars_; }

 private:
  std::vector<double> betas_;
  std::vector<double> alphas_;
  std::vector<double> alpha_bars_;
};

NoiseSchedule build_linear_schedule(int total_steps = 1000, double beta_start = 1e-4,
                                    double beta_end = 0.02);

struct LatentImage {
  Tensor data;
  int timestep = 0;
};

// Timestep grid shared by inversion and denoising.
// denoise_steps[i] -> denoise_targets[i] is the i-th reverse update; the last target is 0.
struct TimestepPlan {
  std::vector<int> inversion_steps;  // increasing, 0 .. T1
  std::vector<int> denoise_steps;    // decreasing, starts at T1, length T2
  std::vector<int> denoise_targets;  // denoise_steps shifted by one, ends at 0

  int start() const { return denoise_steps.front(); }
  int length() const { return static_cast<int>(denoise_steps.size()); }
};

TimestepPlan make_timestep_plan(int t1, int t2);

LatentImage forward_diffuse(const LatentImage& x0, int t, const Tensor& eps,
                            const NoiseSchedule& sched);

Tensor predict_x0(const LatentImage& xt, const Tensor& eps_pred, int t,
                  const NoiseSchedule& sched);

// Deterministic (eta = 0) DDIM update from t to t_prev.
LatentImage ddim_step(const LatentImage& xt, const Tensor& eps_pred, int t, int t_prev,
                      const NoiseSchedule& sched);

// Convenience: evaluates the denoiser at (xt, t) and applies ddim_step.
LatentImage ddim_step(const LatentImage& xt, const Denoiser& denoiser, int t, int t_prev,
                      const NoiseSchedule& sched);

// Runs the DDIM update forward in time along plan.inversion_steps up to t1.
LatentImage ddim_inversion(const LatentImage& x0, int t1, const Denoiser& denoiser,
                           const NoiseSchedule& sched, const TimestepPlan& plan);

// Plain DDIM denoising along plan.denoise_steps, no guidance.
LatentImage ddim_denoise(const LatentImage& xt, const Denoiser& denoiser,
                         const NoiseSchedule& sched, const TimestepPlan& plan);

// Inversion followed by unguided denoising.
LatentImage reconstruct(const Tensor& image, const Denoiser& denoiser,
                        const NoiseSchedule& sched, const TimestepPlan& plan);

}  // namespace trajguard
