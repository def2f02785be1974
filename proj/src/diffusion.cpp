#include "trajguard/diffusion.hpp"

#include <cmath>
#include <string>

namespace trajguard {

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas) {
  if (betas.empty()) throw ParameterError("noise schedule needs at least one step");
  NoiseSchedule s;
  s.betas_.reserve(betas.size() + 1);
  s.betas_.push_back(0.0);
  s.alphas_.push_back(1.0);
  s.alpha_bars_.push_back(1.0);
  for (double b : betas) {
    if (!(b > 0.0 && b < 1.0))
      throw ParameterError("beta must lie in (0,1), got " + std::to_string(b));
    s.betas_.push_back(b);
    s.alphas_.push_back(1.0 - b);
    s.alpha_bars_.push_back(s.alpha_bars_.back() * (1.0 - b));
  }
  return s;
}

NoiseSchedule build_linear_schedule(int total_steps, double beta_start, double beta_end) {
  if (total_steps < 1) throw ParameterError("schedule length must be >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
    throw ParameterError("need 0 < beta_start <= beta_end < 1");
  std::vector<double> betas(total_steps);
  if (total_steps == 1) {
    betas[0] = beta_start;
  } else {
    const double span = beta_end - beta_start;
    for (int i = 0; i < total_steps; ++i)
      betas[i] = beta_start + span * static_cast<double>(i) / (total_steps - 1);
  }
  return NoiseSchedule::from_betas(std::move(betas));
}

TimestepPlan make_timestep_plan(int t1, int t2) {
  if (t2 < 1 || t2 > t1)
    throw ParameterError("timestep plan needs 1 <= T2 <= T1 (T1=" + std::to_string(t1) +
                         ", T2=" + std::to_string(t2) + ")");
  // Grid points floor(T1*k/T2), k = 0..T2. Stride T1/T2 >= 1 keeps them distinct.
  std::vector<int> grid(t2 + 1);
  for (int k = 0; k <= t2; ++k)
    grid[k] = static_cast<int>((static_cast<long long>(t1) * k) / t2);
  TimestepPlan plan;
  plan.inversion_steps = grid;
  for (int k = t2; k >= 1; --k) {
    plan.denoise_steps.push_back(grid[k]);
    plan.denoise_targets.push_back(grid[k - 1]);
  }
  return plan;
}

namespace {

void check_timestep(int t, const NoiseSchedule& sched) {
  if (t < 0 || t > sched.total_steps())
    throw ParameterError("timestep " + std::to_string(t) + " outside [0," +
                         std::to_string(sched.total_steps()) + "]");
}

// x_to = sqrt(ab_to) * x0_hat + sqrt(1 - ab_to) * eps, with x0_hat recovered at `from`.
Tensor transition(const Tensor& x, const Tensor& eps, int from, int to,
                  const NoiseSchedule& sched) {
  require_same_shape(x, eps, "ddim transition");
  const double ab_from = sched.alpha_bar(from);
  const double ab_to = sched.alpha_bar(to);
  const double s_from = std::sqrt(1.0 - ab_from);
  const double inv_from = 1.0 / std::sqrt(ab_from);
  const double a_to = std::sqrt(ab_to);
  const double s_to = std::sqrt(1.0 - ab_to);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = (x[i] - s_from * eps[i]) * inv_from;
    out[i] = a_to * x0 + s_to * eps[i];
  }
  return out;
}

}  // namespace

LatentImage forward_diffuse(const LatentImage& x0, int t, const Tensor& eps,
                            const NoiseSchedule& sched) {
  check_timestep(t, sched);
  require_same_shape(x0.data, eps, "forward_diffuse");
  const double a = std::sqrt(sched.alpha_bar(t));
  const double s = std::sqrt(1.0 - sched.alpha_bar(t));
  Tensor out(x0.data.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0.data[i] + s * eps[i];
  return {std::move(out), t};
}

Tensor predict_x0(const LatentImage& xt, const Tensor& eps_pred, int t,
                  const NoiseSchedule& sched) {
  if (t < 1) throw ParameterError("predict_x0 requires t >= 1");
  check_timestep(t, sched);
  require_same_shape(xt.data, eps_pred, "predict_x0");
  const double ab = sched.alpha_bar(t);
  const double s = std::sqrt(1.0 - ab);
  const double a = std::sqrt(ab);
  Tensor out(xt.data.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (xt.data[i] - s * eps_pred[i]) / a;
  return out;
}

LatentImage ddim_step(const LatentImage& xt, const Tensor& eps_pred, int t, int t_prev,
                      const NoiseSchedule& sched) {
  if (t_prev < 0 || t_prev >= t)
    throw ParameterError("ddim_step requires 0 <= t_prev < t (t=" + std::to_string(t) +
                         ", t_prev=" + std::to_string(t_prev) + ")");
  check_timestep(t, sched);
  return {transition(xt.data, eps_pred, t, t_prev, sched), t_prev};
}

LatentImage ddim_step(const LatentImage& xt, const Denoiser& denoiser, int t, int t_prev,
                      const NoiseSchedule& sched) {
  return ddim_step(xt, denoiser.predict_noise(xt.data, t), t, t_prev, sched);
}

LatentImage ddim_inversion(const LatentImage& x0, int t1, const Denoiser& denoiser,
                           const NoiseSchedule& sched, const TimestepPlan& plan) {
  check_timestep(t1, sched);
  LatentImage x = x0;
  x.timestep = 0;
  if (t1 == 0) return x;
  const auto& grid = plan.inversion_steps;
  bool reached = false;
  for (std::size_t i = 0; i + 1 < grid.size() && grid[i] < t1; ++i) {
    const int from = grid[i];
    const int to = grid[i + 1];
    const Tensor eps = denoiser.predict_noise(x.data, from);
    x.data = transition(x.data, eps, from, to, sched);
    x.timestep = to;
    reached = (to == t1);
  }
  if (!reached)
    throw ParameterError("inversion depth " + std::to_string(t1) +
                         " is not a point of the timestep plan");
  return x;
}

LatentImage ddim_denoise(const LatentImage& xt, const Denoiser& denoiser,
                         const NoiseSchedule& sched, const TimestepPlan& plan) {
  LatentImage x = xt;
  for (int i = 0; i < plan.length(); ++i)
    x = ddim_step(x, denoiser, plan.denoise_steps[i], plan.denoise_targets[i], sched);
  return x;
}

LatentImage reconstruct(const Tensor& image, const Denoiser& denoiser,
                        const NoiseSchedule& sched, const TimestepPlan& plan) {
  const LatentImage latent = ddim_inversion({image, 0}, plan.start(), denoiser, sched, plan);
  return ddim_denoise(latent, denoiser, sched, plan);
}

}  // namespace trajguard
