#include "trajguard/whitebox.hpp"

#include <chrono>
#include <cmath>

namespace trajguard {

OuterUpdateSign parse_outer_update_sign(const std::string& s) {
  if (s == "additive") return OuterUpdateSign::additive;
  if (s == "ascent") return OuterUpdateSign::ascent;
  throw ParameterError("unknown outer update sign '" + s + "' (expected additive|ascent)");
}

std::string to_string(OuterUpdateSign s) {
  return s == OuterUpdateSign::additive ? "additive" : "ascent";
}

void WhiteBoxConfig::validate() const {
  if (t1 < 1) throw ParameterError("T1 must be >= 1");
  if (t2 < 1 || t2 > t1) throw ParameterError("need 1 <= T2 <= T1");
  if (inject_steps < 1 || inject_steps > t2)
    throw ParameterError("injection step t must satisfy 1 <= t <= T2");
  if (iterations < 1) throw ParameterError("K must be >= 1");
  if (!(alpha >= 0.0)) throw ParameterError("alpha must be >= 0");
  if (lambda1 < 0 || mu1 < 0 || lambda2 < 0 || mu2 < 0)
    throw ParameterError("projection weights must be >= 0");
  if (noise_layer.kernel < 1 || noise_layer.kernel % 2 == 0)
    throw ParameterError("noise layer kernel must be odd and >= 1");
}

Tensor project_orthogonal(const Tensor& a, const Tensor& b) {
  const double bb = dot(b, b);
  if (bb == 0.0) return a;
  Tensor out = a;
  out.axpy(-dot(a, b) / bb, b);
  return out;
}

CombinedGradient gradient_projection(const Tensor& g1, const Tensor& g2,
                                     const ProjectionWeights& w, bool enabled) {
  require_same_shape(g1, g2, "gradient_projection");
  CombinedGradient out;
  out.inner_product = dot(g1, g2);
  const bool degenerate = dot(g1, g1) == 0.0 || dot(g2, g2) == 0.0;
  if (enabled && !degenerate && out.inner_product <= 0.0) {
    out.direction = -w.lambda1 * project_orthogonal(g1, g2);
    out.direction.axpy(w.mu1, project_orthogonal(g2, g1));
    out.branch = ProjectionBranch::conflicting;
    return out;
  }
  out.direction = -w.lambda2 * g1;
  out.direction.axpy(w.mu2, g2);
  out.branch = degenerate && enabled ? ProjectionBranch::degenerate : ProjectionBranch::aligned;
  return out;
}

Tensor adversarial_gradient(const DifferentiableMap& manipulator, const Tensor& clean_out,
                            const Tensor& x, double* loss) {
  const Tensor out = manipulator.forward(x);
  if (loss) *loss = adversarial_loss(clean_out, out);
  return manipulator.vjp(x, adversarial_loss_output_gradient(clean_out, out));
}

LatentImage inject_step(const LatentImage& x_t2, const Denoiser& denoiser,
                        const DifferentiableMap& manipulator, const Tensor& clean_out, int t2,
                        int t2_prev, double alpha, const NoiseSchedule& sched, bool active,
                        TraceRecord* record) {
  LatentImage next = ddim_step(x_t2, denoiser, t2, t2_prev, sched);
  double loss = 0.0;
  double gnorm = 0.0;
  if (active) {
    const Tensor g = adversarial_gradient(manipulator, clean_out, next.data, &loss);
    gnorm = norm(g);
    next.data.axpy(alpha, g);
  } else if (record) {
    loss = adversarial_loss(clean_out, manipulator.forward(next.data));
  }
  if (record) {
    record->kind = RecordKind::injection;
    record->timestep = t2;
    record->timestep_prev = t2_prev;
    record->active = active;
    record->adversarial_loss = loss;
    record->gradient_norm = gnorm;
  }
  return next;
}

GuidanceGradients guidance_gradients(const Tensor& x_clean, const Tensor& x_prime,
                                     const DifferentiableMap& manipulator,
                                     const Tensor& clean_out) {
  require_same_shape(x_clean, x_prime, "guidance_gradients");
  GuidanceGradients out;
  out.g1 = adversarial_gradient(manipulator, clean_out, x_prime, &out.adversarial_loss);
  out.g2 = Tensor(x_prime.shape());
  const double inv_n = 1.0 / static_cast<double>(x_prime.size());
  double l1 = 0.0;
  for (std::size_t i = 0; i < x_prime.size(); ++i) {
    const double d = x_prime[i] - x_clean[i];
    l1 += std::abs(d);
    out.g2[i] = d > 0.0 ? inv_n : (d < 0.0 ? -inv_n : 0.0);
  }
  out.fidelity_loss = l1 * inv_n;
  return out;
}

ProtectionResult protect_whitebox(const Tensor& x, const DifferentiableMap& manipulator,
                                  const Denoiser& denoiser, const WhiteBoxConfig& cfg,
                                  const NoiseSchedule& sched) {
  cfg.validate();
  const auto started = std::chrono::steady_clock::now();
  const TimestepPlan plan = make_timestep_plan(cfg.t1, cfg.t2);
  const Tensor clean_out = manipulator.forward(x);
  const ProjectionWeights weights{cfg.lambda1, cfg.mu1, cfg.lambda2, cfg.mu2};
  const double outer_sign = cfg.outer_sign == OuterUpdateSign::additive ? 1.0 : -1.0;

  ProtectionResult result;
  result.trace.reserve(static_cast<std::size_t>(cfg.iterations) * (cfg.t2 + 1));
  const LatentImage x_t2 = ddim_inversion({x, 0}, cfg.t1, denoiser, sched, plan);
  LatentImage x_tmp = x_t2;
  LatentImage x_adv;
  const int first_active = cfg.t2 - cfg.inject_steps;

  for (int k = 1; k <= cfg.iterations; ++k) {
    x_adv = x_tmp;
    for (int i = 0; i < plan.length(); ++i) {
      TraceRecord rec;
      rec.iteration = k;
      rec.step = i;
      x_adv = inject_step(x_adv, denoiser, manipulator, clean_out, plan.denoise_steps[i],
                          plan.denoise_targets[i], cfg.alpha, sched, i >= first_active, &rec);
      result.trace.push_back(rec);
      if (!std::isfinite(rec.adversarial_loss) || !all_finite(x_adv.data))
        throw NumericalError("non-finite adversarial loss at iteration " + std::to_string(k) +
                                 ", step " + std::to_string(i),
                             result.trace);
    }

    const LatentImage x_prime = noise_layer(x_adv, cfg.noise_layer.kernel, cfg.noise_layer.sigma);
    const GuidanceGradients gg = guidance_gradients(x, x_prime.data, manipulator, clean_out);
    const CombinedGradient G =
        gradient_projection(gg.g1, gg.g2, weights, cfg.gradient_projection);

    TraceRecord rec;
    rec.kind = RecordKind::projection;
    rec.iteration = k;
    rec.adversarial_loss = gg.adversarial_loss;
    rec.fidelity_loss = gg.fidelity_loss;
    rec.g1_norm = norm(gg.g1);
    rec.g2_norm = norm(gg.g2);
    rec.inner_product = G.inner_product;
    rec.branch = G.branch;
    result.trace.push_back(rec);
    if (!std::isfinite(gg.adversarial_loss) || !all_finite(G.direction))
      throw NumericalError("non-finite guidance at iteration " + std::to_string(k),
                           result.trace);

    x_tmp = x_t2;
    x_tmp.data.axpy(outer_sign, G.direction);
  }

  result.adversarial_image = x_adv;
  if (cfg.clamp_final)
    result.adversarial_image.data = clamp(std::move(result.adversarial_image.data), -1.0, 1.0);
  result.wall_time =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

}  // namespace trajguard
