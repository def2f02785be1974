#include "trajguard/blackbox.hpp"

#include <chrono>
#include <cmath>

namespace trajguard {

void NESConfig::validate() const {
  if (samples < 1) throw ParameterError("NES samples n must be >= 1");
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ParameterError("NES sigma must be > 0");
}

void BlackBoxConfig::validate() const {
  if (t1 < 1) throw ParameterError("T1 must be >= 1");
  if (t2 < 1 || t2 > t1) throw ParameterError("need 1 <= T2 <= T1");
  if (inject_steps < 1 || inject_steps > t2)
    throw ParameterError("injection step t must satisfy 1 <= t <= T2");
  if (iterations < 1) throw ParameterError("K must be >= 1");
  if (!(alpha >= 0.0)) throw ParameterError("alpha must be >= 0");
  if (noise_layer.kernel < 1 || noise_layer.kernel % 2 == 0)
    throw ParameterError("noise layer kernel must be odd and >= 1");
  nes.validate();
}

namespace {

double checked(double v, int probe, char sign) {
  if (!std::isfinite(v))
    throw NumericalError("non-finite loss at NES probe " + std::to_string(probe) + sign, {});
  return v;
}

}  // namespace

Tensor nes_gradient(const ScalarQuery& loss_at, const Tensor& x, const NESConfig& cfg, Rng& rng) {
  cfg.validate();
  Tensor g(x.shape());
  Tensor probe(x.shape());
  if (cfg.antithetic) {
    for (int i = 0; i < cfg.samples; ++i) {
      const Tensor u = rng.normal_tensor(x.shape());
      probe = x;
      probe.axpy(cfg.sigma, u);
      const double up = checked(loss_at(probe), i, '+');
      probe = x;
      probe.axpy(-cfg.sigma, u);
      const double down = checked(loss_at(probe), i, '-');
      g.axpy(up - down, u);
    }
    g *= 1.0 / (cfg.samples * cfg.sigma);
  } else {
    const int probes = 2 * cfg.samples;
    for (int i = 0; i < probes; ++i) {
      const Tensor u = rng.normal_tensor(x.shape());
      probe = x;
      probe.axpy(cfg.sigma, u);
      g.axpy(checked(loss_at(probe), i, '+'), u);
    }
    // same 1/(n sigma) normalization as the paired form, so both target the same mean
    g *= 1.0 / (cfg.samples * cfg.sigma);
  }
  return g;
}

std::uint64_t expected_blackbox_queries(const BlackBoxConfig& cfg) {
  const auto k = static_cast<std::uint64_t>(cfg.iterations);
  return k * static_cast<std::uint64_t>(cfg.inject_steps) * 2u *
             static_cast<std::uint64_t>(cfg.nes.samples) +
         k + 1u;
}

ProtectionResult protect_blackbox(const Tensor& x, const QueryOnlyModel& manipulator,
                                  const Denoiser& denoiser, const BlackBoxConfig& cfg,
                                  const NoiseSchedule& sched) {
  cfg.validate();
  const auto started = std::chrono::steady_clock::now();
  const std::uint64_t queries_before = manipulator.query_count();
  auto issued = [&] { return manipulator.query_count() - queries_before; };

  const TimestepPlan plan = make_timestep_plan(cfg.t1, cfg.t2);
  const Tensor clean_out = manipulator.forward(x);
  const ScalarQuery loss_at = [&](const Tensor& q) {
    return adversarial_loss(clean_out, manipulator.forward(q));
  };

  ProtectionResult result;
  result.trace.reserve(static_cast<std::size_t>(cfg.iterations) * (cfg.t2 + 1));
  const LatentImage x_t2 = ddim_inversion({x, 0}, cfg.t1, denoiser, sched, plan);
  LatentImage x_adv;
  const int first_active = cfg.t2 - cfg.inject_steps;

  for (int k = 1; k <= cfg.iterations; ++k) {
    x_adv = x_t2;
    for (int i = 0; i < plan.length(); ++i) {
      TraceRecord rec;
      rec.iteration = k;
      rec.step = i;
      rec.timestep = plan.denoise_steps[i];
      rec.timestep_prev = plan.denoise_targets[i];
      rec.active = i >= first_active;
      x_adv = ddim_step(x_adv, denoiser, rec.timestep, rec.timestep_prev, sched);
      if (rec.active) {
        Rng rng(derive_seed(cfg.nes.seed, static_cast<std::uint64_t>(k),
                            static_cast<std::uint64_t>(i)));
        try {
          const Tensor g = nes_gradient(loss_at, x_adv.data, cfg.nes, rng);
          rec.gradient_norm = norm(g);
          x_adv.data.axpy(cfg.alpha, g);
        } catch (const NumericalError& e) {
          throw NumericalError(std::string(e.what()) + " (iteration " + std::to_string(k) +
                                   ", step " + std::to_string(i) + ")",
                               result.trace);
        }
      }
      rec.queries = issued();
      result.trace.push_back(rec);
      if (!all_finite(x_adv.data))
        throw NumericalError("non-finite latent at iteration " + std::to_string(k) + ", step " +
                                 std::to_string(i),
                             result.trace);
    }

    // Disruption that survives the smoothing layer, one query per iteration.
    const LatentImage x_tmp = noise_layer(x_adv, cfg.noise_layer.kernel, cfg.noise_layer.sigma);
    TraceRecord rec;
    rec.kind = RecordKind::outer;
    rec.iteration = k;
    rec.adversarial_loss = loss_at(x_tmp.data);
    rec.queries = issued();
    result.trace.push_back(rec);
  }

  result.adversarial_image = x_adv;
  if (cfg.clamp_final)
    result.adversarial_image.data = clamp(std::move(result.adversarial_image.data), -1.0, 1.0);
  result.queries = issued();
  result.wall_time =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

}  // namespace trajguard
