#pragma once

#include <cstdint>
#include <functional>

#include "trajguard/diffusion.hpp"
#include "trajguard/model.hpp"
#include "trajguard/protection.hpp"
#include "trajguard/rng.hpp"

namespace trajguard {

struct NESConfig {
  int samples = 32;  // n
  double sigma = 0.01;
  // Paired +-sigma u probes. When false, 2n unpaired probes L(x + sigma u) are used
  // (plain NES without a baseline), which keeps the 2n query cost.
  bool antithetic = true;
  std::uint64_t seed = 0;

  void validate() const;
};

using ScalarQuery = std::function<double(const Tensor&)>;

// Zeroth-order gradient estimate of loss_at around x from exactly 2n evaluations.
// Directions are drawn from rng. Throws NumericalError naming the probe on a
// non-finite loss.
Tensor nes_gradient(const ScalarQuery& loss_at, const Tensor& x, const NESConfig& cfg, Rng& rng);

struct BlackBoxConfig {
  int t1 = 50;
  int t2 = 10;
  int iterations = 3;
  double alpha = 20.0;
  int inject_steps = 10;
  NoiseLayerConfig noise_layer;
  bool clamp_final = true;
  NESConfig nes;

  void validate() const;
};

// Queries protect_blackbox issues: K * t * 2n NES probes, one trace query of the
// running adversarial image per outer iteration, and the cached clean output.
std::uint64_t expected_blackbox_queries(const BlackBoxConfig& cfg);

ProtectionResult protect_blackbox(const Tensor& x, const QueryOnlyModel& manipulator,
                                  const Denoiser& denoiser, const BlackBoxConfig& cfg,
                                  const NoiseSchedule& sched);

}  // namespace trajguard
