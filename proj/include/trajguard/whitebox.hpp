#pragma once

#include "trajguard/diffusion.hpp"
#include "trajguard/model.hpp"
#include "trajguard/protection.hpp"

namespace trajguard {

// How the combined guidance G(g1, g2) is applied to the inversion latent.
//   additive: x_tmp = x_T2 + G   (G = -lambda g1 + mu g2)
//   ascent:   x_tmp = x_T2 - G   (climbs the disruption loss, descends the L1 loss)
enum class OuterUpdateSign { additive, ascent };

OuterUpdateSign parse_outer_update_sign(const std::string& s);
std::string to_string(OuterUpdateSign s);

struct WhiteBoxConfig {
  int t1 = 50;
  int t2 = 10;
  int iterations = 3;
  double alpha = 85.0;
  double lambda1 = 1.0;
  double mu1 = 1.0;
  double lambda2 = 1.0;
  double mu2 = 1.0;
  int inject_steps = 10;  // injection on the last `inject_steps` of the t2 denoise steps
  NoiseLayerConfig noise_layer;
  bool clamp_final = true;
  bool gradient_projection = true;
  OuterUpdateSign outer_sign = OuterUpdateSign::additive;

  void validate() const;
};

struct ProjectionWeights {
  double lambda1 = 1.0;
  double mu1 = 1.0;
  double lambda2 = 1.0;
  double mu2 = 1.0;
};

struct CombinedGradient {
  Tensor direction;
  ProjectionBranch branch = ProjectionBranch::none;
  double inner_product = 0.0;
};

// a - <a,b>/|b|^2 b
Tensor project_orthogonal(const Tensor& a, const Tensor& b);

// Gradient cross-projection. Uses the conflicting branch when <g1,g2> <= 0 and
// both gradients are nonzero; otherwise the plain weighted combination.
// With `enabled` false the plain combination is always used.
CombinedGradient gradient_projection(const Tensor& g1, const Tensor& g2,
                                     const ProjectionWeights& w, bool enabled = true);

// Gradient of adversarial_loss(clean_out, M(x)) w.r.t. x.
Tensor adversarial_gradient(const DifferentiableMap& manipulator, const Tensor& clean_out,
                            const Tensor& x, double* loss = nullptr);

// One denoise step followed, when active, by gradient-ascent injection on the
// adversarial loss. `clean_out` is M(x_clean).
LatentImage inject_step(const LatentImage& x_t2, const Denoiser& denoiser,
                        const DifferentiableMap& manipulator, const Tensor& clean_out, int t2,
                        int t2_prev, double alpha, const NoiseSchedule& sched, bool active,
                        TraceRecord* record = nullptr);

struct GuidanceGradients {
  Tensor g1;  // disruption: grad of MSE(M(x), M(x')) w.r.t. x'
  Tensor g2;  // fidelity: grad of mean |x - x'| w.r.t. x', sign(0) = 0
  double adversarial_loss = 0.0;
  double fidelity_loss = 0.0;
};

GuidanceGradients guidance_gradients(const Tensor& x_clean, const Tensor& x_prime,
                                     const DifferentiableMap& manipulator,
                                     const Tensor& clean_out);

ProtectionResult protect_whitebox(const Tensor& x, const DifferentiableMap& manipulator,
                                  const Denoiser& denoiser, const WhiteBoxConfig& cfg,
                                  const NoiseSchedule& sched);

}  // namespace trajguard
