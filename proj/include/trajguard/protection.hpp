#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "trajguard/diffusion.hpp"

namespace trajguard {

// outer: end-of-iteration row of the black-box loop (no projection there).
enum class RecordKind { injection, projection, outer };

enum class ProjectionBranch { none, conflicting, aligned, degenerate };

std::string to_string(ProjectionBranch b);

// One row of a protection trace. Injection rows are written once per denoise step,
// projection rows once per outer iteration.
struct TraceRecord {
  RecordKind kind = RecordKind::injection;
  int iteration = 0;  // 1-based outer iteration k
  int step = 0;       // 0-based denoise step index (injection rows)
  int timestep = 0;
  int timestep_prev = 0;
  bool active = false;
  double adversarial_loss = 0.0;
  double fidelity_loss = 0.0;  // L1(x, x') on projection rows
  double gradient_norm = 0.0;
  double g1_norm = 0.0;
  double g2_norm = 0.0;
  double inner_product = 0.0;
  ProjectionBranch branch = ProjectionBranch::none;
  std::uint64_t queries = 0;  // cumulative manipulator queries (black-box)
};

using Trace = std::vector<TraceRecord>;

void write_trace_jsonl(std::ostream& out, const Trace& trace);

struct ProtectionResult {
  LatentImage adversarial_image;
  Trace trace;
  double wall_time = 0.0;       // seconds
  std::uint64_t queries = 0;    // total manipulator queries (black-box only)
};

class NumericalError : public std::runtime_error {
 public:
  NumericalError(const std::string& what, Trace trace)
      : std::runtime_error(what), trace_(std::make_shared<Trace>(std::move(trace))) {}
  const Trace& trace() const { return *trace_; }

 private:
  std::shared_ptr<const Trace> trace_;
};

struct NoiseLayerConfig {
  int kernel = 3;
  double sigma = 1.0;
};

// Gaussian smoothing used as the differentiable post-processing stand-in.
LatentImage noise_layer(const LatentImage& x, int kernel, double sigma);

// Mean squared error between two manipulator outputs.
double adversarial_loss(const Tensor& clean_out, const Tensor& candidate_out);

// d/d(candidate_out) of adversarial_loss.
Tensor adversarial_loss_output_gradient(const Tensor& clean_out, const Tensor& candidate_out);

}  // namespace trajguard
