#include "trajguard/protection.hpp"

#include <ostream>

#include "json.hpp"
#include "trajguard/filters.hpp"

namespace trajguard {

std::string to_string(ProjectionBranch b) {
  switch (b) {
    case ProjectionBranch::none: return "none";
    case ProjectionBranch::conflicting: return "conflicting";
    case ProjectionBranch::aligned: return "aligned";
    case ProjectionBranch::degenerate: return "degenerate";
  }
  return "none";
}

void write_trace_jsonl(std::ostream& out, const Trace& trace) {
  for (const auto& r : trace) {
    nlohmann::ordered_json j;
    j["kind"] = r.kind == RecordKind::injection    ? "injection"
                : r.kind == RecordKind::projection ? "projection"
                                                   : "outer";
    j["iteration"] = r.iteration;
    if (r.kind == RecordKind::injection) {
      j["step"] = r.step;
      j["timestep"] = r.timestep;
      j["timestep_prev"] = r.timestep_prev;
      j["active"] = r.active;
      j["adversarial_loss"] = r.adversarial_loss;
      j["gradient_norm"] = r.gradient_norm;
    } else if (r.kind == RecordKind::outer) {
      j["adversarial_loss"] = r.adversarial_loss;
    } else {
      j["adversarial_loss"] = r.adversarial_loss;
      j["fidelity_loss"] = r.fidelity_loss;
      j["g1_norm"] = r.g1_norm;
      j["g2_norm"] = r.g2_norm;
      j["inner_product"] = r.inner_product;
      j["branch"] = to_string(r.branch);
    }
    j["queries"] = r.queries;
    out << j.dump() << '\n';
  }
}

LatentImage noise_layer(const LatentImage& x, int kernel, double sigma) {
  if (kernel < 1 || kernel % 2 == 0)
    throw ParameterError("noise layer kernel must be odd and >= 1");
  if (kernel == 1) return x;
  return {separable_filter(x.data, gaussian_kernel(kernel, sigma)), x.timestep};
}

double adversarial_loss(const Tensor& clean_out, const Tensor& candidate_out) {
  require_same_shape(clean_out, candidate_out, "adversarial_loss");
  if (clean_out.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < clean_out.size(); ++i) {
    const double d = candidate_out[i] - clean_out[i];
    s += d * d;
  }
  return s / static_cast<double>(clean_out.size());
}

Tensor adversarial_loss_output_gradient(const Tensor& clean_out, const Tensor& candidate_out) {
  require_same_shape(clean_out, candidate_out, "adversarial_loss gradient");
  Tensor g = candidate_out - clean_out;
  g *= 2.0 / static_cast<double>(g.size());
  return g;
}

}  // namespace trajguard
