#pragma once

#include <atomic>
#include <concepts>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>

#include "trajguard/tensor.hpp"

namespace trajguard {

class BudgetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Scalar loss over a model output, with its gradient w.r.t. that output.
struct OutputLoss {
  std::function<double(const Tensor&)> value;
  std::function<Tensor(const Tensor&)> gradient;
};

// Image-to-image model with forward evaluation only.
class Model {
 public:
  virtual ~Model() = default;
  virtual Tensor forward(const Tensor& x) const = 0;
  virtual std::string name() const = 0;
  virtual std::uint64_t seed() const { return 0; }
};

// Model that also exposes vector-Jacobian products w.r.t. its input.
class DifferentiableMap : public Model {
 public:
  // Returns J(x)^T upstream, where J is the Jacobian of forward at x.
  virtual Tensor vjp(const Tensor& x, const Tensor& upstream) const = 0;

  // Gradient of loss(forward(x)) w.r.t. x.
  Tensor input_gradient(const Tensor& x, const OutputLoss& loss) const {
    return vjp(x, loss.gradient(forward(x)));
  }
};

// Throws CapabilityError if the model does not expose input gradients.
const DifferentiableMap& require_gradients(const Model& m);

// Noise predictor eps_theta(x, t).
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual Tensor predict_noise(const Tensor& x, int timestep) const = 0;
  virtual Tensor vjp(const Tensor& x, int timestep, const Tensor& upstream) const = 0;
  virtual std::string name() const = 0;
  virtual std::uint64_t seed() const { return 0; }
};

// A denoiser frozen at one timestep, viewed as a DifferentiableMap.
class TimestepBound final : public DifferentiableMap {
 public:
  TimestepBound(const Denoiser& d, int timestep) : denoiser_(d), timestep_(timestep) {}
  Tensor forward(const Tensor& x) const override {
    return denoiser_.predict_noise(x, timestep_);
  }
  Tensor vjp(const Tensor& x, const Tensor& upstream) const override {
    return denoiser_.vjp(x, timestep_, upstream);
  }
  std::string name() const override {
    return denoiser_.name() + "@t=" + std::to_string(timestep_);
  }

 private:
  const Denoiser& denoiser_;
  int timestep_;
};

// Query-only view of a model. Offers no gradient access; counts every forward call.
class QueryOnlyModel final {
 public:
  explicit QueryOnlyModel(std::shared_ptr<const Model> model,
                          std::optional<std::uint64_t> query_budget = std::nullopt);
  QueryOnlyModel(const QueryOnlyModel&) = delete;
  QueryOnlyModel& operator=(const QueryOnlyModel&) = delete;

  Tensor forward(const Tensor& x) const;
  std::uint64_t query_count() const { return queries_.load(); }
  std::string name() const { return model_->name(); }

 private:
  std::shared_ptr<const Model> model_;
  std::optional<std::uint64_t> budget_;
  mutable std::atomic<std::uint64_t> queries_{0};
};

std::unique_ptr<QueryOnlyModel> wrap_black_box(std::shared_ptr<const Model> m,
                                               std::optional<std::uint64_t> budget = std::nullopt);

template <typename M>
concept ExposesInputGradient = requires(const M& m, const Tensor& x) {
  { m.vjp(x, x) } -> std::convertible_to<Tensor>;
};

}  // namespace trajguard
