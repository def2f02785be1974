#include "trajguard/model.hpp"

namespace trajguard {

const DifferentiableMap& require_gradients(const Model& m) {
  if (const auto* d = dynamic_cast<const DifferentiableMap*>(&m)) return *d;
  throw CapabilityError("model '" + m.name() +
                        "' exposes no input gradients; use the black-box path");
}

QueryOnlyModel::QueryOnlyModel(std::shared_ptr<const Model> model,
                               std::optional<std::uint64_t> query_budget)
    : model_(std::move(model)), budget_(query_budget) {
  if (!model_) throw ParameterError("QueryOnlyModel requires a model");
}

Tensor QueryOnlyModel::forward(const Tensor& x) const {
  const std::uint64_t issued = queries_.fetch_add(1) + 1;
  if (budget_ && issued > *budget_)
    throw BudgetError("query budget of " + std::to_string(*budget_) + " exceeded");
  return model_->forward(x);
}

std::unique_ptr<QueryOnlyModel> wrap_black_box(std::shared_ptr<const Model> m,
                                               std::optional<std::uint64_t> budget) {
  return std::make_unique<QueryOnlyModel>(std::move(m), budget);
}

}  // namespace trajguard
