#include "vhm/parameters.hpp"

#include <cmath>

namespace vhm {

const char* to_string(ParamGroup group) {
  return group == ParamGroup::kGenerative ? "theta" : "phi";
}

Tensor ParameterStore::add(const std::string& name, Tensor tensor,
                           ParamGroup group) {
  if (index_.count(name)) {
    throw ContractError("parameter registered twice: " + name);
  }
  tensor.set_requires_grad(true);
  index_.emplace(name, params_.size());
  params_.push_back({name, tensor, group});
  return tensor;
}

Tensor ParameterStore::xavier(const std::string& name, Index fan_in,
                              Index fan_out, Rng& rng, ParamGroup group) {
  const double limit = std::sqrt(6.0 / double(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  MatrixXd w(fan_in, fan_out);
  for (Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
  return add(name, Tensor::from_matrix(std::move(w)), group);
}

Tensor ParameterStore::zeros(const std::string& name, Index size,
                             ParamGroup group) {
  return add(name, Tensor::zeros(Shape{size}), group);
}

Tensor ParameterStore::ones(const std::string& name, Index size,
                            ParamGroup group) {
  return add(name, Tensor(Shape{size}, MatrixXd::Ones(1, size)), group);
}

const Parameter& ParameterStore::find(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter: " + name);
  return params_[it->second];
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

Index ParameterStore::total_size() const {
  Index n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

std::vector<MatrixXd> ParameterStore::snapshot() const {
  std::vector<MatrixXd> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.tensor.value());
  return out;
}

void ParameterStore::restore(const std::vector<MatrixXd>& values) {
  if (values.size() != params_.size()) {
    throw ContractError("restore: snapshot has " + std::to_string(values.size()) +
                        " tensors, store has " + std::to_string(params_.size()));
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto& v = params_[i].tensor.mutable_value();
    if (v.rows() != values[i].rows() || v.cols() != values[i].cols()) {
      throw ShapeError("restore: shape mismatch for " + params_[i].name);
    }
    v = values[i];
  }
}

}  // namespace vhm
