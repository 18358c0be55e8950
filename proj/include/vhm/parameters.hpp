#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "vhm/random.hpp"
#include "vhm/tensor.hpp"

namespace vhm {

// Generative weights (theta) versus recognition-network weights (phi).
enum class ParamGroup { kGenerative, kRecognition };

const char* to_string(ParamGroup group);

struct Parameter {
  std::string name;
  Tensor tensor;
  ParamGroup group = ParamGroup::kGenerative;
};

// Owns the ordered list of trainable tensors. Modules keep handles to the
// same nodes, so updates through the store are visible to them.
class ParameterStore {
 public:
  Tensor add(const std::string& name, Tensor tensor,
             ParamGroup group = ParamGroup::kGenerative);

  // Xavier/Glorot uniform on [-a, a], a = sqrt(6 / (fan_in + fan_out)).
  Tensor xavier(const std::string& name, Index fan_in, Index fan_out, Rng& rng,
                ParamGroup group = ParamGroup::kGenerative);
  Tensor zeros(const std::string& name, Index size,
               ParamGroup group = ParamGroup::kGenerative);
  Tensor ones(const std::string& name, Index size,
              ParamGroup group = ParamGroup::kGenerative);

  std::vector<Parameter>& params() { return params_; }
  const std::vector<Parameter>& params() const { return params_; }
  const Parameter& find(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  void zero_grad();
  Index total_size() const;

  // Deep copies of every value, in registration order.
  std::vector<MatrixXd> snapshot() const;
  void restore(const std::vector<MatrixXd>& values);

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace vhm
