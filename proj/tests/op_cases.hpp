#pragma once

// Finite-difference cases for every differentiable op, shared by the unit
// tests and the acceptance gate.

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "gradcheck.hpp"
#include "vhm/attention.hpp"
#include "vhm/ops.hpp"
#include "vhm/random.hpp"

namespace vhm::testing {

inline MatrixXd uniform(Index rows, Index cols, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  MatrixXd m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = d(rng);
  return m;
}

inline Tensor leaf(const MatrixXd& m) { return Tensor::from_matrix(m, true); }

inline Tensor bias_leaf(const MatrixXd& row) { return Tensor(Shape{row.cols()}, row, true); }

// Scalar loss from any tensor through a fixed random projection.
inline Tensor project(const Tensor& t, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(t, Tensor(t.shape(), uniform(t.rows(), t.cols(), rng))));
}

using Leaves = std::vector<std::pair<std::string, Tensor>>;
using LossCase = std::pair<Leaves, std::function<Tensor()>>;

struct OpCase {
  std::string name;
  std::function<LossCase(Rng&)> make;
};

struct OpResult {
  double worst = 0.0;
  std::string where;
};

// Worst relative error over `trials` fresh random inputs.
inline OpResult run_op_case(const OpCase& op, int trials) {
  Rng rng(std::hash<std::string>{}(op.name));
  OpResult out;
  for (int trial = 0; trial < trials; ++trial) {
    auto [leaves, loss] = op.make(rng);
    const auto r = check_gradients(loss, leaves);
    if (r.max_rel_error > out.worst) {
      out.worst = r.max_rel_error;
      out.where = r.worst;
    }
  }
  return out;
}

inline std::vector<OpCase> op_cases() {
  std::vector<OpCase> cases;
  auto unary = [&](const char* name, Tensor (*f)(const Tensor&), double lo, double hi) {
    cases.push_back({name, [=](Rng& rng) {
                       Tensor a = leaf(uniform(3, 4, rng, lo, hi));
                       const std::uint64_t p = rng();
                       return LossCase{{{"a", a}}, [=] { return project(f(a), p); }};
                     }});
  };
  unary("tanh", [](const Tensor& a) { return tanh(a); }, -2, 2);
  unary("exp", [](const Tensor& a) { return exp(a); }, -2, 2);
  unary("log", [](const Tensor& a) { return log(a); }, 0.2, 3);
  unary("softplus", [](const Tensor& a) { return softplus(a); }, -5, 5);
  unary("square", [](const Tensor& a) { return square(a); }, -2, 2);
  unary("scale", [](const Tensor& a) { return scale(a, -1.7); }, -2, 2);
  unary("add_scalar", [](const Tensor& a) { return add_scalar(a, 0.3); }, -2, 2);
  unary("relu", [](const Tensor& a) { return relu(a); }, 0.05, 2);
  unary("relu_negative", [](const Tensor& a) { return add(relu(a), a); }, -2, -0.05);
  unary("clamp_min", [](const Tensor& a) { return clamp_min(a, 0.5); }, 0.6, 2);
  unary("softmax", [](const Tensor& a) { return softmax(a); }, -3, 3);
  unary("softmax_axis0", [](const Tensor& a) { return softmax(a, 0); }, -3, 3);
  unary("transpose", [](const Tensor& a) { return transpose(a); }, -1, 1);
  unary("reshape", [](const Tensor& a) { return reshape(reshape(a, Shape{12}), Shape{3, 4}); }, -1, 1);
  unary("sum", [](const Tensor& a) { return square(sum(square(a))); }, -1, 1);
  unary("mean", [](const Tensor& a) { return square(mean(a)); }, -1, 1);
  unary("take_rows", [](const Tensor& a) { return take_rows(a, {2, 0, 2, 1}); }, -1, 1);
  unary("mean_pool", [](const Tensor& a) { return mean_pool(a, {true, false, true}); }, -1, 1);
  unary("segment_mean", [](const Tensor& a) { return segment_mean(a, {{0, 1}, {1, 2}}); }, -1, 1);

  auto binary = [&](const char* name, Tensor (*f)(const Tensor&, const Tensor&), double lo,
                    double hi) {
    cases.push_back({name, [=](Rng& rng) {
                       Tensor a = leaf(uniform(3, 4, rng, lo, hi));
                       Tensor b = leaf(uniform(3, 4, rng, lo, hi));
                       const std::uint64_t p = rng();
                       return LossCase{{{"a", a}, {"b", b}}, [=] { return project(f(a, b), p); }};
                     }});
  };
  binary("add", [](const Tensor& a, const Tensor& b) { return add(a, b); }, -1, 1);
  binary("sub", [](const Tensor& a, const Tensor& b) { return sub(a, b); }, -1, 1);
  binary("mul", [](const Tensor& a, const Tensor& b) { return mul(a, b); }, -1, 1);
  binary("div", [](const Tensor& a, const Tensor& b) { return div(a, b); }, 0.5, 2);
  binary("concat", [](const Tensor& a, const Tensor& b) { return concat<double>({a, b}); }, -1, 1);
  binary("concat_rows", [](const Tensor& a, const Tensor& b) { return concat_rows<double>({a, b}); },
         -1, 1);

  cases.push_back({"matmul", [](Rng& rng) {
                     Tensor a = leaf(uniform(3, 5, rng));
                     Tensor b = leaf(uniform(5, 4, rng));
                     const std::uint64_t p = rng();
                     return LossCase{{{"a", a}, {"b", b}}, [=] { return project(matmul(a, b), p); }};
                   }});
  cases.push_back({"matmul_vector", [](Rng& rng) {
                     Tensor a = Tensor(Shape{5}, uniform(1, 5, rng), true);
                     Tensor b = leaf(uniform(5, 4, rng));
                     const std::uint64_t p = rng();
                     return LossCase{{{"a", a}, {"b", b}}, [=] { return project(matmul(a, b), p); }};
                   }});
  cases.push_back({"add_bias", [](Rng& rng) {
                     Tensor x = leaf(uniform(3, 4, rng));
                     Tensor b = bias_leaf(uniform(1, 4, rng));
                     const std::uint64_t p = rng();
                     return LossCase{{{"x", x}, {"b", b}}, [=] { return project(add_bias(x, b), p); }};
                   }});
  cases.push_back({"layer_norm", [](Rng& rng) {
                     Tensor x = leaf(uniform(3, 6, rng, -2, 2));
                     Tensor g = bias_leaf(uniform(1, 6, rng, 0.5, 1.5));
                     Tensor b = bias_leaf(uniform(1, 6, rng));
                     const std::uint64_t p = rng();
                     return LossCase{{{"x", x}, {"gain", g}, {"bias", b}},
                                     [=] { return project(layer_norm(x, g, b), p); }};
                   }});
  cases.push_back({"embedding", [](Rng& rng) {
                     Tensor table = leaf(uniform(5, 3, rng));
                     const std::uint64_t p = rng();
                     return LossCase{{{"table", table}},
                                     [=] { return project(embedding(table, {4, 1, 4, 0}), p); }};
                   }});
  cases.push_back({"cross_entropy", [](Rng& rng) {
                     Tensor logits = leaf(uniform(4, 6, rng, -3, 3));
                     return LossCase{{{"logits", logits}},
                                     [=] { return cross_entropy(logits, {5, 0, 2, 2}); }};
                   }});
  cases.push_back({"dropout", [](Rng& rng) {
                     Tensor a = leaf(uniform(3, 4, rng));
                     const std::uint64_t p = rng();
                     const std::uint64_t seed = rng();
                     return LossCase{{{"a", a}}, [=] {
                                       Rng fixed(seed);
                                       return project(dropout(a, 0.3, &fixed), p);
                                     }};
                   }});
  cases.push_back({"multi_head_attention", [](Rng& rng) {
                     Tensor q = leaf(uniform(5, 4, rng));
                     Tensor k = leaf(uniform(6, 4, rng));
                     Tensor v = leaf(uniform(6, 4, rng));
                     const std::uint64_t p = rng();
                     AttentionLayout layout;
                     layout.blocks = {{{0, 2}, {0, 3}}, {{2, 3}, {3, 3}}};
                     layout.causal = true;
                     return LossCase{{{"q", q}, {"k", k}, {"v", v}}, [=] {
                                       return project(multi_head_attention(q, k, v, layout, 2), p);
                                     }};
                   }});
  cases.push_back({"attention_dropout", [](Rng& rng) {
                     Tensor q = leaf(uniform(3, 4, rng));
                     Tensor k = leaf(uniform(4, 4, rng));
                     Tensor v = leaf(uniform(4, 4, rng));
                     const std::uint64_t p = rng();
                     const std::uint64_t seed = rng();
                     AttentionLayout layout;
                     layout.blocks = {{{0, 3}, {0, 4}}};
                     return LossCase{{{"q", q}, {"k", k}, {"v", v}}, [=] {
                                       Rng fixed(seed);
                                       return project(
                                           multi_head_attention(q, k, v, layout, 2, 0.2, &fixed), p);
                                     }};
                   }});
  return cases;
}

}  // namespace vhm::testing
