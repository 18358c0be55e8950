#pragma once

// Diagonal-Gaussian prior and recognition networks for the two local latents
// (translation, summarization) and the global cross-lingual latent that is
// conditioned on them.

#include <atomic>
#include <cstddef>
#include <string>

#include "vhm/ops.hpp"
#include "vhm/parameters.hpp"
#include "vhm/tensor.hpp"

namespace vhm {

inline constexpr double kSigmaFloor = 1e-6;

// Which network produced a distribution (and therefore its samples).
enum class LatentPath { kPrior, kPosterior };

const char* to_string(LatentPath path);

// N(mu, diag(sigma^2)); rows are independent batch members.
struct DiagonalGaussian {
  Tensor mu;
  Tensor sigma;
  LatentPath path = LatentPath::kPrior;

  Index dim() const { return mu.cols(); }
};

struct LatentSample {
  Tensor z;
  LatentPath source = LatentPath::kPrior;
};

// Reparameterized draw z = mu + sigma * eps; eps has mu's storage shape.
LatentSample sample(const DiagonalGaussian& g, const MatrixXd& eps);

// The distribution mean as a sample (deterministic inference).
LatentSample mean_sample(const DiagonalGaussian& g);

// KL(q || p) summed over latent dimensions and averaged over rows.
Tensor kl_divergence(const DiagonalGaussian& q, const DiagonalGaussian& p);

// Two-layer perceptron with a tanh hidden layer of the given width and two
// linear heads: the mean, and a pre-softplus scale that is floored at
// kSigmaFloor.
class GaussianMlp {
 public:
  GaussianMlp() = default;
  GaussianMlp(ParameterStore& store, const std::string& prefix, Index in_width,
              Index hidden_width, Index latent_dim, ParamGroup group, Rng& rng);

  DiagonalGaussian operator()(const Tensor& input, LatentPath path) const;
  Index input_width() const { return in_width_; }

 private:
  Index in_width_ = 0;
  Tensor w_hidden_, b_hidden_, w_mu_, b_mu_, w_sigma_, b_sigma_;
};

// Ablations of the hierarchy.
struct AblationFlags {
  bool drop_z_mt = false;
  bool drop_z_ms = false;
  bool drop_global = false;
  bool flat_hierarchy = false;

  void validate() const;
  bool operator==(const AblationFlags&) const = default;
};

class LatentHierarchy {
 public:
  LatentHierarchy(Index d_model, Index latent_dim, const AblationFlags& flags,
                  ParameterStore& store, Rng& rng);

  bool has_mt() const { return !flags_.drop_z_mt; }
  bool has_ms() const { return !flags_.drop_z_ms; }
  bool has_cls() const { return !flags_.drop_global; }
  bool cls_sees_mt() const { return has_mt() && !flags_.flat_hierarchy; }
  bool cls_sees_ms() const { return has_ms() && !flags_.flat_hierarchy; }
  Index latent_dim() const { return latent_dim_; }
  const AblationFlags& flags() const { return flags_; }

  // Width of the prior_cls input: d_model plus one latent per conditioning
  // local variable.
  Index cls_condition_width() const;

  DiagonalGaussian prior_mt(const Tensor& h_source) const;
  DiagonalGaussian posterior_mt(const Tensor& h_source, const Tensor& h_target) const;
  DiagonalGaussian prior_ms(const Tensor& h_source) const;
  DiagonalGaussian posterior_ms(const Tensor& h_source, const Tensor& h_summary) const;
  // z_mt / z_ms may be null only when the configuration does not use them.
  DiagonalGaussian prior_cls(const Tensor& h_source, const LatentSample* z_mt,
                             const LatentSample* z_ms) const;
  DiagonalGaussian posterior_cls(const Tensor& h_source, const LatentSample* z_mt,
                                 const LatentSample* z_ms,
                                 const Tensor& h_target) const;

  std::size_t prior_calls() const { return prior_calls_.load(); }
  std::size_t posterior_calls() const { return posterior_calls_.load(); }

 private:
  std::vector<Tensor> cls_condition(const Tensor& h_source, const LatentSample* z_mt,
                                    const LatentSample* z_ms) const;
  void require(bool present, const char* what) const;

  Index d_model_;
  Index latent_dim_;
  AblationFlags flags_;
  GaussianMlp prior_mt_, posterior_mt_, prior_ms_, posterior_ms_, prior_cls_,
      posterior_cls_;
  mutable std::atomic<std::size_t> prior_calls_{0};
  mutable std::atomic<std::size_t> posterior_calls_{0};
};

}  // namespace vhm
