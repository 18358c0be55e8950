#include "vhm/latent.hpp"

#include "vhm/transformer.hpp"

namespace vhm {

const char* to_string(LatentPath path) {
  return path == LatentPath::kPrior ? "prior" : "posterior";
}

LatentSample sample(const DiagonalGaussian& g, const MatrixXd& eps) {
  if (eps.rows() != g.mu.rows() || eps.cols() != g.mu.cols()) {
    throw ShapeError("sample: noise " + std::to_string(eps.rows()) + "x" +
                     std::to_string(eps.cols()) + " does not match mu " +
                     shape_string(g.mu.shape()));
  }
  Tensor noise(g.mu.shape(), eps);
  return {add(g.mu, mul(g.sigma, noise)), g.path};
}

LatentSample mean_sample(const DiagonalGaussian& g) { return {g.mu, g.path}; }

Tensor kl_divergence(const DiagonalGaussian& q, const DiagonalGaussian& p) {
  if (q.mu.shape() != p.mu.shape() || q.sigma.shape() != p.sigma.shape() ||
      q.mu.shape() != q.sigma.shape()) {
    throw ShapeError("kl_divergence: q " + shape_string(q.mu.shape()) +
                     " vs p " + shape_string(p.mu.shape()));
  }
  // ln(sp/sq) + (sq^2 + (mq - mp)^2) / (2 sp^2) - 1/2, per dimension.
  Tensor log_ratio = sub(log(p.sigma), log(q.sigma));
  Tensor spread = add(square(q.sigma), square(sub(q.mu, p.mu)));
  Tensor terms = add_scalar(
      add(log_ratio, div(spread, scale(square(p.sigma), 2.0))), -0.5);
  return scale(sum(terms), 1.0 / double(q.mu.rows()));
}

GaussianMlp::GaussianMlp(ParameterStore& store, const std::string& prefix,
                         Index in_width, Index hidden_width, Index latent_dim,
                         ParamGroup group, Rng& rng)
    : in_width_(in_width),
      w_hidden_(store.xavier(prefix + ".w_hidden", in_width, hidden_width, rng, group)),
      b_hidden_(store.zeros(prefix + ".b_hidden", hidden_width, group)),
      w_mu_(store.xavier(prefix + ".w_mu", hidden_width, latent_dim, rng, group)),
      b_mu_(store.zeros(prefix + ".b_mu", latent_dim, group)),
      w_sigma_(store.xavier(prefix + ".w_sigma", hidden_width, latent_dim, rng, group)),
      b_sigma_(store.zeros(prefix + ".b_sigma", latent_dim, group)) {}

DiagonalGaussian GaussianMlp::operator()(const Tensor& input,
                                         LatentPath path) const {
  if (input.cols() != in_width_) {
    throw ShapeError("latent network expects width " + std::to_string(in_width_) +
                     ", got " + shape_string(input.shape()));
  }
  if (!input.value().allFinite()) {
    throw NumericsError("latent network: non-finite input");
  }
  Tensor hidden = tanh(linear(input, w_hidden_, b_hidden_));
  Tensor mu = linear(hidden, w_mu_, b_mu_);
  Tensor sigma = clamp_min(softplus(linear(hidden, w_sigma_, b_sigma_)), kSigmaFloor);
  return {mu, sigma, path};
}

void AblationFlags::validate() const {
  if (drop_global && flat_hierarchy) {
    throw ConfigError(
        "ablation.drop_global and ablation.flat_hierarchy are mutually exclusive");
  }
}

LatentHierarchy::LatentHierarchy(Index d_model, Index latent_dim,
                                 const AblationFlags& flags,
                                 ParameterStore& store, Rng& rng)
    : d_model_(d_model), latent_dim_(latent_dim), flags_(flags) {
  flags_.validate();
  if (latent_dim <= 0) throw ConfigError("model.latent_dim must be positive");
  const auto theta = ParamGroup::kGenerative;
  const auto phi = ParamGroup::kRecognition;
  const Index d = d_model;
  if (has_mt()) {
    prior_mt_ = GaussianMlp(store, "latent.prior_mt", d, d, latent_dim, theta, rng);
    posterior_mt_ = GaussianMlp(store, "latent.posterior_mt", 2 * d, d, latent_dim, phi, rng);
  }
  if (has_ms()) {
    prior_ms_ = GaussianMlp(store, "latent.prior_ms", d, d, latent_dim, theta, rng);
    posterior_ms_ = GaussianMlp(store, "latent.posterior_ms", 2 * d, d, latent_dim, phi, rng);
  }
  if (has_cls()) {
    const Index w = cls_condition_width();
    prior_cls_ = GaussianMlp(store, "latent.prior_cls", w, d, latent_dim, theta, rng);
    posterior_cls_ = GaussianMlp(store, "latent.posterior_cls", w + d, d, latent_dim, phi, rng);
  }
}

Index LatentHierarchy::cls_condition_width() const {
  return d_model_ + (cls_sees_mt() ? latent_dim_ : 0) +
         (cls_sees_ms() ? latent_dim_ : 0);
}

void LatentHierarchy::require(bool present, const char* what) const {
  if (!present) throw ContractError(std::string(what) + " is ablated in this model");
}

DiagonalGaussian LatentHierarchy::prior_mt(const Tensor& h_source) const {
  require(has_mt(), "z_mt");
  ++prior_calls_;
  return prior_mt_(h_source, LatentPath::kPrior);
}

DiagonalGaussian LatentHierarchy::posterior_mt(const Tensor& h_source,
                                               const Tensor& h_target) const {
  require(has_mt(), "z_mt");
  ++posterior_calls_;
  return posterior_mt_(concat<double>({h_source, h_target}), LatentPath::kPosterior);
}

DiagonalGaussian LatentHierarchy::prior_ms(const Tensor& h_source) const {
  require(has_ms(), "z_ms");
  ++prior_calls_;
  return prior_ms_(h_source, LatentPath::kPrior);
}

DiagonalGaussian LatentHierarchy::posterior_ms(const Tensor& h_source,
                                               const Tensor& h_summary) const {
  require(has_ms(), "z_ms");
  ++posterior_calls_;
  return posterior_ms_(concat<double>({h_source, h_summary}), LatentPath::kPosterior);
}

std::vector<Tensor> LatentHierarchy::cls_condition(const Tensor& h_source,
                                                   const LatentSample* z_mt,
                                                   const LatentSample* z_ms) const {
  std::vector<Tensor> parts{h_source};
  if (cls_sees_mt()) {
    if (z_mt == nullptr) throw ContractError("prior_cls: z_mt sample required");
    parts.push_back(z_mt->z);
  }
  if (cls_sees_ms()) {
    if (z_ms == nullptr) throw ContractError("prior_cls: z_ms sample required");
    parts.push_back(z_ms->z);
  }
  return parts;
}

DiagonalGaussian LatentHierarchy::prior_cls(const Tensor& h_source,
                                            const LatentSample* z_mt,
                                            const LatentSample* z_ms) const {
  require(has_cls(), "z_cls");
  ++prior_calls_;
  return prior_cls_(concat(cls_condition(h_source, z_mt, z_ms)), LatentPath::kPrior);
}

DiagonalGaussian LatentHierarchy::posterior_cls(const Tensor& h_source,
                                                const LatentSample* z_mt,
                                                const LatentSample* z_ms,
                                                const Tensor& h_target) const {
  require(has_cls(), "z_cls");
  ++posterior_calls_;
  auto parts = cls_condition(h_source, z_mt, z_ms);
  parts.push_back(h_target);
  return posterior_cls_(concat(parts), LatentPath::kPosterior);
}

}  // namespace vhm
