#pragma once

// The variational hierarchical model: shared encoder, local/global latent
// hierarchy, decoder with the latent fused into its top layer, and a softmax
// output head shared by all three tasks.

#include <atomic>
#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "vhm/data.hpp"
#include "vhm/decoding.hpp"
#include "vhm/latent.hpp"
#include "vhm/parameters.hpp"
#include "vhm/transformer.hpp"

namespace vhm {

struct ModelConfig {
  BackboneConfig backbone;
  Index vocab_size = 0;
  Index latent_dim = 16;
  // false gives the no-latent multi-task baseline on the same code path.
  bool use_latents = true;
  AblationFlags ablation;

  void validate() const;
};

// One mini-batch per task. Empty task lists are skipped.
struct TaskBatch {
  std::vector<TaskExample> mt;
  std::vector<TaskExample> ms;
  std::vector<TaskExample> cls;
};

// Standard-normal noise for the reparameterized posterior samples,
// [batch x latent_dim] per task.
struct LatentNoise {
  MatrixXd mt;
  MatrixXd ms;
  MatrixXd cls;

  static LatentNoise draw(const TaskBatch& batch, Index latent_dim, Rng& rng);
  static LatentNoise zeros(const TaskBatch& batch, Index latent_dim);
};

struct LossBreakdown {
  double kl_mt = 0.0;
  double kl_ms = 0.0;
  double kl_cls = 0.0;
  double nll_mt = 0.0;
  double nll_ms = 0.0;
  double nll_cls = 0.0;
  double kl_weight = 0.0;
  // nll_mt + nll_ms + nll_cls + kl_weight * (kl_mt + kl_ms + kl_cls)
  double total = 0.0;
  Tensor objective;  // differentiable total
};

struct InferenceOptions {
  // Draw latents from the priors instead of taking their means.
  bool sample_latents = false;
  Rng* rng = nullptr;
};

struct InferenceResult {
  TokenSeq tokens;  // without the end-of-sequence token
  std::vector<LatentPath> latent_sources;
  MatrixXd fused_latent;  // 1 x fused_width
};

// Counters for auditing which networks and reference sequences were touched.
struct ModelAudit {
  std::size_t prior_calls = 0;
  std::size_t posterior_calls = 0;
  std::size_t reference_reads = 0;
};

class VhmModel {
 public:
  VhmModel(const ModelConfig& config, std::uint64_t init_seed);
  VhmModel(const VhmModel&) = delete;
  VhmModel& operator=(const VhmModel&) = delete;

  const ModelConfig& config() const { return config_; }
  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }
  const Transformer& backbone() const { return *backbone_; }
  // Null for the no-latent baseline.
  const LatentHierarchy* latents() const { return latents_.get(); }

  // Latent width appended to decoder states: slots [z_cls | z_mt | z_ms],
  // zero-filled where a path has no latent; 0 without latents.
  Index fused_width() const;

  // Teacher-forced objective over one batch per task. Posterior samples feed
  // the decoders; prior_cls/posterior_cls condition on the posterior-path
  // local samples. A null rng disables dropout.
  LossBreakdown forward_train(const TaskBatch& batch, const LatentNoise& noise,
                              double kl_weight, Rng* rng = nullptr) const;

  // o_t = tanh(W_p [h_t ; z] + b_p). z is either one row broadcast to every
  // step or one row per step.
  Tensor fuse_latent(const Tensor& h_top, const Tensor& z) const;

  // Cross-lingual summary of an article via the prior path only.
  InferenceResult infer(const TokenSeq& article, const DecodeConfig& config,
                        const InferenceOptions& options = {}) const;

  // The prior-path latent row the decoder receives for an article.
  MatrixXd inference_latent(const TokenSeq& article, const InferenceOptions& options,
                            std::vector<LatentPath>* sources) const;

  // Scorer over the CLS decoder for an article and a fixed fused latent row.
  std::unique_ptr<StepScorer> make_scorer(const TokenSeq& article,
                                          const MatrixXd& fused_latent,
                                          TokenId start = Vocabulary::kBosTarget) const;

  // Row t holds log p(. | start, target[0..t)) under teacher forcing, for
  // t = 0..|target|.
  MatrixXd teacher_forced_log_probs(const TaskExample& example,
                                    const MatrixXd& fused_latent) const;

  ModelAudit audit() const;

 private:
  friend class VhmStepScorer;
  Tensor output_logits(const Tensor& fused) const;

  ModelConfig config_;
  ParameterStore store_;
  std::unique_ptr<Transformer> backbone_;
  std::unique_ptr<LatentHierarchy> latents_;
  Tensor w_fuse_, b_fuse_, w_out_, b_out_;
  mutable std::atomic<std::size_t> reference_reads_{0};
};

// Row-wise log-softmax.
MatrixXd log_softmax_rows(const MatrixXd& logits);

}  // namespace vhm
