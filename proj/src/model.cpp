#include "vhm/model.hpp"

#include <cmath>
#include <numeric>

namespace vhm {

void ModelConfig::validate() const {
  backbone.validate();
  ablation.validate();
  if (vocab_size <= Vocabulary::kReserved) {
    throw ConfigError("model vocabulary must extend past the reserved tokens");
  }
  if (latent_dim <= 0) throw ConfigError("model.latent_dim must be positive");
}

LatentNoise LatentNoise::draw(const TaskBatch& batch, Index latent_dim, Rng& rng) {
  LatentNoise n;
  n.mt = standard_normal(Index(batch.mt.size()), latent_dim, rng);
  n.ms = standard_normal(Index(batch.ms.size()), latent_dim, rng);
  n.cls = standard_normal(Index(batch.cls.size()), latent_dim, rng);
  return n;
}

LatentNoise LatentNoise::zeros(const TaskBatch& batch, Index latent_dim) {
  return {MatrixXd::Zero(Index(batch.mt.size()), latent_dim),
          MatrixXd::Zero(Index(batch.ms.size()), latent_dim),
          MatrixXd::Zero(Index(batch.cls.size()), latent_dim)};
}

MatrixXd log_softmax_rows(const MatrixXd& logits) {
  MatrixXd out(logits.rows(), logits.cols());
  for (Index r = 0; r < logits.rows(); ++r) {
    const double mx = logits.row(r).maxCoeff();
    const double lse =
        mx + std::log((logits.row(r).array() - mx).exp().sum());
    out.row(r) = (logits.row(r).array() - lse).matrix();
  }
  return out;
}

VhmModel::VhmModel(const ModelConfig& config, std::uint64_t init_seed)
    : config_(config) {
  config_.validate();
  Rng rng(init_seed);
  backbone_ = std::make_unique<Transformer>(config_.backbone, config_.vocab_size,
                                            store_, rng);
  const Index d = config_.backbone.d_model;
  if (config_.use_latents) {
    latents_ = std::make_unique<LatentHierarchy>(d, config_.latent_dim,
                                                 config_.ablation, store_, rng);
  }
  w_fuse_ = store_.xavier("fusion.w", d + fused_width(), d, rng);
  b_fuse_ = store_.zeros("fusion.b", d);
  w_out_ = store_.xavier("output.w", d, config_.vocab_size, rng);
  b_out_ = store_.zeros("output.b", config_.vocab_size);
}

Index VhmModel::fused_width() const {
  return config_.use_latents ? 3 * config_.latent_dim : 0;
}

ModelAudit VhmModel::audit() const {
  ModelAudit a;
  if (latents_) {
    a.prior_calls = latents_->prior_calls();
    a.posterior_calls = latents_->posterior_calls();
  }
  a.reference_reads = reference_reads_.load();
  return a;
}

Tensor VhmModel::fuse_latent(const Tensor& h_top, const Tensor& z) const {
  const Index width = fused_width();
  if (width == 0) {
    if (z.defined() && z.numel() != 0) {
      throw ShapeError("fuse_latent: this model takes no latent input");
    }
    return tanh(linear(h_top, w_fuse_, b_fuse_));
  }
  if (z.cols() != width) {
    throw ShapeError("fuse_latent: latent width " + std::to_string(z.cols()) +
                     " but the projection expects " + std::to_string(width));
  }
  Tensor per_step = z;
  if (z.rows() == 1 && h_top.rows() != 1) {
    per_step = take_rows(z, std::vector<Index>(std::size_t(h_top.rows()), 0));
  } else if (z.rows() != h_top.rows()) {
    throw ShapeError("fuse_latent: " + shape_string(z.shape()) +
                     " latent rows for states " + shape_string(h_top.shape()));
  }
  if (per_step.rank() == 1) per_step = reshape(per_step, Shape{1, width});
  return tanh(linear(concat<double>({h_top, per_step}), w_fuse_, b_fuse_));
}

Tensor VhmModel::output_logits(const Tensor& fused) const {
  return linear(fused, w_out_, b_out_);
}

namespace {

struct TaskGroup {
  Task task;
  const std::vector<TaskExample>* examples;
  Index first_source = 0;  // encoder segment of examples[0].source
  Index first_target = -1;  // encoder segment of examples[0].target, if encoded
};

std::vector<Index> range_indices(Index first, Index count) {
  std::vector<Index> idx(static_cast<std::size_t>(count));
  std::iota(idx.begin(), idx.end(), first);
  return idx;
}

// Row i of `z` repeated so that row j of the result is z[j % rows].
Tensor align_rows(const Tensor& z, Index rows) {
  if (z.rows() == rows) return z;
  std::vector<Index> idx(static_cast<std::size_t>(rows));
  for (Index i = 0; i < rows; ++i) idx[std::size_t(i)] = i % z.rows();
  return take_rows(z, idx);
}

void check_finite(double value, const char* component) {
  if (!std::isfinite(value)) {
    throw NumericsError(std::string("non-finite ") + component + " in the objective");
  }
}

}  // namespace

LossBreakdown VhmModel::forward_train(const TaskBatch& batch,
                                      const LatentNoise& noise, double kl_weight,
                                      Rng* rng) const {
  if (!(kl_weight >= 0.0 && kl_weight <= 1.0)) {
    throw ContractError("forward_train: KL weight must lie in [0, 1]");
  }
  std::vector<TaskGroup> groups;
  for (auto [task, list] : {std::pair{Task::kMt, &batch.mt},
                            std::pair{Task::kMs, &batch.ms},
                            std::pair{Task::kCls, &batch.cls}}) {
    if (!list->empty()) groups.push_back({task, list});
  }
  if (groups.empty()) throw DataError("forward_train: every task batch is empty");

  const LatentHierarchy* lat = latents_.get();
  auto task_has_latent = [&](Task t) {
    if (!lat) return false;
    switch (t) {
      case Task::kMt:
        return lat->has_mt();
      case Task::kMs:
        return lat->has_ms();
      case Task::kCls:
        return lat->has_cls();
    }
    return false;
  };

  // 1. Encode every source (and, for posteriors, every reference) at once.
  std::vector<TokenSeq> encoded;
  for (auto& g : groups) {
    g.first_source = Index(encoded.size());
    for (const auto& ex : *g.examples) {
      if (ex.source.empty() || ex.target.empty()) {
        throw DataError(std::string("forward_train: empty sequence in ") +
                        to_string(g.task) + " batch");
      }
      encoded.push_back(ex.source);
    }
    if (task_has_latent(g.task)) {
      g.first_target = Index(encoded.size());
      for (const auto& ex : *g.examples) encoded.push_back(ex.target);
      reference_reads_ += g.examples->size();
    }
  }
  const EncoderStates enc = backbone_->encode(encoded, rng);
  const Tensor pooled = segment_mean(enc.states, enc.segments);

  // 2-3. Local posteriors, then the global latent conditioned on them.
  const Tensor zero_scalar = Tensor::scalar(0.0);
  Tensor kl[3] = {zero_scalar, zero_scalar, zero_scalar};
  std::optional<LatentSample> z_mt, z_ms, z_cls;
  auto group_of = [&](Task t) -> const TaskGroup* {
    for (const auto& g : groups) {
      if (g.task == t) return &g;
    }
    return nullptr;
  };
  auto pooled_rows = [&](Index first, std::size_t count) {
    return take_rows(pooled, range_indices(first, Index(count)));
  };

  if (const TaskGroup* g = group_of(Task::kMt); g && task_has_latent(Task::kMt)) {
    Tensor hx = pooled_rows(g->first_source, g->examples->size());
    Tensor hy = pooled_rows(g->first_target, g->examples->size());
    DiagonalGaussian prior = lat->prior_mt(hx);
    DiagonalGaussian post = lat->posterior_mt(hx, hy);
    z_mt = sample(post, noise.mt);
    kl[0] = kl_divergence(post, prior);
  }
  if (const TaskGroup* g = group_of(Task::kMs); g && task_has_latent(Task::kMs)) {
    Tensor hx = pooled_rows(g->first_source, g->examples->size());
    Tensor hy = pooled_rows(g->first_target, g->examples->size());
    DiagonalGaussian prior = lat->prior_ms(hx);
    DiagonalGaussian post = lat->posterior_ms(hx, hy);
    z_ms = sample(post, noise.ms);
    kl[1] = kl_divergence(post, prior);
  }

  const TaskGroup* cls_group = group_of(Task::kCls);
  const Index n_cls = cls_group ? Index(cls_group->examples->size()) : 0;
  std::optional<LatentSample> z_mt_cls, z_ms_cls;  // aligned to CLS rows
  if (cls_group && lat) {
    const bool need_mt = lat->has_mt() && (lat->cls_sees_mt() || !lat->has_cls() ||
                                           config_.ablation.flat_hierarchy);
    const bool need_ms = lat->has_ms() && (lat->cls_sees_ms() || !lat->has_cls() ||
                                           config_.ablation.flat_hierarchy);
    if ((need_mt && !z_mt) || (need_ms && !z_ms)) {
      throw ContractError(
          "forward_train: the CLS latent path needs MT and MS batches in the same step");
    }
    if (need_mt) z_mt_cls = LatentSample{align_rows(z_mt->z, n_cls), z_mt->source};
    if (need_ms) z_ms_cls = LatentSample{align_rows(z_ms->z, n_cls), z_ms->source};
  }
  if (cls_group && task_has_latent(Task::kCls)) {
    Tensor hx = pooled_rows(cls_group->first_source, cls_group->examples->size());
    Tensor hy = pooled_rows(cls_group->first_target, cls_group->examples->size());
    const LatentSample* cm = z_mt_cls ? &*z_mt_cls : nullptr;
    const LatentSample* cs = z_ms_cls ? &*z_ms_cls : nullptr;
    DiagonalGaussian prior = lat->prior_cls(hx, cm, cs);
    DiagonalGaussian post = lat->posterior_cls(hx, cm, cs, hy);
    z_cls = sample(post, noise.cls);
    kl[2] = kl_divergence(post, prior);
  }

  // 4. Teacher-forced decoding of all three targets in one packed pass.
  std::vector<TokenSeq> prefixes;
  std::vector<Index> memory_of;
  std::vector<std::vector<int>> targets(groups.size());
  std::vector<Index> token_seq;  // decoder row -> sequence index
  std::vector<std::pair<Index, Index>> rows_of_group;
  Index row = 0;
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const auto& g = groups[gi];
    const Index first_row = row;
    for (std::size_t i = 0; i < g.examples->size(); ++i) {
      const auto& ex = (*g.examples)[i];
      TokenSeq prefix{decoder_start(g.task)};
      prefix.insert(prefix.end(), ex.target.begin(), ex.target.end());
      for (std::size_t t = 0; t < prefix.size(); ++t) {
        token_seq.push_back(Index(prefixes.size()));
      }
      prefixes.push_back(std::move(prefix));
      memory_of.push_back(g.first_source + Index(i));
      targets[gi].insert(targets[gi].end(), ex.target.begin(), ex.target.end());
      targets[gi].push_back(Vocabulary::kEos);
      reference_reads_ += 1;
      row += Index(ex.target.size()) + 1;
    }
    rows_of_group.emplace_back(first_row, row - first_row);
  }
  const Tensor states = backbone_->decode(prefixes, enc, memory_of, rng);

  Tensor fused;
  if (lat) {
    const Index L = config_.latent_dim;
    std::vector<Tensor> blocks;
    for (const auto& g : groups) {
      const Index n = Index(g.examples->size());
      auto slot = [&](const std::optional<LatentSample>& z) {
        return z ? z->z : Tensor::zeros(Shape{n, L});
      };
      const std::optional<LatentSample> none;
      switch (g.task) {
        case Task::kMt:
          blocks.push_back(concat<double>({slot(none), slot(z_mt), slot(none)}));
          break;
        case Task::kMs:
          blocks.push_back(concat<double>({slot(none), slot(none), slot(z_ms)}));
          break;
        case Task::kCls: {
          const bool locals_direct = !lat->has_cls() || config_.ablation.flat_hierarchy;
          blocks.push_back(concat<double>({slot(z_cls),
                                           slot(locals_direct ? z_mt_cls : none),
                                           slot(locals_direct ? z_ms_cls : none)}));
          break;
        }
      }
    }
    Tensor per_sequence = concat_rows(blocks);
    fused = fuse_latent(states, take_rows(per_sequence, token_seq));
  } else {
    fused = fuse_latent(states, Tensor());
  }
  const Tensor logits = output_logits(fused);

  // 5. Loss assembly.
  Tensor nll[3] = {zero_scalar, zero_scalar, zero_scalar};
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const auto [first, count] = rows_of_group[gi];
    nll[int(groups[gi].task)] =
        cross_entropy(take_rows(logits, range_indices(first, count)), targets[gi]);
  }

  LossBreakdown out;
  out.kl_weight = kl_weight;
  out.kl_mt = kl[0].item();
  out.kl_ms = kl[1].item();
  out.kl_cls = kl[2].item();
  out.nll_mt = nll[0].item();
  out.nll_ms = nll[1].item();
  out.nll_cls = nll[2].item();
  check_finite(out.kl_mt, "kl_mt");
  check_finite(out.kl_ms, "kl_ms");
  check_finite(out.kl_cls, "kl_cls");
  check_finite(out.nll_mt, "nll_mt");
  check_finite(out.nll_ms, "nll_ms");
  check_finite(out.nll_cls, "nll_cls");

  Tensor nll_sum = add(add(nll[0], nll[1]), nll[2]);
  Tensor kl_sum = add(add(kl[0], kl[1]), kl[2]);
  out.objective = add(nll_sum, scale(kl_sum, kl_weight));
  out.total = out.objective.item();
  return out;
}

// ---------------------------------------------------------------------------
// Inference

class VhmStepScorer : public StepScorer {
 public:
  VhmStepScorer(const VhmModel& model, EncoderStates enc, MatrixXd fused,
                TokenId start)
      : model_(model), enc_(std::move(enc)), fused_(std::move(fused)), start_(start) {}

  MatrixXd log_probs(const std::vector<TokenSeq>& prefixes) override {
    NoGradGuard no_grad;
    std::vector<TokenSeq> inputs;
    inputs.reserve(prefixes.size());
    for (const auto& p : prefixes) {
      TokenSeq in{start_};
      in.insert(in.end(), p.begin(), p.end());
      inputs.push_back(std::move(in));
    }
    const Tensor states = model_.backbone_->decode(
        inputs, enc_, std::vector<Index>(inputs.size(), 0), nullptr);
    std::vector<Index> last;
    Index offset = 0;
    for (const auto& in : inputs) {
      offset += Index(in.size());
      last.push_back(offset - 1);
    }
    const Tensor top = take_rows(states, last);
    Tensor z = fused_.size() ? Tensor::from_matrix(fused_) : Tensor();
    const Tensor logits = model_.output_logits(model_.fuse_latent(top, z));
    return log_softmax_rows(logits.value());
  }

  Index vocab_size() const override { return model_.config().vocab_size; }
  TokenId eos() const override { return Vocabulary::kEos; }

 private:
  const VhmModel& model_;
  EncoderStates enc_;
  MatrixXd fused_;
  TokenId start_;
};

std::unique_ptr<StepScorer> VhmModel::make_scorer(const TokenSeq& article,
                                                  const MatrixXd& fused_latent,
                                                  TokenId start) const {
  NoGradGuard no_grad;
  if (article.empty()) throw EmptySequenceError("cannot summarize an empty article");
  if (fused_latent.size() != 0 &&
      (fused_latent.rows() != 1 || fused_latent.cols() != fused_width())) {
    throw ShapeError("make_scorer: latent row of width " +
                     std::to_string(fused_latent.cols()) + ", expected " +
                     std::to_string(fused_width()));
  }
  EncoderStates enc = backbone_->encode(article);
  return std::make_unique<VhmStepScorer>(*this, std::move(enc), fused_latent, start);
}

MatrixXd VhmModel::inference_latent(const TokenSeq& article,
                                    const InferenceOptions& options,
                                    std::vector<LatentPath>* sources) const {
  NoGradGuard no_grad;
  if (article.empty()) throw EmptySequenceError("cannot summarize an empty article");
  const LatentHierarchy* lat = latents_.get();
  if (!lat) return MatrixXd(0, 0);

  const EncoderStates enc = backbone_->encode(article);
  const Tensor h = segment_mean(enc.states, enc.segments);
  const Index L = config_.latent_dim;
  auto draw = [&](const DiagonalGaussian& g) {
    LatentSample s;
    if (options.sample_latents) {
      if (!options.rng) throw ContractError("sampled inference needs an rng");
      s = sample(g, standard_normal(g.mu.rows(), g.mu.cols(), *options.rng));
    } else {
      s = mean_sample(g);
    }
    if (sources) sources->push_back(s.source);
    return s;
  };

  std::optional<LatentSample> z_mt, z_ms, z_cls;
  if (lat->has_mt()) z_mt = draw(lat->prior_mt(h));
  if (lat->has_ms()) z_ms = draw(lat->prior_ms(h));
  if (lat->has_cls()) {
    z_cls = draw(lat->prior_cls(h, z_mt ? &*z_mt : nullptr, z_ms ? &*z_ms : nullptr));
  }
  MatrixXd row = MatrixXd::Zero(1, fused_width());
  const bool locals_direct = !lat->has_cls() || config_.ablation.flat_hierarchy;
  if (z_cls) row.middleCols(0, L) = z_cls->z.value();
  if (locals_direct && z_mt) row.middleCols(L, L) = z_mt->z.value();
  if (locals_direct && z_ms) row.middleCols(2 * L, L) = z_ms->z.value();
  return row;
}

InferenceResult VhmModel::infer(const TokenSeq& article, const DecodeConfig& config,
                                const InferenceOptions& options) const {
  InferenceResult result;
  result.fused_latent = inference_latent(article, options, &result.latent_sources);
  auto scorer = make_scorer(article, result.fused_latent);
  Hypothesis best = beam_search(*scorer, config);
  result.tokens = best.tokens;
  if (!result.tokens.empty() && result.tokens.back() == Vocabulary::kEos) {
    result.tokens.pop_back();
  }
  return result;
}

MatrixXd VhmModel::teacher_forced_log_probs(const TaskExample& example,
                                            const MatrixXd& fused_latent) const {
  NoGradGuard no_grad;
  const EncoderStates enc = backbone_->encode(example.source);
  TokenSeq prefix{decoder_start(example.task)};
  prefix.insert(prefix.end(), example.target.begin(), example.target.end());
  const Tensor states = backbone_->decode(prefix, enc);
  Tensor z = fused_latent.size() ? Tensor::from_matrix(fused_latent) : Tensor();
  return log_softmax_rows(output_logits(fuse_latent(states, z)).value());
}

}  // namespace vhm
