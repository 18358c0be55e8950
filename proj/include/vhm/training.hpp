#pragma once

// Optimization loop: per-step multi-task batches, Adam with warmup and
// inverse-sqrt decay, linear KL annealing, few-shot subsetting and
// checkpointing of the complete training state.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "vhm/data.hpp"
#include "vhm/decoding.hpp"
#include "vhm/model.hpp"
#include "vhm/random.hpp"

namespace vhm {

enum class TaskMode {
  kJoint,     // one batch per task, losses summed in a single objective
  kRotation,  // one task per step, cycling MT, MS, CLS (no-latent baseline only)
};

const char* to_string(TaskMode mode);
TaskMode parse_task_mode(const std::string& name);

struct TrainingSchedule {
  Index total_steps = 3000;
  Index anneal_steps = -1;  // negative: half of total_steps
  Index warmup_steps = 400;
  double peak_lr = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.998;
  double adam_eps = 1e-9;
  double clip_norm = 1.0;  // <= 0 disables clipping
  Index batch_size = 16;   // examples per task per step
  TaskMode mode = TaskMode::kJoint;
  Index validate_every = 500;  // 0 disables periodic validation
  Index valid_slice = 100;
  std::uint64_t seed = 1;

  Index effective_anneal_steps() const;
  void validate() const;
};

// min(1, step / anneal_steps); 1 for every step when anneal_steps is 0.
double kl_weight(Index step, Index anneal_steps);

// peak * min((step + 1) / warmup, sqrt(warmup / (step + 1))).
double learning_rate(Index step, const TrainingSchedule& schedule);

// Scales every gradient so the global L2 norm is at most max_norm and
// returns the norm before scaling.
double clip_grad_norm(std::vector<Parameter>& params, double max_norm);

class Adam {
 public:
  Adam(double beta1, double beta2, double eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  // theta -= lr * m_hat / (sqrt(v_hat) + eps) with bias-corrected moments.
  void step(std::vector<Parameter>& params, double lr);

  Index steps() const { return t_; }
  const std::vector<MatrixXd>& first_moments() const { return m_; }
  const std::vector<MatrixXd>& second_moments() const { return v_; }
  void set_state(Index t, std::vector<MatrixXd> m, std::vector<MatrixXd> v);

 private:
  double beta1_, beta2_, eps_;
  Index t_ = 0;
  std::vector<MatrixXd> m_, v_;
};

// Epoch-wise shuffled index stream over a dataset of fixed size.
class BatchSampler {
 public:
  BatchSampler() = default;
  BatchSampler(std::size_t size, Rng rng);

  std::vector<std::size_t> next(std::size_t count);
  std::size_t size() const { return size_; }

  void save(std::ostream& out) const;
  void load(std::istream& in);

 private:
  void reshuffle();

  std::size_t size_ = 0;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t position_ = 0;
};

struct FewShotSpec {
  double fraction = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

// Uniform draw without replacement of max(1, round(fraction * N)) examples,
// kept in their original relative order. Draws for different fractions are
// independent, so smaller subsets need not nest inside larger ones.
std::vector<TaskExample> sample_fewshot(const std::vector<TaskExample>& cls_set,
                                        const FewShotSpec& spec);

struct TrainingCorpora {
  std::vector<TaskExample> mt;
  std::vector<TaskExample> ms;
  std::vector<TaskExample> cls;
  std::vector<TaskExample> valid;
};

struct StepRecord {
  Index step = 0;
  LossBreakdown loss;
  double learning_rate = 0.0;
  double grad_norm = 0.0;
  double wall_ms = 0.0;
};

// step=N total=... kl_mt=... one record per line.
std::string format_record(const StepRecord& record);

struct ValidationScore {
  double exact_match = 0.0;
  double token_accuracy = 0.0;

  bool better_than(const ValidationScore& other) const;
};

// Owns the optimizer, samplers and noise streams for one model.
class Trainer {
 public:
  Trainer(VhmModel& model, TrainingCorpora corpora, const TrainingSchedule& schedule);

  Index steps_done() const { return step_; }
  const TrainingSchedule& schedule() const { return schedule_; }
  const TrainingCorpora& corpora() const { return corpora_; }

  // The batch the next call to step() will consume.
  TaskBatch peek_batch() const;
  StepRecord step();

  ValidationScore validate(const DecodeConfig& decode) const;

  // Complete state: parameters, Adam moments, samplers, noise streams, step.
  void save_checkpoint(const std::string& path, const std::string& config_echo) const;
  void load_checkpoint(const std::string& path);

  Adam& optimizer() { return adam_; }

 private:
  TaskBatch draw_batch();

  VhmModel& model_;
  TrainingCorpora corpora_;
  TrainingSchedule schedule_;
  Adam adam_;
  BatchSampler sampler_mt_, sampler_ms_, sampler_cls_;
  Rng noise_rng_, dropout_rng_;
  Index step_ = 0;
};

struct TrainOptions {
  DecodeConfig decode;
  std::string checkpoint_dir;  // empty: no checkpoint files
  std::string config_echo;
  std::ostream* log = nullptr;
  // Called after every step; returning false stops training early.
  std::function<bool(const StepRecord&)> on_step;
};

struct TrainResult {
  std::vector<StepRecord> records;
  std::optional<ValidationScore> best;
  Index best_step = -1;
};

TrainResult train(VhmModel& model, const TrainingCorpora& corpora,
                  const TrainingSchedule& schedule, const TrainOptions& options);

// Checkpoint I/O shared by the trainer and the read-only commands.
struct CheckpointHeader {
  std::string config_echo;
  Index step = 0;
};

CheckpointHeader read_checkpoint_header(const std::string& path);
// Loads only the parameter values into a model built from the same config.
void load_parameters(VhmModel& model, const std::string& path);

}  // namespace vhm
