#include "vhm/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "vhm/metrics.hpp"

namespace vhm {

const char* to_string(TaskMode mode) {
  return mode == TaskMode::kJoint ? "joint" : "rotation";
}

TaskMode parse_task_mode(const std::string& name) {
  if (name == "joint") return TaskMode::kJoint;
  if (name == "rotation") return TaskMode::kRotation;
  throw ConfigError("unknown task mode \"" + name + "\" (expected joint or rotation)");
}

Index TrainingSchedule::effective_anneal_steps() const {
  return anneal_steps < 0 ? total_steps / 2 : anneal_steps;
}

void TrainingSchedule::validate() const {
  if (total_steps < 1) throw ConfigError("train.steps must be at least 1");
  if (effective_anneal_steps() > total_steps) {
    throw ConfigError("train.anneal_steps must not exceed train.steps");
  }
  if (warmup_steps < 1) throw ConfigError("train.warmup must be at least 1");
  if (!(peak_lr > 0.0)) throw ConfigError("train.lr must be positive");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) throw ConfigError("train.beta1 must lie in [0, 1)");
  if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) throw ConfigError("train.beta2 must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("train.eps must be positive");
  if (batch_size < 1) throw ConfigError("train.batch_size must be at least 1");
  if (validate_every < 0) throw ConfigError("train.validate_every must be non-negative");
  if (valid_slice < 0) throw ConfigError("train.valid_slice must be non-negative");
}

double kl_weight(Index step, Index anneal_steps) {
  if (step < 0) throw ContractError("kl_weight: negative step");
  if (anneal_steps <= 0) return 1.0;
  return std::min(1.0, double(step) / double(anneal_steps));
}

double learning_rate(Index step, const TrainingSchedule& schedule) {
  const double s = double(step + 1);
  const double w = double(schedule.warmup_steps);
  return schedule.peak_lr * std::min(s / w, std::sqrt(w / s));
}

double clip_grad_norm(std::vector<Parameter>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (p.tensor.has_grad()) sq += p.tensor.grad().squaredNorm();
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& p : params) {
      if (p.tensor.has_grad()) p.tensor.node()->grad *= factor;
    }
  }
  return norm;
}

void Adam::step(std::vector<Parameter>& params, double lr) {
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.push_back(MatrixXd::Zero(p.tensor.value().rows(), p.tensor.value().cols()));
      v_.push_back(m_.back());
    }
  }
  if (m_.size() != params.size()) {
    throw ContractError("Adam: parameter list changed between steps");
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, double(t_));
  const double c2 = 1.0 - std::pow(beta2_, double(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& node = *params[i].tensor.node();
    if (node.grad.size() == 0) node.grad = MatrixXd::Zero(node.value.rows(), node.value.cols());
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * node.grad;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * node.grad.cwiseProduct(node.grad);
    node.value.array() -=
        lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

void Adam::set_state(Index t, std::vector<MatrixXd> m, std::vector<MatrixXd> v) {
  t_ = t;
  m_ = std::move(m);
  v_ = std::move(v);
}

BatchSampler::BatchSampler(std::size_t size, Rng rng) : size_(size), rng_(rng) {
  if (size_ > 0) reshuffle();
}

void BatchSampler::reshuffle() {
  order_.resize(size_);
  for (std::size_t i = 0; i < size_; ++i) order_[i] = i;
  std::shuffle(order_.begin(), order_.end(), rng_);
  position_ = 0;
}

std::vector<std::size_t> BatchSampler::next(std::size_t count) {
  if (size_ == 0) throw DataError("batch requested from an empty dataset");
  std::vector<std::size_t> out;
  out.reserve(count);
  while (out.size() < count) {
    if (position_ == order_.size()) reshuffle();
    out.push_back(order_[position_++]);
  }
  return out;
}

void BatchSampler::save(std::ostream& out) const {
  out << rng_ << '\n' << size_ << ' ' << position_;
  for (auto i : order_) out << ' ' << i;
  out << '\n';
}

void BatchSampler::load(std::istream& in) {
  in >> rng_ >> size_ >> position_;
  order_.assign(size_, 0);
  for (auto& i : order_) in >> i;
  if (!in) throw IoError("checkpoint: malformed sampler state");
}

void FewShotSpec::validate() const {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ConfigError("fewshot.fraction must lie in (0, 1]");
  }
}

std::vector<TaskExample> sample_fewshot(const std::vector<TaskExample>& cls_set,
                                        const FewShotSpec& spec) {
  spec.validate();
  if (cls_set.empty()) throw DataError("few-shot sample of an empty CLS set");
  if (spec.fraction == 1.0) return cls_set;
  const auto n = std::max<std::size_t>(
      1, std::size_t(std::llround(spec.fraction * double(cls_set.size()))));
  // Stream keyed by subset size so different fractions draw independently.
  Rng rng = make_stream(spec.seed, 0xF5 ^ (std::uint64_t(n) << 8));
  std::vector<TaskExample> out;
  out.reserve(n);
  std::sample(cls_set.begin(), cls_set.end(), std::back_inserter(out), n, rng);
  return out;
}

std::string format_record(const StepRecord& r) {
  char buf[512];
  const auto& l = r.loss;
  std::snprintf(buf, sizeof buf,
                "step=%ld total=%.9g nll_mt=%.9g nll_ms=%.9g nll_cls=%.9g "
                "kl_mt=%.9g kl_ms=%.9g kl_cls=%.9g lambda=%.6g lr=%.6g "
                "grad_norm=%.6g wall_ms=%.1f",
                long(r.step), l.total, l.nll_mt, l.nll_ms, l.nll_cls, l.kl_mt,
                l.kl_ms, l.kl_cls, l.kl_weight, r.learning_rate, r.grad_norm,
                r.wall_ms);
  return buf;
}

bool ValidationScore::better_than(const ValidationScore& other) const {
  if (exact_match != other.exact_match) return exact_match > other.exact_match;
  return token_accuracy > other.token_accuracy;
}

Trainer::Trainer(VhmModel& model, TrainingCorpora corpora,
                 const TrainingSchedule& schedule)
    : model_(model),
      corpora_(std::move(corpora)),
      schedule_(schedule),
      adam_(schedule.adam_beta1, schedule.adam_beta2, schedule.adam_eps) {
  schedule_.validate();
  if (schedule_.mode == TaskMode::kRotation && model_.latents()) {
    throw ConfigError(
        "train.mode=rotation is only defined for the no-latent baseline "
        "(model.use_latents=false)");
  }
  if (corpora_.mt.empty() && corpora_.ms.empty() && corpora_.cls.empty()) {
    throw DataError("training corpora are all empty");
  }
  sampler_mt_ = BatchSampler(corpora_.mt.size(), make_stream(schedule_.seed, 0x101));
  sampler_ms_ = BatchSampler(corpora_.ms.size(), make_stream(schedule_.seed, 0x102));
  sampler_cls_ = BatchSampler(corpora_.cls.size(), make_stream(schedule_.seed, 0x103));
  noise_rng_ = make_stream(schedule_.seed, 0x201);
  dropout_rng_ = make_stream(schedule_.seed, 0x202);
}

namespace {

void fill(std::vector<TaskExample>& out, const std::vector<TaskExample>& data,
          BatchSampler& sampler, std::size_t count) {
  for (auto i : sampler.next(count)) out.push_back(data[i]);
}

}  // namespace

TaskBatch Trainer::draw_batch() {
  TaskBatch batch;
  const auto b = std::size_t(schedule_.batch_size);
  if (schedule_.mode == TaskMode::kJoint) {
    if (!corpora_.mt.empty()) fill(batch.mt, corpora_.mt, sampler_mt_, b);
    if (!corpora_.ms.empty()) fill(batch.ms, corpora_.ms, sampler_ms_, b);
    if (!corpora_.cls.empty()) fill(batch.cls, corpora_.cls, sampler_cls_, b);
    return batch;
  }
  // Strict rotation over the non-empty tasks.
  std::vector<Task> tasks;
  if (!corpora_.mt.empty()) tasks.push_back(Task::kMt);
  if (!corpora_.ms.empty()) tasks.push_back(Task::kMs);
  if (!corpora_.cls.empty()) tasks.push_back(Task::kCls);
  switch (tasks[std::size_t(step_) % tasks.size()]) {
    case Task::kMt:
      fill(batch.mt, corpora_.mt, sampler_mt_, b);
      break;
    case Task::kMs:
      fill(batch.ms, corpora_.ms, sampler_ms_, b);
      break;
    case Task::kCls:
      fill(batch.cls, corpora_.cls, sampler_cls_, b);
      break;
  }
  return batch;
}

TaskBatch Trainer::peek_batch() const {
  Trainer copy = *this;
  return copy.draw_batch();
}

StepRecord Trainer::step() {
  const auto start = std::chrono::steady_clock::now();
  StepRecord rec;
  rec.step = step_;
  const TaskBatch batch = draw_batch();
  const LatentNoise noise =
      model_.latents() ? LatentNoise::draw(batch, model_.config().latent_dim, noise_rng_)
                       : LatentNoise::zeros(batch, model_.config().latent_dim);
  const double lambda = kl_weight(step_, schedule_.effective_anneal_steps());
  auto& params = model_.parameters().params();
  model_.parameters().zero_grad();
  try {
    rec.loss = model_.forward_train(batch, noise, lambda, &dropout_rng_);
  } catch (const NumericsError& e) {
    throw NumericsError(std::string(e.what()) + " at step " + std::to_string(step_));
  }
  rec.loss.objective.backward();
  rec.loss.objective = Tensor();
  rec.grad_norm = clip_grad_norm(params, schedule_.clip_norm);
  if (!std::isfinite(rec.grad_norm)) {
    throw NumericsError("non-finite gradient norm at step " + std::to_string(step_));
  }
  rec.learning_rate = learning_rate(step_, schedule_);
  adam_.step(params, rec.learning_rate);
  model_.parameters().zero_grad();
  ++step_;
  rec.wall_ms = std::chrono::duration<double, std::milli>(
                    std::chrono::steady_clock::now() - start)
                    .count();
  return rec;
}

ValidationScore Trainer::validate(const DecodeConfig& decode) const {
  const std::size_t n =
      std::min(corpora_.valid.size(), std::size_t(schedule_.valid_slice));
  if (n == 0) throw DataError("validation requested without a validation set");
  std::vector<TokenSeq> outputs, references;
  for (std::size_t i = 0; i < n; ++i) {
    outputs.push_back(model_.infer(corpora_.valid[i].source, decode).tokens);
    references.push_back(corpora_.valid[i].target);
  }
  return {exact_match_rate(outputs, references), token_accuracy(outputs, references)};
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr const char* kCheckpointTag = "vhm-checkpoint 1";

void write_matrix(std::ostream& out, const MatrixXd& m) {
  char buf[40];
  out << m.rows() << ' ' << m.cols() << '\n';
  for (Index i = 0; i < m.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%a", m.data()[i]);
    out << (i ? " " : "") << buf;
  }
  out << '\n';
}

MatrixXd read_matrix(std::istream& in) {
  Index rows = 0, cols = 0;
  in >> rows >> cols;
  if (!in || rows < 0 || cols < 0) throw IoError("checkpoint: malformed matrix header");
  MatrixXd m(rows, cols);
  std::string word;
  for (Index i = 0; i < m.size(); ++i) {
    in >> word;
    char* end = nullptr;
    m.data()[i] = std::strtod(word.c_str(), &end);
    if (!in || end == word.c_str() || *end != '\0') {
      throw IoError("checkpoint: malformed value \"" + word + "\"");
    }
  }
  return m;
}

void expect(std::istream& in, const std::string& word) {
  std::string got;
  in >> got;
  if (got != word) {
    throw IoError("checkpoint: expected \"" + word + "\", found \"" + got + "\"");
  }
}

std::ifstream open_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint " + path);
  std::string tag;
  std::getline(in, tag);
  if (tag != kCheckpointTag) {
    throw IoError("checkpoint " + path + ": unsupported format tag \"" + tag + "\"");
  }
  return in;
}

CheckpointHeader read_header(std::istream& in) {
  CheckpointHeader h;
  expect(in, "config");
  std::size_t lines = 0;
  in >> lines;
  std::string line;
  std::getline(in, line);
  for (std::size_t i = 0; i < lines; ++i) {
    std::getline(in, line);
    h.config_echo += line + '\n';
  }
  expect(in, "step");
  in >> h.step;
  if (!in) throw IoError("checkpoint: malformed header");
  return h;
}

void read_parameters(std::istream& in, ParameterStore& store) {
  expect(in, "params");
  std::size_t count = 0;
  in >> count;
  auto& params = store.params();
  if (count != params.size()) {
    throw IoError("checkpoint holds " + std::to_string(count) +
                  " parameters, model has " + std::to_string(params.size()));
  }
  for (auto& p : params) {
    std::string name;
    in >> name;
    if (name != p.name) {
      throw IoError("checkpoint parameter \"" + name + "\" where \"" + p.name +
                    "\" was expected");
    }
    MatrixXd value = read_matrix(in);
    auto& node = *p.tensor.node();
    if (value.rows() != node.value.rows() || value.cols() != node.value.cols()) {
      throw IoError("checkpoint parameter \"" + name + "\" has the wrong shape");
    }
    node.value = std::move(value);
  }
}

}  // namespace

void Trainer::save_checkpoint(const std::string& path,
                              const std::string& config_echo) const {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw IoError("cannot write checkpoint " + path);
    const auto lines = std::count(config_echo.begin(), config_echo.end(), '\n') +
                       ((config_echo.empty() || config_echo.back() == '\n') ? 0 : 1);
    out << kCheckpointTag << '\n' << "config " << lines << '\n' << config_echo;
    if (!config_echo.empty() && config_echo.back() != '\n') out << '\n';
    out << "step " << step_ << '\n';
    const auto& params = model_.parameters().params();
    out << "params " << params.size() << '\n';
    for (const auto& p : params) {
      out << p.name << ' ';
      write_matrix(out, p.tensor.value());
    }
    out << "adam " << adam_.steps() << ' ' << adam_.first_moments().size() << '\n';
    for (std::size_t i = 0; i < adam_.first_moments().size(); ++i) {
      write_matrix(out, adam_.first_moments()[i]);
      write_matrix(out, adam_.second_moments()[i]);
    }
    out << "sampler_mt ";
    sampler_mt_.save(out);
    out << "sampler_ms ";
    sampler_ms_.save(out);
    out << "sampler_cls ";
    sampler_cls_.save(out);
    out << "noise_rng " << noise_rng_ << '\n';
    out << "dropout_rng " << dropout_rng_ << '\n';
    out << "end\n";
    if (!out) throw IoError("failed writing checkpoint " + path);
  }
  std::filesystem::rename(tmp, path);
}

void Trainer::load_checkpoint(const std::string& path) {
  std::ifstream in = open_checkpoint(path);
  const CheckpointHeader header = read_header(in);
  read_parameters(in, model_.parameters());
  expect(in, "adam");
  Index t = 0;
  std::size_t count = 0;
  in >> t >> count;
  std::vector<MatrixXd> m, v;
  for (std::size_t i = 0; i < count; ++i) {
    m.push_back(read_matrix(in));
    v.push_back(read_matrix(in));
  }
  adam_.set_state(t, std::move(m), std::move(v));
  expect(in, "sampler_mt");
  sampler_mt_.load(in);
  expect(in, "sampler_ms");
  sampler_ms_.load(in);
  expect(in, "sampler_cls");
  sampler_cls_.load(in);
  expect(in, "noise_rng");
  in >> noise_rng_;
  expect(in, "dropout_rng");
  in >> dropout_rng_;
  expect(in, "end");
  step_ = header.step;
}

CheckpointHeader read_checkpoint_header(const std::string& path) {
  std::ifstream in = open_checkpoint(path);
  return read_header(in);
}

void load_parameters(VhmModel& model, const std::string& path) {
  std::ifstream in = open_checkpoint(path);
  read_header(in);
  read_parameters(in, model.parameters());
}

TrainResult train(VhmModel& model, const TrainingCorpora& corpora,
                  const TrainingSchedule& schedule, const TrainOptions& options) {
  Trainer trainer(model, corpora, schedule);
  TrainResult result;
  const bool checkpoints = !options.checkpoint_dir.empty();
  if (checkpoints) std::filesystem::create_directories(options.checkpoint_dir);
  const auto ckpt = [&](const char* name) {
    return (std::filesystem::path(options.checkpoint_dir) / name).string();
  };
  const bool can_validate = schedule.validate_every > 0 && !corpora.valid.empty() &&
                            schedule.valid_slice > 0;
  while (trainer.steps_done() < schedule.total_steps) {
    StepRecord rec = trainer.step();
    if (options.log) *options.log << format_record(rec) << '\n';
    result.records.push_back(rec);
    const Index done = trainer.steps_done();
    if (can_validate &&
        (done % schedule.validate_every == 0 || done == schedule.total_steps)) {
      const ValidationScore score = trainer.validate(options.decode);
      if (!result.best || score.better_than(*result.best)) {
        result.best = score;
        result.best_step = done;
        if (checkpoints) trainer.save_checkpoint(ckpt("best.ckpt"), options.config_echo);
      }
    }
    if (options.on_step && !options.on_step(rec)) break;
  }
  if (checkpoints) trainer.save_checkpoint(ckpt("last.ckpt"), options.config_echo);
  if (options.log) options.log->flush();
  return result;
}

}  // namespace vhm
