// Acceptance gate: one PASS/FAIL line per criterion.
//   acceptance            run every criterion
//   acceptance 3 5        run the listed criteria

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

#include "op_cases.hpp"
#include "oracles.hpp"
#include "vhm/experiment.hpp"
#include "vhm/training.hpp"

using namespace vhm;
using namespace vhm::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* format, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, format, a, b, c);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string join(const std::vector<double>& v) {
  std::string out;
  for (double x : v) out += (out.empty() ? "" : ", ") + fmt("%.4f", x);
  return out;
}

ModelConfig tiny_model(bool use_latents, double dropout = 0.0) {
  ModelConfig c;
  c.backbone.n_encoder_layers = 1;
  c.backbone.n_decoder_layers = 1;
  c.backbone.d_model = 8;
  c.backbone.n_heads = 2;
  c.backbone.d_ff = 16;
  c.backbone.max_len = 8;
  c.backbone.dropout = dropout;
  c.vocab_size = 12;
  c.latent_dim = 4;
  c.use_latents = use_latents;
  return c;
}

std::vector<TaskExample> random_examples(Task task, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_int_distribution<TokenId> token(5, 11);
  std::uniform_int_distribution<int> len(1, 5);
  std::vector<TaskExample> out;
  for (std::size_t i = 0; i < n; ++i) {
    TaskExample ex{task, {}, {}};
    for (int k = len(rng); k > 0; --k) ex.source.push_back(token(rng));
    for (int k = len(rng); k > 0; --k) ex.target.push_back(token(rng));
    out.push_back(ex);
  }
  return out;
}

TrainingCorpora tiny_corpora() {
  return {random_examples(Task::kMt, 30, 1), random_examples(Task::kMs, 30, 2),
          random_examples(Task::kCls, 30, 3), {}};
}

TrainingSchedule tiny_schedule(Index steps) {
  TrainingSchedule s;
  s.total_steps = steps;
  s.warmup_steps = 4;
  s.batch_size = 3;
  s.validate_every = 0;
  s.seed = 21;
  return s;
}

// 1. Gradient integrity.
Outcome gradient_integrity() {
  const auto start = std::chrono::steady_clock::now();
  double worst_op = 0.0;
  std::string worst_op_name;
  for (const auto& op : op_cases()) {
    const OpResult r = run_op_case(op, 25);
    if (r.worst >= worst_op) {
      worst_op = r.worst;
      worst_op_name = op.name + " " + r.where;
    }
  }
  const TaskBatch batch{
      {{Task::kMt, {5, 6, 7}, {9, 10, 11}}, {Task::kMt, {8, 5}, {11, 8}}},
      {{Task::kMs, {5, 7, 6, 8, 5}, {5, 6}}, {Task::kMs, {6, 6, 7, 8}, {7}}},
      {{Task::kCls, {7, 5, 8, 6, 6}, {10, 11}}, {Task::kCls, {5, 8, 8}, {9, 11, 11}}}};
  double worst_model = 0.0;
  std::string worst_model_name;
  for (bool latents : {true, false}) {
    VhmModel model(tiny_model(latents), 11);
    Rng rng(12);
    std::uniform_real_distribution<double> u(-0.3, 0.3);
    Leaves leaves;
    for (auto& p : model.parameters().params()) {
      for (Index i = 0; i < p.tensor.numel(); ++i) p.tensor.mutable_value().data()[i] += u(rng);
      leaves.push_back({p.name, p.tensor});
    }
    const LatentNoise noise = LatentNoise::draw(batch, 4, rng);
    const auto r = check_gradients(
        [&] { return model.forward_train(batch, noise, 0.7).objective; }, leaves, 1e-5, 1e-5);
    if (r.max_rel_error >= worst_model) {
      worst_model = r.max_rel_error;
      worst_model_name = r.worst;
    }
  }
  const double elapsed = seconds_since(start);
  return {worst_op < 1e-4 && worst_model < 1e-3 && elapsed < 120.0,
          fmt("per-op max rel %.2e (< 1e-4), full model max rel %.2e (< 1e-3), %.1f s (< 120 s)",
              worst_op, worst_model, elapsed) +
              "; worst op " + worst_op_name + "; worst model entry " + worst_model_name};
}

DiagonalGaussian gaussian(const MatrixXd& mu, const MatrixXd& sigma) {
  return {Tensor::from_matrix(mu), Tensor::from_matrix(sigma), LatentPath::kPrior};
}

// 2. KL correctness.
Outcome kl_correctness() {
  Rng rng(2024);
  std::uniform_real_distribution<double> mean(-1.0, 1.0), scale_dist(0.6, 1.6);
  const Index dim = 2;
  double worst_mc = 0.0;
  for (int pair = 0; pair < 20; ++pair) {
    MatrixXd mq(1, dim), sq(1, dim), mp(1, dim), sp(1, dim);
    for (Index j = 0; j < dim; ++j) {
      mq(0, j) = mean(rng);
      mp(0, j) = mean(rng);
      sq(0, j) = scale_dist(rng);
      sp(0, j) = scale_dist(rng);
    }
    const double closed = kl_divergence(gaussian(mq, sq), gaussian(mp, sp)).item();
    // E_q[ln q(x) - ln p(x)] from 10^6 draws of x ~ q.
    std::normal_distribution<double> n01(0.0, 1.0);
    double total = 0.0;
    const int draws = 1000000;
    for (int i = 0; i < draws; ++i) {
      double log_ratio = 0.0;
      for (Index j = 0; j < dim; ++j) {
        const double x = mq(0, j) + sq(0, j) * n01(rng);
        const double zq = (x - mq(0, j)) / sq(0, j);
        const double zp = (x - mp(0, j)) / sp(0, j);
        log_ratio += -std::log(sq(0, j)) - 0.5 * zq * zq + std::log(sp(0, j)) + 0.5 * zp * zp;
      }
      total += log_ratio;
    }
    worst_mc = std::max(worst_mc, std::abs(total / draws - closed));
  }

  std::uniform_real_distribution<double> wide_mean(-3.0, 3.0), wide_scale(0.05, 4.0);
  double min_kl = INFINITY, max_self = 0.0;
  for (int pair = 0; pair < 1000; ++pair) {
    MatrixXd mq(2, 3), sq(2, 3), mp(2, 3), sp(2, 3);
    for (Index i = 0; i < mq.size(); ++i) {
      mq.data()[i] = wide_mean(rng);
      mp.data()[i] = wide_mean(rng);
      sq.data()[i] = wide_scale(rng);
      sp.data()[i] = wide_scale(rng);
    }
    min_kl = std::min(min_kl, kl_divergence(gaussian(mq, sq), gaussian(mp, sp)).item());
    max_self = std::max(max_self, std::abs(kl_divergence(gaussian(mq, sq), gaussian(mq, sq)).item()));
  }
  return {worst_mc < 0.01 && min_kl >= 0.0 && max_self == 0.0,
          fmt("Monte Carlo max |diff| %.2e (< 0.01) over 20 pairs; min KL %.3e over 1000 pairs; "
              "max |KL(q,q)| %g",
              worst_mc, min_kl, max_self)};
}

// 3. ROUGE correctness.
Outcome rouge_correctness() {
  Rng rng(3);
  int mismatches = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const TokenSeq a = random_seq(rng, 8, 4);
    const TokenSeq b = random_seq(rng, 8, 4);
    for (int n = 1; n <= 4; ++n) {
      const RougeScore got = rouge_n(a, b, n), want = brute_rouge_n(a, b, n);
      mismatches += got.precision != want.precision || got.recall != want.recall ||
                    got.f1 != want.f1;
    }
    const double l = double(brute_lcs(a, b));
    const double p = a.empty() ? 0.0 : l / double(a.size());
    const double r = b.empty() ? 0.0 : l / double(b.size());
    const RougeScore got = rouge_l(a, b);
    mismatches += got.precision != p || got.recall != r ||
                  got.f1 != (p + r > 0 ? 2 * p * r / (p + r) : 0.0);
  }
  const RougeScore hand = rouge_n({1, 2}, {1, 2, 3}, 1);
  const RougeScore hand_l = rouge_l({1, 9, 2}, {1, 2});
  const bool hand_ok = hand.precision == 1.0 && hand.recall == 2.0 / 3.0 &&
                       std::abs(hand.f1 - 0.8) <= 1e-15 && hand_l.precision == 2.0 / 3.0 &&
                       hand_l.recall == 1.0 && std::abs(hand_l.f1 - 0.8) <= 1e-15;
  return {mismatches == 0 && hand_ok,
          fmt("%g mismatches over 200 pairs (ROUGE-1..4 and ROUGE-L); hand cases P=%g R=%.6f", mismatches,
              hand.precision, hand.recall) +
              fmt(" F1=%.17g", hand.f1)};
}

// 4. Beam-search correctness.
Outcome beam_correctness() {
  int wrong = 0;
  for (std::uint64_t draw = 1; draw <= 50; ++draw) {
    RandomScorer scorer(4, 1000 + draw, 1.0);
    for (double alpha : {0.0, 0.6}) {
      DecodeConfig c;
      c.max_len = 4;
      c.length_penalty = alpha;
      // Wide enough to keep every live prefix of length max_len - 1.
      c.beam_size = 64;
      const Hypothesis beam = beam_search(scorer, c);
      const Scored oracle = exhaustive_best(scorer, 4, alpha);
      wrong += beam.tokens != oracle.tokens || std::abs(beam.score - oracle.score) > 1e-12;
    }
  }
  int differ = 0;
  for (std::uint64_t input = 1; input <= 100; ++input) {
    RandomScorer scorer(6, 5000 + input);
    DecodeConfig c;
    c.beam_size = 1;
    c.length_penalty = 0.0;
    c.max_len = 8;
    const Hypothesis beam = beam_search(scorer, c);
    const Hypothesis greedy = greedy_decode(scorer, 8);
    differ += beam.tokens != greedy.tokens || beam.log_prob != greedy.log_prob;
  }
  return {wrong == 0 && differ == 0,
          fmt("%g of 100 exhaustive comparisons differ (50 draws x 2 penalties, vocab 4, max_len 4); "
              "%g of 100 beam-1 runs differ from greedy",
              wrong, differ)};
}

// 5. Inference purity.
Outcome inference_purity() {
  SyntheticConfig data;
  data.n_mt = data.n_ms = data.n_cls = 20;
  data.n_valid = 4;
  data.n_test = 30;
  data.seed = 5;
  const SyntheticCorpus corpus = gen_corpus(data);
  ModelConfig mc = tiny_model(true);
  mc.vocab_size = corpus.vocab.size();
  mc.backbone.max_len = 20;
  VhmModel model(mc, 6);
  // A few updates so the inference networks are not at initialization.
  TrainingSchedule s = tiny_schedule(5);
  Trainer trainer(model, {corpus.mt, corpus.ms, corpus.cls, {}}, s);
  for (int i = 0; i < 5; ++i) trainer.step();

  DecodeConfig decode;
  decode.beam_size = 3;
  decode.max_len = 6;
  const ModelAudit before = model.audit();
  const EvaluationReport original = evaluate_model(model, corpus.test, decode, {}, 10, 1);
  Rng rng(7);
  InferenceOptions sampled;
  sampled.sample_latents = true;
  sampled.rng = &rng;
  for (const auto& ex : corpus.test) model.infer(ex.source, decode, sampled);
  const ModelAudit after = model.audit();

  std::vector<TaskExample> mutated = corpus.test;
  for (auto& ex : mutated) ex.target = {corpus.vocab.target_token(1), corpus.vocab.target_token(2)};
  const EvaluationReport again = evaluate_model(model, mutated, decode, {}, 10, 1);
  bool identical = again.examples.size() == original.examples.size();
  for (std::size_t i = 0; identical && i < original.examples.size(); ++i) {
    identical = again.examples[i].output == original.examples[i].output;
  }
  const auto posterior = after.posterior_calls - before.posterior_calls;
  const auto reads = after.reference_reads - before.reference_reads;
  const auto priors = after.prior_calls - before.prior_calls;
  return {posterior == 0 && reads == 0 && priors > 0 && identical,
          fmt("%g recognition-network calls, %g reference reads, %g prior calls over 60 inferences",
              double(posterior), double(reads), double(priors)) +
              (identical ? "; outputs bit-identical after mutating references"
                         : "; outputs changed after mutating references")};
}

RunConfig desk_config(std::uint64_t seed) {
  RunConfig c;
  c.seed = seed;
  c.propagate_seed();
  c.validate();
  return c;
}

// 6. End-to-end learning.
Outcome end_to_end() {
  std::vector<double> em, minutes;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    RunConfig c = desk_config(seed);
    c.grid.eval_examples = 500;
    const SyntheticCorpus corpus = gen_corpus(c.data);
    const auto start = std::chrono::steady_clock::now();
    const GridRow row = run_grid_cell(c, corpus, {1.0, "vhm", seed}, "");
    minutes.push_back(seconds_since(start) / 60.0);
    em.push_back(row.exact_match);
    std::cout << "  seed " << seed << ": exact match " << row.exact_match << ", rouge1 "
              << row.rouge1 << ", " << minutes.back() << " min" << std::endl;
  }
  const double m = median(em);
  const double slowest = *std::max_element(minutes.begin(), minutes.end());
  return {m >= 0.9 && slowest <= 20.0,
          fmt("median exact match %.4f (>= 0.9) on 500 test documents; slowest run %.2f min (<= 20)", m,
              slowest) +
              "; per seed " + join(em)};
}

// 7. Mechanism value in the 1% cell.
Outcome mechanism_value(const fs::path& table_path) {
  RunConfig c = desk_config(1);
  c.grid.fractions = {0.01};
  c.grid.variants = {"vhm", "baseline", "no_locals"};
  c.grid.seeds = 3;
  c.grid.eval_examples = 500;
  const SyntheticCorpus corpus = gen_corpus(c.data);
  GridOptions options;
  options.on_row = [](const GridRow& r) {
    std::cout << "  " << r.cell.variant << " seed " << r.cell.seed << ": rouge1 " << r.rouge1
              << ", exact match " << r.exact_match << (r.ok ? "" : " failed: " + r.error)
              << std::endl;
  };
  const auto rows = run_experiment_grid(c, corpus, options);
  std::ofstream(table_path) << format_grid_table(rows, echo_config(c));
  std::map<std::string, std::vector<double>> r1;
  bool all_ok = true;
  Index cls = 0;
  for (const auto& r : rows) {
    all_ok = all_ok && r.ok;
    r1[r.cell.variant].push_back(r.rouge1);
    cls = r.cls_examples;
  }
  if (!all_ok) return {false, "some grid cells failed; see " + table_path.string()};
  const double vhm = median(r1["vhm"]), base = median(r1["baseline"]),
               no_locals = median(r1["no_locals"]);
  return {vhm >= base && vhm >= no_locals,
          fmt("median ROUGE-1 F1: vhm %.4f, baseline %.4f, no_locals %.4f", vhm, base, no_locals) +
              fmt(" (%g CLS examples); table ", double(cls)) + table_path.string()};
}

// 8. Annealing and objective identities.
Outcome objective_identities() {
  const TrainingSchedule desk;
  const Index anneal = desk.effective_anneal_steps();
  bool monotone = true;
  double prev = 0.0;
  for (Index s = 0; s <= desk.total_steps; ++s) {
    const double w = kl_weight(s, anneal);
    monotone = monotone && w >= prev && w >= 0.0 && w <= 1.0;
    prev = w;
  }
  const bool ends = kl_weight(0, anneal) == 0.0 && kl_weight(anneal, anneal) == 1.0;

  VhmModel model(tiny_model(true, 0.1), 3);
  TrainingSchedule s = tiny_schedule(100);
  s.anneal_steps = 50;
  Trainer trainer(model, tiny_corpora(), s);
  int broken = 0;
  for (int i = 0; i < 100; ++i) {
    const LossBreakdown l = trainer.step().loss;
    const double recomposed =
        (l.nll_mt + l.nll_ms + l.nll_cls) + (l.kl_mt + l.kl_ms + l.kl_cls) * l.kl_weight;
    broken += l.total != recomposed;
  }
  int zero_broken = 0;
  Rng rng(4);
  const TrainingCorpora data = tiny_corpora();
  for (int i = 0; i < 20; ++i) {
    TaskBatch batch;
    for (int k = 0; k < 3; ++k) {
      batch.mt.push_back(data.mt[rng() % data.mt.size()]);
      batch.ms.push_back(data.ms[rng() % data.ms.size()]);
      batch.cls.push_back(data.cls[rng() % data.cls.size()]);
    }
    NoGradGuard guard;
    const LossBreakdown l = model.forward_train(batch, LatentNoise::draw(batch, 4, rng), 0.0);
    zero_broken += l.total != (l.nll_mt + l.nll_ms + l.nll_cls);
  }
  return {monotone && ends && broken == 0 && zero_broken == 0,
          fmt("lambda(0)=%g, lambda(anneal)=%g, monotone on [0, 3000]: ", kl_weight(0, anneal),
              kl_weight(anneal, anneal)) +
              (monotone ? "yes" : "no") +
              fmt("; recomposition mismatches %g of 100 steps; lambda=0 mismatches %g of 20", broken,
                  zero_broken)};
}

// 9. Reproducibility.
Outcome reproducibility(const fs::path& scratch) {
  RunConfig c;
  c.seed = 9;
  c.propagate_seed();
  apply_config_text(c,
                    "data.n_mt=60\ndata.n_ms=60\ndata.n_cls=60\ndata.n_valid=4\ndata.n_test=8\n"
                    "model.encoder_layers=1\nmodel.decoder_layers=1\nmodel.d_model=16\n"
                    "model.heads=2\nmodel.d_ff=32\nmodel.max_len=20\nmodel.latent_dim=4\n"
                    "train.steps=20\ntrain.warmup=5\ntrain.batch_size=4\ndecode.beam=2\n"
                    "decode.max_len=6\neval.bootstrap=50\ngrid.fractions=0.1,0.5\n"
                    "grid.variants=vhm,baseline,no_locals\ngrid.seeds=2\ngrid.eval_examples=8\n",
                    "reproducibility");
  c.validate();
  auto table = [&] {
    const SyntheticCorpus corpus = gen_corpus(c.data);
    return format_grid_table(run_experiment_grid(c, corpus, {}), echo_config(c));
  };
  const std::string first = table();
  const bool tables_equal = table() == first;

  const std::string path = (scratch / "roundtrip.ckpt").string();
  const TrainingSchedule s = tiny_schedule(10);
  VhmModel a(tiny_model(true, 0.2), 5);
  Trainer ta(a, tiny_corpora(), s);
  for (int i = 0; i < 4; ++i) ta.step();
  ta.save_checkpoint(path, echo_config(c));
  ta.step();
  VhmModel b(tiny_model(true, 0.2), 77);
  Trainer tb(b, tiny_corpora(), s);
  tb.load_checkpoint(path);
  tb.step();
  bool params_equal = true;
  const auto& pa = a.parameters().params();
  const auto& pb = b.parameters().params();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    params_equal = params_equal && pa[i].tensor.value() == pb[i].tensor.value();
  }
  const bool moments_equal = ta.optimizer().first_moments() == tb.optimizer().first_moments() &&
                             ta.optimizer().second_moments() == tb.optimizer().second_moments();
  return {tables_equal && params_equal && moments_equal,
          std::string("results tables (12 cells) ") + (tables_equal ? "byte-identical" : "differ") +
              "; parameters after resume-and-step " + (params_equal ? "bit-identical" : "differ") +
              "; Adam moments " + (moments_equal ? "bit-identical" : "differ")};
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) {
    try {
      selected.push_back(std::stoi(argv[i]));
    } catch (const std::exception&) {
      std::cerr << "usage: acceptance [criterion 1-9 ...]\n";
      return 2;
    }
  }
  if (selected.empty()) selected = {1, 2, 3, 4, 5, 6, 7, 8, 9};

  const fs::path scratch = fs::temp_directory_path() / "vhm_acceptance";
  fs::create_directories(scratch);
  const fs::path table = fs::current_path() / "grid_fewshot_1pct.tsv";

  int failed = 0;
  for (int id : selected) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      switch (id) {
        case 1: o = gradient_integrity(); break;
        case 2: o = kl_correctness(); break;
        case 3: o = rouge_correctness(); break;
        case 4: o = beam_correctness(); break;
        case 5: o = inference_purity(); break;
        case 6: o = end_to_end(); break;
        case 7: o = mechanism_value(table); break;
        case 8: o = objective_identities(); break;
        case 9: o = reproducibility(scratch); break;
        default:
          std::cerr << "no criterion " << id << '\n';
          return 2;
      }
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << "criterion " << id << ": " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail
              << fmt("  [%.1f s]", seconds_since(start)) << std::endl;
  }
  fs::remove_all(scratch);
  return failed == 0 ? 0 : 1;
}
