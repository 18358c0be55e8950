#include "vhm/experiment.hpp"

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

namespace vhm {

EvaluationReport evaluate_model(const VhmModel& model,
                                const std::vector<TaskExample>& examples,
                                const DecodeConfig& decode,
                                const InferenceOptions& options,
                                int bootstrap_resamples, std::uint64_t seed) {
  if (examples.empty()) throw DataError("evaluation over an empty example set");
  EvaluationReport report;
  std::vector<double> r1, r2, rl, em, acc;
  for (const auto& ex : examples) {
    ExampleScore s;
    s.output = model.infer(ex.source, decode, options).tokens;
    s.reference = ex.target;
    s.rouge1 = rouge_n(s.output, s.reference, 1).f1;
    s.rouge2 = rouge_n(s.output, s.reference, 2).f1;
    s.rouge_l = rouge_l(s.output, s.reference).f1;
    s.exact = s.output == s.reference ? 1.0 : 0.0;
    s.token_accuracy = token_accuracy({s.output}, {s.reference});
    r1.push_back(s.rouge1);
    r2.push_back(s.rouge2);
    rl.push_back(s.rouge_l);
    em.push_back(s.exact);
    acc.push_back(s.token_accuracy);
    report.examples.push_back(std::move(s));
  }
  auto& m = report.summary;
  m.rouge1 = bootstrap_interval(r1, bootstrap_resamples, seed);
  m.rouge2 = bootstrap_interval(r2, bootstrap_resamples, seed);
  m.rouge_l = bootstrap_interval(rl, bootstrap_resamples, seed);
  m.exact_match = bootstrap_interval(em, bootstrap_resamples, seed);
  m.token_accuracy = bootstrap_interval(acc, bootstrap_resamples, seed);
  return report;
}

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void preamble(std::ostream& out, const std::string& config_echo) {
  std::istringstream in(config_echo);
  std::string line;
  while (std::getline(in, line)) out << "# " << line << '\n';
}

}  // namespace

void write_report(std::ostream& out, const EvaluationReport& report,
                  const Vocabulary& vocab, const std::string& config_echo) {
  preamble(out, config_echo);
  out << "metric\tmean\tlower95\tupper95\n";
  const auto& m = report.summary;
  for (const auto& [name, iv] :
       {std::pair{"rouge1_f1", m.rouge1}, std::pair{"rouge2_f1", m.rouge2},
        std::pair{"rougeL_f1", m.rouge_l}, std::pair{"exact_match", m.exact_match},
        std::pair{"token_accuracy", m.token_accuracy}}) {
    out << name << '\t' << num(iv.mean) << '\t' << num(iv.lower) << '\t'
        << num(iv.upper) << '\n';
  }
  out << "\nid\trouge1_f1\trouge2_f1\trougeL_f1\texact\ttoken_accuracy\toutput\treference\n";
  for (std::size_t i = 0; i < report.examples.size(); ++i) {
    const auto& s = report.examples[i];
    out << i << '\t' << num(s.rouge1) << '\t' << num(s.rouge2) << '\t'
        << num(s.rouge_l) << '\t' << num(s.exact) << '\t' << num(s.token_accuracy)
        << '\t' << vocab.decode(s.output) << '\t' << vocab.decode(s.reference) << '\n';
  }
}

Variant variant_by_name(const std::string& name) {
  Variant v;
  v.name = name;
  if (name == "vhm") return v;
  if (name == "baseline") {
    v.use_latents = false;
  } else if (name == "no_zmt") {
    v.ablation.drop_z_mt = true;
  } else if (name == "no_zms") {
    v.ablation.drop_z_ms = true;
  } else if (name == "no_locals") {
    v.ablation.drop_z_mt = true;
    v.ablation.drop_z_ms = true;
  } else if (name == "no_global") {
    v.ablation.drop_global = true;
  } else if (name == "flat") {
    v.ablation.flat_hierarchy = true;
  } else {
    throw ConfigError("unknown grid variant \"" + name + "\"");
  }
  return v;
}

std::vector<GridCell> grid_cells(const RunConfig& config) {
  std::vector<GridCell> cells;
  for (double f : config.grid.fractions) {
    for (const auto& v : config.grid.variants) {
      variant_by_name(v);
      for (Index s = 0; s < config.grid.seeds; ++s) {
        cells.push_back({f, v, config.seed + std::uint64_t(s)});
      }
    }
  }
  return cells;
}

GridRow run_grid_cell(const RunConfig& config, const SyntheticCorpus& corpus,
                      const GridCell& cell, const std::string& cell_dir) {
  GridRow row;
  row.cell = cell;
  const Variant variant = variant_by_name(cell.variant);
  RunConfig c = config;
  c.seed = cell.seed;
  c.propagate_seed();
  c.use_latents = variant.use_latents;
  c.ablation = variant.ablation;
  c.fewshot.fraction = cell.fraction;
  c.train.validate_every = 0;
  if (c.train.mode == TaskMode::kRotation && c.use_latents) c.train.mode = TaskMode::kJoint;
  c.validate();

  TrainingCorpora corpora{corpus.mt, corpus.ms, sample_fewshot(corpus.cls, c.fewshot), {}};
  row.cls_examples = Index(corpora.cls.size());
  VhmModel model(c.model_config(corpus.vocab.size()), make_stream(c.seed, 0x301)());

  std::ofstream log;
  TrainOptions options;
  options.decode = c.decode;
  if (!cell_dir.empty()) {
    std::filesystem::create_directories(cell_dir);
    std::ofstream(cell_dir + "/config.echo") << echo_config(c);
    log.open(cell_dir + "/train.log");
    options.log = &log;
  }
  train(model, corpora, c.train, options);

  std::vector<TaskExample> test = corpus.test;
  const Index n = c.grid.eval_examples;
  if (n > 0 && Index(test.size()) > n) test.resize(std::size_t(n));
  InferenceOptions inference;
  Rng latent_rng = make_stream(c.seed, 0x401);
  if (c.sample_latents) {
    inference.sample_latents = true;
    inference.rng = &latent_rng;
  }
  const EvaluationReport report = evaluate_model(model, test, c.decode, inference,
                                                 c.bootstrap_resamples, c.seed);
  if (!cell_dir.empty()) {
    std::ofstream out(cell_dir + "/metrics.tsv");
    write_report(out, report, corpus.vocab, echo_config(c));
  }
  row.ok = true;
  row.rouge1 = report.summary.rouge1.mean;
  row.rouge2 = report.summary.rouge2.mean;
  row.rouge_l = report.summary.rouge_l.mean;
  row.exact_match = report.summary.exact_match.mean;
  row.token_accuracy = report.summary.token_accuracy.mean;
  return row;
}

std::vector<GridRow> run_experiment_grid(const RunConfig& config,
                                         const SyntheticCorpus& corpus,
                                         const GridOptions& options) {
  config.validate();
  const std::vector<GridCell> cells = grid_cells(config);
  std::vector<GridRow> rows(cells.size());
  std::atomic<std::size_t> next{0};
  std::mutex report_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      const GridCell& cell = cells[i];
      std::string dir;
      if (!options.out_dir.empty()) {
        char name[128];
        std::snprintf(name, sizeof name, "f%g_%s_s%llu", cell.fraction,
                      cell.variant.c_str(), static_cast<unsigned long long>(cell.seed));
        dir = (std::filesystem::path(options.out_dir) / "cells" / name).string();
      }
      try {
        rows[i] = run_grid_cell(config, corpus, cell, dir);
      } catch (const std::exception& e) {
        rows[i] = GridRow{};
        rows[i].cell = cell;
        rows[i].error = e.what();
      }
      if (options.on_row) {
        std::lock_guard<std::mutex> lock(report_mutex);
        options.on_row(rows[i]);
      }
    }
  };
  const auto jobs = std::size_t(std::max<Index>(1, config.grid.jobs));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (std::size_t j = 0; j < std::min(jobs, cells.size()); ++j) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  return rows;
}

std::string format_grid_table(const std::vector<GridRow>& rows,
                              const std::string& config_echo) {
  std::ostringstream out;
  preamble(out, config_echo);
  out << "fraction\tvariant\tseed\tcls_examples\tstatus\trouge1_f1\trouge2_f1\t"
         "rougeL_f1\texact_match\ttoken_accuracy\n";
  for (const auto& r : rows) {
    char frac[32];
    std::snprintf(frac, sizeof frac, "%g", r.cell.fraction);
    out << frac << '\t' << r.cell.variant << '\t' << r.cell.seed << '\t'
        << r.cls_examples << '\t';
    if (r.ok) {
      out << "ok\t" << num(r.rouge1) << '\t' << num(r.rouge2) << '\t' << num(r.rouge_l)
          << '\t' << num(r.exact_match) << '\t' << num(r.token_accuracy) << '\n';
    } else {
      std::string msg = r.error;
      for (char& ch : msg) {
        if (ch == '\t' || ch == '\n') ch = ' ';
      }
      out << "failed: " << msg << "\t-\t-\t-\t-\t-\n";
    }
  }
  return out.str();
}

}  // namespace vhm
