#pragma once

// Corpus-level evaluation reports and the few-shot by variant by seed grid.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "vhm/config.hpp"
#include "vhm/metrics.hpp"
#include "vhm/model.hpp"

namespace vhm {

struct ExampleScore {
  TokenSeq output;
  TokenSeq reference;
  double rouge1 = 0.0;
  double rouge2 = 0.0;
  double rouge_l = 0.0;
  double exact = 0.0;
  double token_accuracy = 0.0;
};

struct MetricSummary {
  Interval rouge1, rouge2, rouge_l, exact_match, token_accuracy;
};

struct EvaluationReport {
  std::vector<ExampleScore> examples;
  MetricSummary summary;
};

// Decodes every example through the prior path and scores F1 and oracle
// agreement against its target.
EvaluationReport evaluate_model(const VhmModel& model,
                                const std::vector<TaskExample>& examples,
                                const DecodeConfig& decode,
                                const InferenceOptions& options,
                                int bootstrap_resamples, std::uint64_t seed);

// Tab-separated report: '#' config preamble, corpus summary, one row per example.
void write_report(std::ostream& out, const EvaluationReport& report,
                  const Vocabulary& vocab, const std::string& config_echo);

struct Variant {
  std::string name;
  bool use_latents = true;
  AblationFlags ablation;
};

// vhm, baseline, no_zmt, no_zms, no_locals, no_global, flat.
Variant variant_by_name(const std::string& name);

struct GridCell {
  double fraction = 1.0;
  std::string variant;
  std::uint64_t seed = 0;
};

struct GridRow {
  GridCell cell;
  bool ok = false;
  std::string error;
  Index cls_examples = 0;
  double rouge1 = 0.0;
  double rouge2 = 0.0;
  double rouge_l = 0.0;
  double exact_match = 0.0;
  double token_accuracy = 0.0;
};

// Cells in table order: fraction, then variant, then seed.
std::vector<GridCell> grid_cells(const RunConfig& config);

// Trains and evaluates one cell on the shared corpus. Cell seed drives
// few-shot sampling, initialization, batching, noise and dropout.
GridRow run_grid_cell(const RunConfig& config, const SyntheticCorpus& corpus,
                      const GridCell& cell, const std::string& cell_dir);

struct GridOptions {
  std::string out_dir;  // per-cell logs under <out_dir>/cells; empty: none
  std::function<void(const GridRow&)> on_row;
};

// Failures are caught per cell and recorded in the row.
std::vector<GridRow> run_experiment_grid(const RunConfig& config,
                                         const SyntheticCorpus& corpus,
                                         const GridOptions& options);

std::string format_grid_table(const std::vector<GridRow>& rows,
                              const std::string& config_echo);

}  // namespace vhm
