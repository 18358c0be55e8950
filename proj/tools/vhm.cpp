// vhm: data generation, training, evaluation, summarization and the
// few-shot/ablation grid.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "vhm/config.hpp"
#include "vhm/experiment.hpp"
#include "vhm/training.hpp"

namespace fs = std::filesystem;
using namespace vhm;

namespace {

struct CommonArgs {
  std::string config_file;
  std::map<std::string, std::string> overrides;
};

fs::path runs_root() {
  const char* env = std::getenv("VHM_RUNS_DIR");
  return env && *env ? fs::path(env) : fs::path("runs");
}

fs::path run_dir(const RunConfig& c) { return runs_root() / c.name; }

fs::path data_dir(const RunConfig& c) {
  return c.data_dir.empty() ? run_dir(c) / "data" : fs::path(c.data_dir);
}

void add_config_options(CLI::App* app, CommonArgs& args) {
  app->add_option("--config", args.config_file, "key=value config file");
  const RunConfig defaults;
  for (const auto& key : config_keys()) {
    app->add_option_function<std::string>(
           "--" + key.key,
           [&args, name = key.key](const std::string& v) { args.overrides[name] = v; },
           key.help)
        ->default_str(key.get(defaults))
        ->type_name("VALUE");
  }
}

RunConfig resolve_config(const CommonArgs& args) {
  RunConfig c;
  c.propagate_seed();
  if (!args.config_file.empty()) c = load_config_file(args.config_file);
  // Flags apply in registry order so that "seed" precedes anything it seeds.
  for (const auto& key : config_keys()) {
    auto it = args.overrides.find(key.key);
    if (it != args.overrides.end()) set_config_value(c, key.key, it->second);
  }
  c.validate();
  return c;
}

std::string timestamp() {
  const std::time_t now = std::time(nullptr);
  char buf[64];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return buf;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

void make_dirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

SyntheticCorpus require_corpus(const RunConfig& c) {
  const fs::path dir = data_dir(c);
  if (!fs::exists(dir / "vocab.txt")) {
    throw IoError("no corpus at " + dir.string() + " (run generate-data first)");
  }
  return load_corpus(dir.string(), c.data.layout);
}

std::uint64_t model_seed(const RunConfig& c) { return make_stream(c.seed, 0x301)(); }

// Rebuilds the model recorded in a checkpoint and loads its parameters.
std::unique_ptr<VhmModel> model_from_checkpoint(const fs::path& path, Index vocab_size) {
  if (!fs::exists(path)) throw IoError("no checkpoint at " + path.string());
  const CheckpointHeader header = read_checkpoint_header(path.string());
  RunConfig trained;
  apply_config_text(trained, header.config_echo, path.string());
  auto model = std::make_unique<VhmModel>(trained.model_config(vocab_size), 0);
  load_parameters(*model, path.string());
  return model;
}

fs::path default_checkpoint(const RunConfig& c) {
  const fs::path dir = run_dir(c) / "checkpoints";
  return fs::exists(dir / "best.ckpt") ? dir / "best.ckpt" : dir / "last.ckpt";
}

InferenceOptions inference_options(const RunConfig& c, Rng& rng) {
  InferenceOptions o;
  o.sample_latents = c.sample_latents;
  if (c.sample_latents) o.rng = &rng;
  return o;
}

int cmd_generate_data(const RunConfig& c) {
  const SyntheticCorpus corpus = gen_corpus(c.data);
  const fs::path dir = data_dir(c);
  save_corpus(dir.string(), corpus);
  write_file(dir / "config.echo", echo_config(c));
  std::cout << "wrote " << corpus.mt.size() << " mt, " << corpus.ms.size() << " ms, "
            << corpus.cls.size() << " cls, " << corpus.valid.size() << " valid, "
            << corpus.test.size() << " test examples to " << dir.string() << '\n';
  return 0;
}

int cmd_train(const RunConfig& c) {
  const SyntheticCorpus corpus = require_corpus(c);
  const fs::path dir = run_dir(c);
  make_dirs(dir / "checkpoints");
  const std::string echo = echo_config(c);
  write_file(dir / "config.echo", echo);

  TrainingCorpora corpora{corpus.mt, corpus.ms, sample_fewshot(corpus.cls, c.fewshot),
                          corpus.valid};
  VhmModel model(c.model_config(corpus.vocab.size()), model_seed(c));
  std::ofstream log(dir / "train.log");
  if (!log) throw IoError("cannot write " + (dir / "train.log").string());
  log << "# started " << timestamp() << '\n';

  TrainOptions options;
  options.decode = c.decode;
  options.checkpoint_dir = (dir / "checkpoints").string();
  options.config_echo = echo;
  options.log = &log;
  const Index every = std::max<Index>(1, c.train.total_steps / 10);
  options.on_step = [&](const StepRecord& r) {
    if ((r.step + 1) % every == 0) std::cerr << format_record(r) << '\n';
    return true;
  };
  const TrainResult result = train(model, corpora, c.train, options);
  std::cout << "trained " << result.records.size() << " steps ("
            << corpora.cls.size() << " cls examples)";
  if (result.best) {
    std::cout << "; best validation exact match " << result.best->exact_match
              << " at step " << result.best_step;
  }
  std::cout << "\ncheckpoints in " << (dir / "checkpoints").string() << '\n';
  return 0;
}

int cmd_evaluate(const RunConfig& c, const std::string& checkpoint) {
  const SyntheticCorpus corpus = require_corpus(c);
  const fs::path ckpt = checkpoint.empty() ? default_checkpoint(c) : fs::path(checkpoint);
  auto model = model_from_checkpoint(ckpt, corpus.vocab.size());
  std::vector<TaskExample> test = corpus.test;
  if (c.eval_examples > 0 && Index(test.size()) > c.eval_examples) {
    test.resize(std::size_t(c.eval_examples));
  }
  Rng rng = make_stream(c.seed, 0x401);
  const EvaluationReport report = evaluate_model(
      *model, test, c.decode, inference_options(c, rng), c.bootstrap_resamples, c.seed);
  const fs::path metrics = run_dir(c) / "metrics";
  make_dirs(metrics);
  std::ofstream out(metrics / "test.tsv");
  if (!out) throw IoError("cannot write " + (metrics / "test.tsv").string());
  write_report(out, report, corpus.vocab, echo_config(c));
  const auto& s = report.summary;
  std::cout << "examples " << test.size() << "\nrouge1_f1 " << s.rouge1.mean
            << "\nrouge2_f1 " << s.rouge2.mean << "\nrougeL_f1 " << s.rouge_l.mean
            << "\nexact_match " << s.exact_match.mean << "\ntoken_accuracy "
            << s.token_accuracy.mean << "\nreport " << (metrics / "test.tsv").string()
            << '\n';
  return 0;
}

int cmd_summarize(const RunConfig& c, const std::string& checkpoint,
                  const std::string& input, const std::string& output) {
  const fs::path vocab_path = data_dir(c) / "vocab.txt";
  if (!fs::exists(vocab_path)) throw IoError("no vocabulary at " + vocab_path.string());
  const Vocabulary vocab = Vocabulary::load(vocab_path.string());
  const fs::path ckpt = checkpoint.empty() ? default_checkpoint(c) : fs::path(checkpoint);
  auto model = model_from_checkpoint(ckpt, vocab.size());

  std::ifstream in(input);
  if (!in) throw IoError("cannot read " + input);
  std::vector<TokenSeq> articles;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    TokenSeq ids = vocab.encode(line);
    if (ids.empty()) {
      throw EmptySequenceError(input + " line " + std::to_string(number) + ": empty article");
    }
    articles.push_back(std::move(ids));
  }
  Rng rng = make_stream(c.seed, 0x401);
  const InferenceOptions options = inference_options(c, rng);
  std::ostringstream summaries;
  for (const auto& article : articles) {
    summaries << vocab.decode(model->infer(article, c.decode, options).tokens) << '\n';
  }
  if (output.empty() || output == "-") {
    std::cout << summaries.str();
  } else {
    write_file(output, summaries.str());
  }
  return 0;
}

int cmd_grid(const RunConfig& c) {
  const SyntheticCorpus corpus = require_corpus(c);
  const fs::path dir = run_dir(c) / "grid";
  make_dirs(dir);
  const std::string echo = echo_config(c);
  write_file(dir / "config.echo", echo);
  GridOptions options;
  options.out_dir = dir.string();
  options.on_row = [](const GridRow& r) {
    std::cerr << "cell fraction=" << r.cell.fraction << " variant=" << r.cell.variant
              << " seed=" << r.cell.seed << ": "
              << (r.ok ? "rouge1_f1=" + std::to_string(r.rouge1) : "failed: " + r.error)
              << '\n';
  };
  const std::vector<GridRow> rows = run_experiment_grid(c, corpus, options);
  write_file(dir / "results.tsv", format_grid_table(rows, echo));
  std::size_t failed = 0;
  for (const auto& r : rows) failed += r.ok ? 0 : 1;
  std::cout << rows.size() << " cells, " << failed << " failed; table "
            << (dir / "results.tsv").string() << '\n';
  return failed == 0 ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Variational hierarchical cross-lingual summarization on a synthetic task"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  CommonArgs gen_args, train_args, eval_args, sum_args, grid_args;
  std::string eval_ckpt, sum_ckpt, sum_input, sum_output;

  auto* gen = app.add_subcommand("generate-data", "Write the synthetic corpus and vocabulary");
  add_config_options(gen, gen_args);
  auto* trn = app.add_subcommand("train", "Train a model; writes train.log and checkpoints");
  add_config_options(trn, train_args);
  auto* ev = app.add_subcommand("evaluate", "Score a checkpoint on the test split");
  add_config_options(ev, eval_args);
  ev->add_option("--checkpoint", eval_ckpt, "checkpoint (default: best, else last)");
  auto* sum = app.add_subcommand("summarize", "Summarize one article per input line");
  add_config_options(sum, sum_args);
  sum->add_option("--checkpoint", sum_ckpt, "checkpoint (default: best, else last)");
  sum->add_option("--input", sum_input, "articles, whitespace-separated tokens")->required();
  sum->add_option("--output", sum_output, "output file (default: stdout)");
  auto* grd = app.add_subcommand("grid", "Train and evaluate fraction x variant x seed cells");
  add_config_options(grd, grid_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_generate_data(resolve_config(gen_args));
    if (trn->parsed()) return cmd_train(resolve_config(train_args));
    if (ev->parsed()) return cmd_evaluate(resolve_config(eval_args), eval_ckpt);
    if (sum->parsed()) {
      return cmd_summarize(resolve_config(sum_args), sum_ckpt, sum_input, sum_output);
    }
    if (grd->parsed()) return cmd_grid(resolve_config(grid_args));
  } catch (const Error& e) {
    static const char* names[] = {"contract", "config", "data", "numerics", "io"};
    std::cerr << names[int(e.category())] << " error: " << e.what() << '\n';
    return exit_code(e.category());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return 5;
  }
  return 1;
}
