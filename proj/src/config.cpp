#include "vhm/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace vhm {

void RunConfig::propagate_seed() {
  data.seed = seed;
  train.seed = seed;
  fewshot.seed = seed;
}

void RunConfig::validate() const {
  if (name.empty() || name.find('/') != std::string::npos) {
    throw ConfigError("name must be a non-empty directory name");
  }
  data.validate();
  backbone.validate();
  ablation.validate();
  if (latent_dim < 1) throw ConfigError("model.latent_dim must be at least 1");
  train.validate();
  if (train.mode == TaskMode::kRotation && use_latents) {
    throw ConfigError("train.mode=rotation requires model.use_latents=false");
  }
  decode.validate();
  fewshot.validate();
  if (eval_examples < 0) throw ConfigError("eval.examples must be non-negative");
  if (bootstrap_resamples < 1) throw ConfigError("eval.bootstrap must be at least 1");
  if (grid.fractions.empty()) throw ConfigError("grid.fractions must not be empty");
  for (double f : grid.fractions) {
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("grid.fractions entries must lie in (0, 1]");
  }
  if (grid.variants.empty()) throw ConfigError("grid.variants must not be empty");
  if (grid.seeds < 1) throw ConfigError("grid.seeds must be at least 1");
  if (grid.jobs < 1) throw ConfigError("grid.jobs must be at least 1");
  if (grid.eval_examples < 0) throw ConfigError("grid.eval_examples must be non-negative");
  const Index doc = data.layout.length();
  const Index needed = std::max(doc, data.layout.sentences) + 1;
  if (backbone.max_len < needed) {
    throw ConfigError("model.max_len must be at least " + std::to_string(needed) +
                      " for the configured documents");
  }
}

ModelConfig RunConfig::model_config(Index vocab_size) const {
  ModelConfig m;
  m.backbone = backbone;
  m.vocab_size = vocab_size;
  m.latent_dim = latent_dim;
  m.use_latents = use_latents;
  m.ablation = ablation;
  return m;
}

namespace {

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const char* expected) {
  throw ConfigError("invalid value \"" + value + "\" for key " + key + " (expected " +
                    expected + ")");
}

Index parse_index(const std::string& key, const std::string& s) {
  Index v = 0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) bad_value(key, s, "an integer");
  return v;
}

std::uint64_t parse_u64(const std::string& key, const std::string& s) {
  std::uint64_t v = 0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) {
    bad_value(key, s, "a non-negative integer");
  }
  return v;
}

double parse_double(const std::string& key, const std::string& s) {
  double v = 0.0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size() || !std::isfinite(v)) {
    bad_value(key, s, "a finite number");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  bad_value(key, s, "true or false");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string fmt(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::string fmt(bool v) { return v ? "true" : "false"; }
std::string fmt(Index v) { return std::to_string(v); }
std::string fmt(std::uint64_t v) { return std::to_string(v); }

ConfigKey index_key(std::string name, std::string help, Index& (*ref)(RunConfig&)) {
  return {name, std::move(help),
          [ref](const RunConfig& c) { return fmt(ref(const_cast<RunConfig&>(c))); },
          [ref, name](RunConfig& c, const std::string& v) { ref(c) = parse_index(name, v); }};
}

ConfigKey double_key(std::string name, std::string help, double& (*ref)(RunConfig&)) {
  return {name, std::move(help),
          [ref](const RunConfig& c) { return fmt(ref(const_cast<RunConfig&>(c))); },
          [ref, name](RunConfig& c, const std::string& v) { ref(c) = parse_double(name, v); }};
}

ConfigKey bool_key(std::string name, std::string help, bool& (*ref)(RunConfig&)) {
  return {name, std::move(help),
          [ref](const RunConfig& c) { return fmt(ref(const_cast<RunConfig&>(c))); },
          [ref, name](RunConfig& c, const std::string& v) { ref(c) = parse_bool(name, v); }};
}

std::vector<ConfigKey> build_keys() {
  std::vector<ConfigKey> k;
  k.push_back({"name", "run name; outputs go to <runs>/<name>",
               [](const RunConfig& c) { return c.name; },
               [](RunConfig& c, const std::string& v) { c.name = v; }});
  k.push_back({"seed", "seed for data, initialization, batching, noise and dropout",
               [](const RunConfig& c) { return fmt(c.seed); },
               [](RunConfig& c, const std::string& v) {
                 c.seed = parse_u64("seed", v);
                 c.propagate_seed();
               }});
  k.push_back({"data.dir", "corpus directory (empty: <runs>/<name>/data)",
               [](const RunConfig& c) { return c.data_dir; },
               [](RunConfig& c, const std::string& v) { c.data_dir = v; }});
  k.push_back(index_key("data.vocab_size", "tokens per language block",
                        [](RunConfig& c) -> Index& { return c.data.vocab_size; }));
  k.push_back(index_key("data.sentences", "sentences per document",
                        [](RunConfig& c) -> Index& { return c.data.layout.sentences; }));
  k.push_back(index_key("data.noise", "noise tokens per sentence",
                        [](RunConfig& c) -> Index& { return c.data.layout.noise; }));
  k.push_back(index_key("data.salient", "number of key tokens s1..s_salient",
                        [](RunConfig& c) -> Index& { return c.data.layout.salient; }));
  k.push_back(index_key("data.n_mt", "translation training pairs",
                        [](RunConfig& c) -> Index& { return c.data.n_mt; }));
  k.push_back(index_key("data.n_ms", "monolingual summarization training pairs",
                        [](RunConfig& c) -> Index& { return c.data.n_ms; }));
  k.push_back(index_key("data.n_cls", "cross-lingual summarization training pairs",
                        [](RunConfig& c) -> Index& { return c.data.n_cls; }));
  k.push_back(index_key("data.n_valid", "validation documents",
                        [](RunConfig& c) -> Index& { return c.data.n_valid; }));
  k.push_back(index_key("data.n_test", "test documents",
                        [](RunConfig& c) -> Index& { return c.data.n_test; }));
  k.push_back(index_key("model.encoder_layers", "encoder layers",
                        [](RunConfig& c) -> Index& { return c.backbone.n_encoder_layers; }));
  k.push_back(index_key("model.decoder_layers", "decoder layers",
                        [](RunConfig& c) -> Index& { return c.backbone.n_decoder_layers; }));
  k.push_back(index_key("model.d_model", "hidden width",
                        [](RunConfig& c) -> Index& { return c.backbone.d_model; }));
  k.push_back(index_key("model.heads", "attention heads",
                        [](RunConfig& c) -> Index& { return c.backbone.n_heads; }));
  k.push_back(index_key("model.d_ff", "feed-forward width",
                        [](RunConfig& c) -> Index& { return c.backbone.d_ff; }));
  k.push_back(index_key("model.max_len", "longest sequence the positional table covers",
                        [](RunConfig& c) -> Index& { return c.backbone.max_len; }));
  k.push_back(double_key("model.dropout", "dropout rate during training",
                         [](RunConfig& c) -> double& { return c.backbone.dropout; }));
  k.push_back(index_key("model.latent_dim", "width of each latent variable",
                        [](RunConfig& c) -> Index& { return c.latent_dim; }));
  k.push_back(bool_key("model.use_latents", "false: no-latent multi-task baseline",
                       [](RunConfig& c) -> bool& { return c.use_latents; }));
  k.push_back(bool_key("model.drop_z_mt", "remove the translation latent",
                       [](RunConfig& c) -> bool& { return c.ablation.drop_z_mt; }));
  k.push_back(bool_key("model.drop_z_ms", "remove the summarization latent",
                       [](RunConfig& c) -> bool& { return c.ablation.drop_z_ms; }));
  k.push_back(bool_key("model.drop_global", "remove the global latent",
                       [](RunConfig& c) -> bool& { return c.ablation.drop_global; }));
  k.push_back(bool_key("model.flat_hierarchy",
                       "keep three latents without conditioning the global one on the locals",
                       [](RunConfig& c) -> bool& { return c.ablation.flat_hierarchy; }));
  k.push_back(index_key("train.steps", "optimization steps",
                        [](RunConfig& c) -> Index& { return c.train.total_steps; }));
  k.push_back(index_key("train.anneal_steps", "KL annealing length (-1: steps/2)",
                        [](RunConfig& c) -> Index& { return c.train.anneal_steps; }));
  k.push_back(index_key("train.warmup", "learning-rate warmup steps",
                        [](RunConfig& c) -> Index& { return c.train.warmup_steps; }));
  k.push_back(double_key("train.lr", "peak learning rate",
                         [](RunConfig& c) -> double& { return c.train.peak_lr; }));
  k.push_back(double_key("train.beta1", "Adam beta1",
                         [](RunConfig& c) -> double& { return c.train.adam_beta1; }));
  k.push_back(double_key("train.beta2", "Adam beta2",
                         [](RunConfig& c) -> double& { return c.train.adam_beta2; }));
  k.push_back(double_key("train.eps", "Adam epsilon",
                         [](RunConfig& c) -> double& { return c.train.adam_eps; }));
  k.push_back(double_key("train.clip", "global gradient-norm clip (<=0: off)",
                         [](RunConfig& c) -> double& { return c.train.clip_norm; }));
  k.push_back(index_key("train.batch_size", "examples per task per step",
                        [](RunConfig& c) -> Index& { return c.train.batch_size; }));
  k.push_back({"train.mode", "joint or rotation (rotation: baseline only)",
               [](const RunConfig& c) { return std::string(to_string(c.train.mode)); },
               [](RunConfig& c, const std::string& v) { c.train.mode = parse_task_mode(v); }});
  k.push_back(index_key("train.validate_every", "steps between validation decodes (0: off)",
                        [](RunConfig& c) -> Index& { return c.train.validate_every; }));
  k.push_back(index_key("train.valid_slice", "validation documents decoded each time",
                        [](RunConfig& c) -> Index& { return c.train.valid_slice; }));
  k.push_back(index_key("decode.beam", "beam size",
                        [](RunConfig& c) -> Index& { return c.decode.beam_size; }));
  k.push_back(double_key("decode.alpha", "length-penalty exponent",
                         [](RunConfig& c) -> double& { return c.decode.length_penalty; }));
  k.push_back(index_key("decode.max_len", "maximum generated tokens",
                        [](RunConfig& c) -> Index& { return c.decode.max_len; }));
  k.push_back(bool_key("decode.sample_latents", "draw inference latents instead of prior means",
                       [](RunConfig& c) -> bool& { return c.sample_latents; }));
  k.push_back(double_key("fewshot.fraction", "fraction of the CLS training set used",
                         [](RunConfig& c) -> double& { return c.fewshot.fraction; }));
  k.push_back(index_key("eval.examples", "test documents evaluated (0: all)",
                        [](RunConfig& c) -> Index& { return c.eval_examples; }));
  k.push_back({"eval.bootstrap", "bootstrap resamples for intervals",
               [](const RunConfig& c) { return std::to_string(c.bootstrap_resamples); },
               [](RunConfig& c, const std::string& v) {
                 c.bootstrap_resamples = int(parse_index("eval.bootstrap", v));
               }});
  k.push_back({"grid.fractions", "comma-separated CLS fractions",
               [](const RunConfig& c) {
                 std::string s;
                 for (double f : c.grid.fractions) s += (s.empty() ? "" : ",") + fmt(f);
                 return s;
               },
               [](RunConfig& c, const std::string& v) {
                 c.grid.fractions.clear();
                 for (const auto& item : split_list(v)) {
                   c.grid.fractions.push_back(parse_double("grid.fractions", item));
                 }
               }});
  k.push_back({"grid.variants",
               "comma-separated variants: vhm, baseline, no_zmt, no_zms, no_locals, "
               "no_global, flat",
               [](const RunConfig& c) {
                 std::string s;
                 for (const auto& v : c.grid.variants) s += (s.empty() ? "" : ",") + v;
                 return s;
               },
               [](RunConfig& c, const std::string& v) { c.grid.variants = split_list(v); }});
  k.push_back(index_key("grid.seeds", "seeds per cell (seed, seed+1, ...)",
                        [](RunConfig& c) -> Index& { return c.grid.seeds; }));
  k.push_back(index_key("grid.jobs", "cells trained concurrently",
                        [](RunConfig& c) -> Index& { return c.grid.jobs; }));
  k.push_back(index_key("grid.eval_examples", "test documents per cell (0: all)",
                        [](RunConfig& c) -> Index& { return c.grid.eval_examples; }));
  return k;
}

const ConfigKey& lookup(const std::string& key) {
  for (const auto& k : config_keys()) {
    if (k.key == key) return k;
  }
  throw ConfigError("unknown config key \"" + key + "\"");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = build_keys();
  return keys;
}

void set_config_value(RunConfig& config, const std::string& key, const std::string& value) {
  lookup(key).set(config, value);
}

std::string get_config_value(const RunConfig& config, const std::string& key) {
  return lookup(key).get(config);
}

void apply_config_text(RunConfig& config, const std::string& text,
                       const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + " line " + std::to_string(number) +
                        ": expected key=value");
    }
    set_config_value(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  RunConfig config;
  apply_config_text(config, buf.str(), path);
  return config;
}

std::string echo_config(const RunConfig& config) {
  std::string out;
  for (const auto& k : config_keys()) out += k.key + "=" + k.get(config) + "\n";
  return out;
}

}  // namespace vhm
