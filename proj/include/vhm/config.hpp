#pragma once

// Flat key=value run configuration with section prefixes (model.d_model=64).

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "vhm/data.hpp"
#include "vhm/decoding.hpp"
#include "vhm/model.hpp"
#include "vhm/training.hpp"

namespace vhm {

struct GridSpec {
  std::vector<double> fractions{0.001, 0.01, 0.1, 0.5};
  std::vector<std::string> variants{"vhm", "baseline", "no_zmt", "no_zms",
                                    "no_locals", "no_global", "flat"};
  Index seeds = 3;
  Index jobs = 1;
  Index eval_examples = 500;  // 0: the whole test split
};

struct RunConfig {
  std::string name = "default";
  std::uint64_t seed = 1;
  std::string data_dir;  // empty: <runs>/<name>/data

  SyntheticConfig data;
  BackboneConfig backbone;
  Index latent_dim = 16;
  bool use_latents = true;
  AblationFlags ablation;
  TrainingSchedule train;
  DecodeConfig decode;
  bool sample_latents = false;
  FewShotSpec fewshot;
  Index eval_examples = 0;  // 0: the whole test split
  int bootstrap_resamples = 1000;
  GridSpec grid;

  // Copies the run seed into every seeded component.
  void propagate_seed();
  void validate() const;
  ModelConfig model_config(Index vocab_size) const;
};

struct ConfigKey {
  std::string key;
  std::string help;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

// Every recognised key in echo order.
const std::vector<ConfigKey>& config_keys();

// Throws ConfigError naming the key for unknown keys or malformed values.
void set_config_value(RunConfig& config, const std::string& key, const std::string& value);
std::string get_config_value(const RunConfig& config, const std::string& key);

// Applies "key=value" lines; '#' starts a comment, blank lines are skipped.
void apply_config_text(RunConfig& config, const std::string& text,
                       const std::string& origin);
RunConfig load_config_file(const std::string& path);

// One key=value line per key, in registry order; parses back to an equal config.
std::string echo_config(const RunConfig& config);

}  // namespace vhm
