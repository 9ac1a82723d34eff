#pragma once

// Merged run configuration with dotted keys ("loss.lambda1 = 3.9").
// Sources, lowest to highest precedence: built-in defaults (or a preset),
// config file, LATENTDIAL_<SECTION>_<KEY> environment variables, then
// command-line overrides.

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "latentdial/inference.hpp"
#include "latentdial/model.hpp"
#include "latentdial/training.hpp"

namespace latentdial {

inline constexpr const char* kEnvPrefix = "LATENTDIAL_";

struct DataConfig {
  std::string train;
  std::string validation;
  std::string vocab;
  int min_freq = 2;
};

struct RunConfig {
  std::string preset = "full";
  DataConfig data;
  ModelConfig model;
  TrainConfig train;
  GenerationOptions generate;
  std::string eval_embeddings;
  std::string eval_annotations;
  std::string inspect_metric = "euclidean";
  std::size_t inspect_k = 10;
  std::size_t inspect_samples = 1000;

  // "full": 512/10 dims, embedding 128, the default loss weights and optimizer.
  // "toy": the small synthetic-corpus configuration used by the acceptance run.
  // "baseline": attention seq2seq with hidden size 522 trained on cross entropy.
  static RunConfig from_preset(const std::string& name);

  // Throws std::invalid_argument on an unknown key or a malformed value.
  void set(const std::string& key, const std::string& value);
  std::vector<std::string> keys() const;
  std::map<std::string, std::string> flatten() const;

  nlohmann::json to_json() const;
  std::string to_text() const;  // "key = value" lines, sorted
  void validate() const;
};

// "key = value" lines; '#' starts a comment; "[section]" prefixes later keys.
std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text);
std::vector<std::pair<std::string, std::string>> read_config_file(const std::filesystem::path& path);

// LATENTDIAL_LOSS_LAMBDA1=... -> ("loss.lambda1", ...). Variables whose
// section is not a config section are ignored.
std::vector<std::pair<std::string, std::string>> env_overrides(const std::vector<std::string>& environment);
std::vector<std::string> current_environment();

struct ConfigSources {
  std::string preset;                  // empty: keep "full" unless the file sets one
  std::filesystem::path file;          // optional
  std::vector<std::string> environment;
  std::vector<std::pair<std::string, std::string>> overrides;
};

RunConfig resolve_config(const ConfigSources& sources);

}  // namespace latentdial
