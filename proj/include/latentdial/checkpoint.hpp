#pragma once

// Versioned binary checkpoint:
//   "LDIALCKP" | u32 version | u64 header bytes | JSON header | raw f64 tensors
// The header carries the model config, the vocabulary with its hash, the
// tensor index, and optional trainer state (step counters, run config).

#include <filesystem>
#include <map>
#include <string>

#include "json.hpp"

#include "latentdial/data.hpp"
#include "latentdial/model.hpp"

namespace latentdial {

inline constexpr std::uint32_t kCheckpointVersion = 1;

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

struct Checkpoint {
  ModelConfig model_config;
  Vocabulary vocab;
  std::map<std::string, Matrix> tensors;  // model params plus any optimizer tensors
  nlohmann::json extra = nlohmann::json::object();

  // Rebuilds the model and copies parameter values in.
  DialogueModel make_model() const;
};

Checkpoint snapshot(const DialogueModel& model, const Vocabulary& vocab);

// Writes to a temporary file and renames, so readers never see a partial file.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace latentdial
