#pragma once

// Joint optimisation of the CCA, reconstruction and KL objectives, the
// cross-entropy baseline, checkpoint/resume, and per-step structured logs.

#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "latentdial/checkpoint.hpp"
#include "latentdial/data.hpp"
#include "latentdial/losses.hpp"
#include "latentdial/model.hpp"

namespace latentdial {

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  AdamConfig adam;
  std::size_t batch_size = 64;
  bool drop_last = false;
  LossConfig loss;
  double replace_prob = 0.15;
  double clip_norm = 5.0;           // global gradient norm; <= 0 disables
  std::size_t max_epochs = 100;
  std::size_t max_steps = 0;        // 0: unlimited
  std::size_t patience = 3;         // epochs without validation improvement; 0 disables
  std::uint64_t seed = 1;
  bool no_uncorrelated = false;
  bool no_denoising = false;
  bool attention = false;
  std::size_t checkpoint_every_epochs = 1;
  std::size_t validate_every_epochs = 1;

  double effective_replace_prob() const { return no_denoising ? 0.0 : replace_prob; }
  // Applies the ablation switches to a model config.
  ModelConfig apply_to(ModelConfig model) const;
  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct AdamState {
  std::map<std::string, Matrix> m;
  std::map<std::string, Matrix> v;
  std::uint64_t t = 0;
};

struct StepRecord {
  std::uint64_t step = 0;
  std::size_t epoch = 0;
  LossBreakdown losses;
  double grad_norm = 0.0;
  std::map<Component, double> component_grad_norm;

  nlohmann::json to_json() const;
};

struct TrainState {
  DialogueModel model;
  AdamState adam;
  std::uint64_t step = 0;          // completed optimizer steps
  std::size_t epoch = 0;           // current epoch index
  std::size_t batch_in_epoch = 0;  // next batch position inside the epoch
  double best_validation = std::numeric_limits<double>::infinity();
  std::size_t epochs_since_best = 0;
  std::vector<double> ratio_history;  // L_v / L_a per step
  // running sums for the current epoch's mean losses
  LossBreakdown epoch_sum;
  std::size_t epoch_batches = 0;

  TrainState() = default;
  TrainState(const ModelConfig& cfg, std::uint64_t seed) : model(cfg, seed) {}
};

class NonFiniteLossError : public std::runtime_error {
 public:
  NonFiniteLossError(const std::string& what, std::string dump)
      : std::runtime_error(what), dump_(std::move(dump)) {}
  const std::string& dump() const { return dump_; }

 private:
  std::string dump_;
};

// Eval-mode losses for one batch (no denoising, posterior mean as code,
// no parameter update).
LossBreakdown evaluate_batch(const DialogueModel& model, const Batch& batch, const LossConfig& loss);

// Forward + backward for one batch. Gradients are accumulated into the model's
// params (callers zero them first). Randomness comes from `step_seed`.
LossBreakdown forward_backward(DialogueModel& model, Batch& batch, const TrainConfig& cfg,
                               std::uint64_t step_seed);

// One optimizer update on the batch. Throws NonFiniteLossError on NaN/inf.
StepRecord train_step(TrainState& state, Batch batch, const TrainConfig& cfg);

// Average eval-mode losses over a pair list, batched in a fixed shuffled order
// derived from cfg.seed.
LossBreakdown evaluate(const DialogueModel& model, const std::vector<TokenizedPair>& pairs,
                       const TrainConfig& cfg);

struct TrainData {
  Vocabulary vocab;
  std::vector<TokenizedPair> train;
  std::vector<TokenizedPair> validation;
};

struct TrainOptions {
  std::filesystem::path out_dir;   // empty: keep everything in memory
  std::ostream* log = nullptr;     // NDJSON step records
  std::ostream* progress = nullptr;
  std::optional<std::uint64_t> stop_after_step;  // pause point for resume tests
  nlohmann::json run_config;       // serialized into checkpoints
};

struct EpochSummary {
  std::size_t epoch = 0;
  LossBreakdown train_mean;
  std::optional<LossBreakdown> validation;
};

struct TrainResult {
  TrainState state;
  std::vector<StepRecord> steps;
  std::vector<EpochSummary> epochs;
  std::optional<DialogueModel> best_model;
  std::filesystem::path best_checkpoint;
  std::filesystem::path last_checkpoint;
  std::filesystem::path log_path;
  bool stopped_early = false;
  double wall_seconds = 0.0;
};

// Trains from a fresh state or continues `resume_from`.
TrainResult train(const TrainData& data, const ModelConfig& model_cfg, const TrainConfig& cfg,
                  const TrainOptions& opts, std::optional<TrainState> resume_from = std::nullopt);

// End-to-end cross-entropy seq2seq with full attention (hidden 522 by default).
TrainResult train_baseline(const TrainData& data, ModelConfig baseline_cfg, const TrainConfig& cfg,
                           const TrainOptions& opts);

// Full train state <-> checkpoint (model + Adam moments + counters).
Checkpoint checkpoint_state(const TrainState& state, const Vocabulary& vocab, const TrainConfig& cfg,
                            const nlohmann::json& run_config);
TrainState restore_state(const Checkpoint& ckpt);

// Paths-based driver: builds the vocabulary from the training file.
struct CorpusPaths {
  std::filesystem::path train;
  std::filesystem::path validation;  // optional
  std::filesystem::path vocab;       // optional: load instead of building
  int min_freq = 2;
};

TrainData load_train_data(const CorpusPaths& paths, std::ostream* progress = nullptr);

}  // namespace latentdial
