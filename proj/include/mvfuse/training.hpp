#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mvfuse/data.hpp"
#include "mvfuse/lm.hpp"
#include "mvfuse/model.hpp"

namespace mvfuse {

struct TrainConfig {
  double lr0 = 1e-4;
  double weight_decay = 0.05;
  std::size_t batch_size = 4;
  std::size_t epochs_per_stage = 6;
  double lr_gamma = 0.9;
  std::uint64_t seed = 0;
  // Global-norm gradient clipping; 0 disables it.
  double clip_norm = 1.0;
  // Fresh optimizer moments at the start of each stage.
  bool reset_optimizer = true;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  std::vector<std::string> problems() const;
  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// lr0 * gamma^epoch.
double lr_schedule(const TrainConfig& cfg, std::size_t epoch);

struct StagePlan {
  int stage = 1;
  std::vector<ParamGroup> trainable;
  std::vector<ParamGroup> frozen;

  // Stage 1: fusion + projection. Stage 2 adds the LM, or only the LoRA
  // adapters when `lora` is set. The patch embedder is always frozen.
  static StagePlan for_stage(int stage, bool lora = false);
  bool trains(ParamGroup g) const;
};

// Sets every parameter's trainable flag from the plan. Int8-backed weights
// stay frozen regardless.
void apply_plan(VisionLanguageModel& model, const StagePlan& plan);

struct AdamState {
  std::uint64_t step = 0;
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;
};

/// One decoupled-weight-decay adaptive-moment update over the trainable
/// parameters, using their `grad` fields. Non-finite gradients throw
/// NumericError naming the parameter before anything is modified.
void optimizer_step(std::span<Parameter* const> params, AdamState& state, const TrainConfig& cfg,
                    double lr);

// Rescales gradients so their global L2 norm is at most max_norm. Returns the
// norm before clipping.
double clip_grad_norm(std::span<Parameter* const> params, double max_norm);

/// A training sample with its frozen view embeddings precomputed.
struct TrainExample {
  std::string id;
  std::vector<Tensor> views;
  std::vector<int> question;
  std::vector<int> answer;
};

std::vector<TrainExample> prepare_examples(const VisionLanguageModel& model,
                                           const Tokenizer& tokenizer,
                                           std::span<const QASample> samples);

struct EpochLog {
  int stage = 0;
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double lr = 0.0;
  friend bool operator==(const EpochLog&, const EpochLog&) = default;
};

/// Everything needed to continue training at an epoch boundary.
struct TrainState {
  int stage = 0;              // last stage entered (0 = none)
  std::size_t epoch = 0;      // epochs completed within that stage
  SeededRng rng;
  AdamState opt;
  std::vector<EpochLog> trace;

  bool stage_complete(const TrainConfig& cfg) const { return epoch >= cfg.epochs_per_stage; }
};

TrainState initial_state(const TrainConfig& cfg);

// Token-weighted mean answer cross-entropy over a batch.
Var batch_loss(Tape& tape, VisionLanguageModel& model, std::span<const TrainExample* const> batch);

using EpochCallback = std::function<void(const EpochLog&, const TrainState&)>;

/// Runs the remaining epochs of `plan.stage`. Stage 2 requires a finished
/// stage 1 in `state`. `stop_after` limits the number of epochs run in this
/// call (for interrupted runs).
void run_stage(VisionLanguageModel& model, const StagePlan& plan, const TrainConfig& cfg,
               std::span<const TrainExample> data, TrainState& state,
               const EpochCallback& on_epoch = {},
               std::optional<std::size_t> stop_after = std::nullopt);

void write_loss_csv(const std::filesystem::path& path, std::span<const EpochLog> trace);

// ---------------------------------------------------------------- checkpoint

enum class StorageType { kF64, kF32 };

struct Checkpoint {
  ModelSpec spec;
  std::vector<std::string> vocab;
  TrainConfig train;
  TrainState state;
  nlohmann::json meta = nlohmann::json::object();  // free-form (split, data paths)
};

inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const VisionLanguageModel& model,
                     const Tokenizer& tokenizer, const TrainConfig& cfg, const TrainState& state,
                     const nlohmann::json& meta = nlohmann::json::object(),
                     StorageType storage = StorageType::kF64);

// Reads the header only.
Checkpoint read_checkpoint_header(const std::filesystem::path& path);

/// Loads arrays into an existing model. Throws DataError naming the first
/// array whose name or shape disagrees with the model.
Checkpoint load_checkpoint_into(const std::filesystem::path& path, VisionLanguageModel& model);

struct LoadedModel {
  std::unique_ptr<VisionLanguageModel> model;
  Tokenizer tokenizer;
  Checkpoint ckpt;
};

LoadedModel load_checkpoint(const std::filesystem::path& path);

}  // namespace mvfuse
