#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mvfuse/cost.hpp"
#include "mvfuse/data.hpp"
#include "mvfuse/metrics.hpp"
#include "mvfuse/model_spec.hpp"
#include "mvfuse/training.hpp"

namespace mvfuse {

struct DataConfig {
  std::filesystem::path manifest;
  std::array<double, 3> fractions = {0.90, 0.05, 0.05};
  std::uint64_t split_seed = 0;
  bool strict = true;
  // Bucket the model is trained on.
  std::string train_split = "train";
};

struct EvalConfig {
  std::filesystem::path predictions;
  std::filesystem::path references;
  MetricOptions options;
};

struct CostConfig {
  std::string preset = "base";
  std::optional<ArchSpec> spec;
  SeqLengths seq = published_seq();
  bool gib = false;
};

/// One JSON document with sections model, train, data, eval and cost.
struct RunConfig {
  ModelSpec model;
  TrainConfig train;
  DataConfig data;
  EvalConfig eval;
  CostConfig cost;

  std::vector<std::string> problems() const;
};

// Parses and validates; every problem found is reported in one ConfigError.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json run_config_json(const RunConfig& c);

// Tokenizer over the questions and answers of `samples`.
Tokenizer build_tokenizer(std::span<const QASample> samples);

struct TrainRequest {
  RunConfig config;
  std::string stage = "all";  // 1, 2 or all
  std::filesystem::path out;
  std::optional<std::filesystem::path> resume;
  // Stop after this many epochs in this invocation (checkpoint stays mid-stage).
  std::optional<std::size_t> stop_after;
  bool verbose = false;
};

struct TrainOutcome {
  std::vector<EpochLog> trace;
  std::filesystem::path checkpoint;
  std::optional<std::filesystem::path> stage1_checkpoint;
  std::filesystem::path loss_csv;
  std::size_t train_samples = 0;
};

/// Loads data, splits by scene, builds or resumes the model, runs the
/// requested stage(s) and writes checkpoints plus the loss CSV.
TrainOutcome train_pipeline(const TrainRequest& req);

struct Generation {
  nlohmann::json predictions = nlohmann::json::array();  // [{"id","text"}]
  nlohmann::json references = nlohmann::json::array();   // [{"id","text"}]
};

/// Greedy answers for every sample of `split` (train, val, test or all),
/// using the split recorded in the checkpoint. `threads` = 0 reads
/// MVFUSE_THREADS, falling back to the machine's parallelism.
Generation generate_split(const std::filesystem::path& checkpoint,
                          const std::filesystem::path& manifest, const std::string& split,
                          std::size_t threads = 0);

std::size_t worker_threads();

void write_json(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace mvfuse
