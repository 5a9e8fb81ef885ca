#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace mvfuse {

struct LoraSpec {
  bool enabled = false;
  std::size_t rank = 8;
  double alpha = 16.0;
  // Empty means every attention query/value projection.
  std::vector<std::string> targets;
  bool quantize_base = false;

  friend bool operator==(const LoraSpec&, const LoraSpec&) = default;
};

/// Complete architecture description shared by the runnable model and the
/// cost estimator.
struct ModelSpec {
  // Language model.
  std::size_t d_model = 64;
  std::size_t n_enc_layers = 2;
  std::size_t n_dec_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d_ff = 256;
  std::size_t vocab_size = 0;  // 0 = take from the tokenizer
  std::size_t max_seq = 64;
  bool tie_embeddings = false;
  double init_std = 0.02;
  // Vision side.
  std::size_t image_size = 64;
  std::size_t patch = 16;
  std::size_t image_hidden = 64;
  std::size_t n_views = 6;
  std::size_t fusion_k = 128;
  LoraSpec lora;

  std::size_t image_seq() const { return (image_size / patch) * (image_size / patch); }
  std::size_t fusion_m() const { return image_seq() * image_hidden; }

  // Every violated constraint, one message each. Empty when valid.
  std::vector<std::string> problems() const;
  void validate() const;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

void to_json(nlohmann::json& j, const LoraSpec& s);
void from_json(const nlohmann::json& j, LoraSpec& s);
void to_json(nlohmann::json& j, const ModelSpec& s);
// Rejects unknown keys; missing keys keep their defaults.
void from_json(const nlohmann::json& j, ModelSpec& s);

}  // namespace mvfuse
