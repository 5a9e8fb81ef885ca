#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mvfuse/autodiff.hpp"
#include "mvfuse/fusion.hpp"
#include "mvfuse/lm.hpp"
#include "mvfuse/model_spec.hpp"
#include "mvfuse/vision.hpp"

namespace mvfuse {

/// Patch embedder -> gated pooling over views -> projection -> concatenation
/// with the question embedding -> encoder-decoder LM.
class VisionLanguageModel {
 public:
  VisionLanguageModel(ModelSpec spec, std::uint64_t seed);

  const ModelSpec& spec() const { return spec_; }

  PatchEmbedder patch;
  GatedPoolParams fusion;
  ProjectionLayer proj;
  LanguageModel lm;

  // Stable canonical order; names are unique.
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  Parameter* find(const std::string& name);
  std::size_t parameter_count() const;

  std::vector<Tensor> embed_views(std::span<const Image> views) const;

  // Question tokens (eos appended, truncated to fit max_seq) used as the
  // text part of the encoder input.
  std::vector<int> encoder_text(std::span<const int> question) const;

  /// Position-encoded (S_T + S_I) x H_T encoder input.
  Var multimodal_embedding(Tape& tape, std::span<const Var> views, std::span<const int> question);
  /// Teacher-forced mean cross-entropy of the answer (eos appended).
  Var answer_loss(Tape& tape, std::span<const Var> views, std::span<const int> question,
                  std::span<const int> answer);
  /// Greedy decoding; the returned ids end with eos unless max_len was hit.
  std::vector<int> generate(std::span<const Tensor> views, std::span<const int> question,
                            std::size_t max_len) const;

 private:
  // LoRA variant: adapters on the configured targets, optional int8 base.
  void apply_lora_spec(std::uint64_t seed);

  ModelSpec spec_;
};

}  // namespace mvfuse
