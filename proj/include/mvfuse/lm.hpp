#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mvfuse/autodiff.hpp"
#include "mvfuse/model_spec.hpp"
#include "mvfuse/tensor.hpp"

namespace mvfuse {

/// Word-level tokenizer: lowercase, whitespace split, punctuation split into
/// single-character tokens. Decimal numbers such as "24.5" stay one token.
class Tokenizer {
 public:
  static constexpr int kPad = 0;
  static constexpr int kEos = 1;
  static constexpr int kUnk = 2;
  static constexpr int kBos = 3;

  Tokenizer();
  // Vocabulary in first-appearance order over the corpus.
  static Tokenizer build(std::span<const std::string> corpus);
  // `tokens` must start with the four special tokens.
  static Tokenizer from_tokens(std::vector<std::string> tokens);

  static std::vector<std::string> split(std::string_view text);

  std::vector<int> encode(std::string_view text) const;
  // Stops at the first eos; pad and bos are skipped.
  std::string decode(std::span<const int> ids) const;

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  int id(const std::string& token) const;

  // One token per line; line number = id.
  void save(const std::filesystem::path& path) const;
  static Tokenizer load(const std::filesystem::path& path);

 private:
  void add(const std::string& token);
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

/// Low-rank update W + (alpha / rank) * B A on a frozen base weight.
struct LoraAdapter {
  std::string target;
  std::size_t rank = 0;
  double alpha = 0.0;
  Parameter a;  // rank x d_in
  Parameter b;  // d_out x rank, zero at attach time

  double scaling() const { return alpha / static_cast<double>(rank); }
};

/// Symmetric per-tensor int8 weights: w ~= scale * q.
struct QuantizedLinear {
  Shape shape;
  std::vector<std::int8_t> q;
  double scale = 1.0;
  std::optional<Tensor> bias;

  Tensor dequantized() const;
};

QuantizedLinear quantize_int8(const Tensor& weight, std::optional<Tensor> bias = std::nullopt);
// x * dequantize(q) + bias.
Tensor dequant_matmul(const QuantizedLinear& q, const Tensor& x);

/// y = x W (+ b) with W stored d_in x d_out, optionally int8-backed and/or
/// LoRA-adapted.
struct Linear {
  std::string name;
  Parameter weight;
  std::optional<Parameter> bias;
  std::optional<LoraAdapter> lora;
  std::optional<QuantizedLinear> quant;
  Tensor quant_cache;  // dequantized weights while `quant` is set

  std::size_t d_in() const { return weight.value.rows(); }
  std::size_t d_out() const { return weight.value.cols(); }
  Var forward(Tape& tape, Var x);
};

struct Norm {
  Parameter gain;
  Parameter bias;
  Var forward(Tape& tape, Var x);
};

struct Attention {
  Linear q, k, v, o;
  std::size_t heads = 1;
  // mask is [Sq x Sk], non-zero = query may attend to key.
  Var forward(Tape& tape, Var xq, Var xkv, std::span<const std::uint8_t> mask);
};

struct FeedForward {
  Linear wi, wo;
  Var forward(Tape& tape, Var x);
};

struct EncoderLayer {
  Norm ln1;
  Attention attn;
  Norm ln2;
  FeedForward ffn;
};

struct DecoderLayer {
  Norm ln1;
  Attention self_attn;
  Norm ln2;
  Attention cross_attn;
  Norm ln3;
  FeedForward ffn;
};

/// Pre-norm encoder-decoder transformer with learned absolute positions.
class LanguageModel {
 public:
  LanguageModel() = default;
  LanguageModel(const ModelSpec& spec, SeededRng& rng);

  Parameter embed;    // vocab x d
  Parameter enc_pos;  // max_seq x d
  Parameter dec_pos;  // max_seq x d
  std::vector<EncoderLayer> encoder;
  Norm enc_final;
  std::vector<DecoderLayer> decoder;
  Norm dec_final;
  std::optional<Linear> head;  // absent when embeddings are tied

  std::size_t d_model() const { return embed.value.cols(); }
  std::size_t vocab() const { return embed.value.rows(); }
  std::size_t max_seq() const { return enc_pos.value.rows(); }

  Var embed_tokens(Tape& tape, std::span<const int> ids);
  // Adds encoder positions to rows [0, S).
  Var add_encoder_positions(Tape& tape, Var x);
  // Layer stack over an already position-encoded sequence. pad_mask has one
  // entry per row (non-zero = real token); masked rows neither attend nor are
  // attended to. With zero layers this is the identity.
  Var encode(Tape& tape, Var x, std::span<const std::uint8_t> pad_mask);
  // Teacher-forced decoder pass; returns logits [dec_in.size() x vocab].
  Var decode(Tape& tape, Var memory, std::span<const std::uint8_t> memory_mask,
             std::span<const int> dec_in);

  std::vector<Linear*> linears();
  Linear& linear(const std::string& name);
  std::vector<Parameter*> parameters();

  static std::vector<std::string> default_lora_targets(const LanguageModel& lm);
  void attach_lora(const std::vector<std::string>& targets, std::size_t rank, double alpha,
                   SeededRng& rng);
  // W <- W + (alpha/r) (B A)^T, then drops the adapters.
  void merge_lora();
  void detach_lora();
  bool has_lora() const;
  // Replaces every LM linear weight with its int8 form (frozen).
  void quantize_base();
  void set_base_trainable(bool trainable);

 private:
  std::size_t heads_ = 1;
  int pad_id_ = 0;
};

}  // namespace mvfuse
