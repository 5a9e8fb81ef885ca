#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mvfuse/model_spec.hpp"

namespace mvfuse {

enum class LayerKind {
  kEmbedding,    // vocab x dim lookup table
  kPosition,     // learned rows x dim table
  kNorm,         // layer norm (gain + bias) or rms norm (gain)
  kLinear,       // d_in x d_out (+ bias)
  kAttention,    // q, k, v, o projections + pre-norm (+ relative position table)
  kFeedForward,  // two (or three, gated) matrices + pre-norm
  kFusionGate,   // gated pooling: w (K), Z and G (K x M)
  kProjection,   // H_I x H_T + bias
  kPatchEmbed,   // shared patch projection (+ bias, + positions)
  kLora,         // rank x d_in and d_out x rank factors
  kLmHead,       // d_model x vocab, no parameters when tied
};

const char* layer_kind_name(LayerKind k);

// Which sequence a layer runs over when counting FLOPs.
enum class Stream { kEncoder, kDecoder, kImage, kNone };

struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::kLinear;
  std::string group = "lm";  // patch, fusion, projection, lm, lora
  Stream stream = Stream::kEncoder;
  // Key/value stream for cross attention.
  Stream kv_stream = Stream::kEncoder;
  std::size_t d_in = 0, d_out = 0;
  std::size_t vocab = 0, dim = 0, rows = 0;
  std::size_t heads = 0, d_kv = 0, d_ff = 0;
  std::size_t k = 0, m = 0, views = 0;
  std::size_t patch = 0, channels = 3, seq = 0;
  std::size_t rank = 0, rel_buckets = 0;
  bool bias = false, gated = false, tied = false, positions = true;
  std::string norm = "layer";  // layer | rms | none
};

struct ArchSpec {
  std::string name;
  std::vector<LayerSpec> layers;
  std::map<std::string, int> bits;  // per group; absent groups use 32
  std::size_t image_seq = 0;        // S_I
  std::size_t views = 1;

  int bits_of(const std::string& group) const;
  std::vector<std::string> problems() const;
  void validate() const;
};

void to_json(nlohmann::json& j, const ArchSpec& a);
void from_json(const nlohmann::json& j, ArchSpec& a);

struct SeqLengths {
  std::size_t s_enc = 0;
  std::size_t s_dec = 0;
};

struct CostReport {
  std::string name;
  std::uint64_t total_params = 0;
  std::map<std::string, std::uint64_t> params_by_group;
  std::map<std::string, std::uint64_t> params_by_layer;
  // Forward FLOPs, one multiply-accumulate = one FLOP.
  std::uint64_t flops = 0;
  std::map<std::string, std::uint64_t> flops_by_group;
  std::map<std::string, std::uint64_t> flops_by_stream;
  SeqLengths seq;
  double memory_bytes = 0.0;
  double memory_gb = 0.0;
  bool gib = false;

  nlohmann::json to_json() const;
  std::string table() const;
};

std::uint64_t layer_params(const LayerSpec& l);
std::uint64_t layer_flops(const LayerSpec& l, const ArchSpec& arch, const SeqLengths& seq);

CostReport count_params(const ArchSpec& arch);
std::uint64_t estimate_flops(const ArchSpec& arch, const SeqLengths& seq);
// Sum of params x bits / 8, divided by 1e9 (or 2^30 when gib is set).
double memory_report(const ArchSpec& arch, bool gib = false);
CostReport full_report(const ArchSpec& arch, const SeqLengths& seq, bool gib = false);

// Presets: t5-base, t5-large, base (EM-VLM4AD Base), q-large, desk.
ArchSpec preset(const std::string& name);
std::vector<std::string> preset_names();
// Sequence lengths assumed for the published comparison: S_enc = 60 + 49, S_dec = 40.
SeqLengths published_seq();

/// Exact description of the runnable model built from `spec`.
ArchSpec arch_from_model_spec(const ModelSpec& spec);

struct PublishedRow {
  std::string model;
  std::string pretrained;
  double params = 0.0;  // published
  double flops = 0.0;
  double memory_gb = 0.0;
  // Estimates from this toolkit (only for the two EM-VLM4AD rows).
  bool estimated = false;
  double est_params = 0.0, est_flops = 0.0, est_memory_gb = 0.0;
};

std::vector<PublishedRow> published_rows(const SeqLengths& seq = published_seq());
std::string published_table(const std::vector<PublishedRow>& rows, const SeqLengths& seq);

}  // namespace mvfuse
