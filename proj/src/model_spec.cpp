#include "mvfuse/model_spec.hpp"

#include <nlohmann/json.hpp>

#include "mvfuse/error.hpp"

namespace mvfuse {

std::vector<std::string> ModelSpec::problems() const {
  std::vector<std::string> out;
  auto positive = [&](std::size_t v, const char* name) {
    if (v == 0) out.push_back(std::string(name) + " must be positive");
  };
  positive(d_model, "d_model");
  positive(n_heads, "n_heads");
  positive(d_ff, "d_ff");
  positive(max_seq, "max_seq");
  positive(image_size, "image_size");
  positive(patch, "patch");
  positive(image_hidden, "image_hidden");
  positive(n_views, "n_views");
  positive(fusion_k, "fusion_k");
  if (n_heads && d_model % n_heads != 0) out.push_back("d_model must be divisible by n_heads");
  if (patch && image_size % patch != 0) out.push_back("image_size must be a multiple of patch");
  if (patch && image_size >= patch && image_seq() >= max_seq) {
    out.push_back("max_seq must exceed the image sequence length " + std::to_string(image_seq()));
  }
  if (!(init_std > 0)) out.push_back("init_std must be positive");
  if (lora.enabled) {
    if (lora.rank == 0) out.push_back("lora.rank must be positive");
    if (!(lora.alpha > 0)) out.push_back("lora.alpha must be positive");
  }
  return out;
}

void ModelSpec::validate() const {
  auto p = problems();
  if (p.empty()) return;
  std::string msg = "invalid model spec:";
  for (const auto& s : p) msg += "\n  - " + s;
  throw ConfigError(msg);
}

void to_json(nlohmann::json& j, const LoraSpec& s) {
  j = {{"enabled", s.enabled},
       {"rank", s.rank},
       {"alpha", s.alpha},
       {"targets", s.targets},
       {"quantize_base", s.quantize_base}};
}

namespace {

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known,
                    const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  std::string bad;
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) bad += (bad.empty() ? "" : ", ") + key;
  }
  if (!bad.empty()) throw ConfigError(where + ": unknown keys: " + bad);
}

template <typename T>
void take(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

void from_json(const nlohmann::json& j, LoraSpec& s) {
  reject_unknown(j, {"enabled", "rank", "alpha", "targets", "quantize_base"}, "model.lora");
  take(j, "enabled", s.enabled);
  take(j, "rank", s.rank);
  take(j, "alpha", s.alpha);
  take(j, "targets", s.targets);
  take(j, "quantize_base", s.quantize_base);
}

void to_json(nlohmann::json& j, const ModelSpec& s) {
  j = {{"d_model", s.d_model},
       {"n_enc_layers", s.n_enc_layers},
       {"n_dec_layers", s.n_dec_layers},
       {"n_heads", s.n_heads},
       {"d_ff", s.d_ff},
       {"vocab_size", s.vocab_size},
       {"max_seq", s.max_seq},
       {"tie_embeddings", s.tie_embeddings},
       {"init_std", s.init_std},
       {"image_size", s.image_size},
       {"patch", s.patch},
       {"image_hidden", s.image_hidden},
       {"n_views", s.n_views},
       {"fusion_k", s.fusion_k},
       {"lora", s.lora}};
}

void from_json(const nlohmann::json& j, ModelSpec& s) {
  reject_unknown(j,
                 {"d_model", "n_enc_layers", "n_dec_layers", "n_heads", "d_ff", "vocab_size",
                  "max_seq", "tie_embeddings", "init_std", "image_size", "patch", "image_hidden",
                  "n_views", "fusion_k", "lora"},
                 "model");
  take(j, "d_model", s.d_model);
  take(j, "n_enc_layers", s.n_enc_layers);
  take(j, "n_dec_layers", s.n_dec_layers);
  take(j, "n_heads", s.n_heads);
  take(j, "d_ff", s.d_ff);
  take(j, "vocab_size", s.vocab_size);
  take(j, "max_seq", s.max_seq);
  take(j, "tie_embeddings", s.tie_embeddings);
  take(j, "init_std", s.init_std);
  take(j, "image_size", s.image_size);
  take(j, "patch", s.patch);
  take(j, "image_hidden", s.image_hidden);
  take(j, "n_views", s.n_views);
  take(j, "fusion_k", s.fusion_k);
  take(j, "lora", s.lora);
}

}  // namespace mvfuse
