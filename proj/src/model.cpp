#include "mvfuse/model.hpp"

#include <algorithm>

#include "mvfuse/error.hpp"

namespace mvfuse {

VisionLanguageModel::VisionLanguageModel(ModelSpec spec, std::uint64_t seed)
    : spec_(std::move(spec)) {
  spec_.validate();
  SeededRng rng(seed);
  patch = PatchEmbedder(spec_.image_size, spec_.patch, spec_.image_hidden, rng);
  fusion = GatedPoolParams(spec_.fusion_k, spec_.fusion_m(), rng);
  proj = ProjectionLayer(spec_.image_hidden, spec_.d_model, rng);
  lm = LanguageModel(spec_, rng);
  if (spec_.lora.enabled) apply_lora_spec(seed);
}

void VisionLanguageModel::apply_lora_spec(std::uint64_t seed) {
  // Separate stream so base weights match the non-LoRA model for the same seed.
  SeededRng rng(seed ^ 0x4c6f5241ULL);
  auto targets = spec_.lora.targets.empty() ? LanguageModel::default_lora_targets(lm)
                                            : spec_.lora.targets;
  if (spec_.lora.quantize_base) lm.quantize_base();
  lm.attach_lora(targets, spec_.lora.rank, spec_.lora.alpha, rng);
}

std::vector<Parameter*> VisionLanguageModel::parameters() {
  std::vector<Parameter*> out{&patch.projection, &patch.bias, &patch.position,
                              &fusion.w,         &fusion.z,   &fusion.g,
                              &proj.weight,      &proj.bias};
  for (Parameter* p : lm.parameters()) out.push_back(p);
  return out;
}

std::vector<const Parameter*> VisionLanguageModel::parameters() const {
  auto ps = const_cast<VisionLanguageModel&>(*this).parameters();
  return {ps.begin(), ps.end()};
}

Parameter* VisionLanguageModel::find(const std::string& name) {
  for (Parameter* p : parameters())
    if (p->name == name) return p;
  return nullptr;
}

std::size_t VisionLanguageModel::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter* p : parameters()) n += p->value.size();
  return n;
}

std::vector<Tensor> VisionLanguageModel::embed_views(std::span<const Image> views) const {
  std::vector<Tensor> out;
  out.reserve(views.size());
  for (const auto& img : views) out.push_back(embed_view(img, patch));
  return out;
}

std::vector<int> VisionLanguageModel::encoder_text(std::span<const int> question) const {
  const std::size_t budget = spec_.max_seq - spec_.image_seq();
  std::vector<int> ids(question.begin(), question.end());
  if (ids.size() + 1 > budget) ids.resize(budget - 1);
  ids.push_back(Tokenizer::kEos);
  return ids;
}

Var VisionLanguageModel::multimodal_embedding(Tape& tape, std::span<const Var> views,
                                              std::span<const int> question) {
  if (views.size() != spec_.n_views) {
    throw DimensionError("model expects " + std::to_string(spec_.n_views) + " views, got " +
                         std::to_string(views.size()));
  }
  FusionVars f = mvfuse::fuse(tape, views, fusion);
  const auto text_ids = encoder_text(question);
  Var text = lm.embed_tokens(tape, text_ids);
  Var mm = project_and_concat(tape, f.fused, proj, text);
  return lm.add_encoder_positions(tape, mm);
}

Var VisionLanguageModel::answer_loss(Tape& tape, std::span<const Var> views,
                                     std::span<const int> question, std::span<const int> answer) {
  Var mm = multimodal_embedding(tape, views, question);
  const std::vector<std::uint8_t> mask(mm.value().rows(), 1);
  Var memory = lm.encode(tape, mm, mask);
  const std::size_t limit = spec_.max_seq;
  std::vector<int> dec_in{Tokenizer::kBos};
  std::vector<int> targets;
  for (int id : answer) {
    if (dec_in.size() == limit) break;
    dec_in.push_back(id);
    targets.push_back(id);
  }
  targets.push_back(Tokenizer::kEos);
  Var logits = lm.decode(tape, memory, mask, dec_in);
  return cross_entropy(logits, targets, Tokenizer::kPad);
}

std::vector<int> VisionLanguageModel::generate(std::span<const Tensor> views,
                                               std::span<const int> question,
                                               std::size_t max_len) const {
  if (max_len == 0) throw ConfigError("max_len must be at least 1");
  // Gradient recording is off, so the model is only read.
  auto& self = const_cast<VisionLanguageModel&>(*this);
  Tape tape(false);
  std::vector<Var> vars;
  for (const auto& v : views) vars.push_back(tape.constant(v));
  Var mm = self.multimodal_embedding(tape, vars, question);
  const std::vector<std::uint8_t> mask(mm.value().rows(), 1);
  Var memory = self.lm.encode(tape, mm, mask);
  std::vector<int> dec_in{Tokenizer::kBos};
  std::vector<int> out;
  max_len = std::min(max_len, spec_.max_seq);
  while (out.size() < max_len) {
    Var logits = self.lm.decode(tape, memory, mask, dec_in);
    const Tensor& l = logits.value();
    const std::size_t v = l.cols();
    const double* last = &l[(l.rows() - 1) * v];
    const int best = static_cast<int>(std::max_element(last, last + v) - last);
    out.push_back(best);
    if (best == Tokenizer::kEos) break;
    dec_in.push_back(best);
  }
  return out;
}

}  // namespace mvfuse
