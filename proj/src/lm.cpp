#include "mvfuse/lm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

#include "mvfuse/error.hpp"

namespace mvfuse {

// ---------------------------------------------------------------- tokenizer

Tokenizer::Tokenizer() {
  for (const char* s : {"<pad>", "<eos>", "<unk>", "<bos>"}) add(s);
}

void Tokenizer::add(const std::string& token) {
  if (index_.count(token)) return;
  index_.emplace(token, static_cast<int>(tokens_.size()));
  tokens_.push_back(token);
}

Tokenizer Tokenizer::build(std::span<const std::string> corpus) {
  Tokenizer tok;
  for (const auto& text : corpus)
    for (const auto& w : split(text)) tok.add(w);
  return tok;
}

Tokenizer Tokenizer::from_tokens(std::vector<std::string> tokens) {
  const Tokenizer base;
  if (tokens.size() < 4 || !std::equal(base.tokens_.begin(), base.tokens_.end(), tokens.begin())) {
    throw DataError("vocabulary must begin with <pad>, <eos>, <unk>, <bos>");
  }
  Tokenizer tok;
  for (std::size_t i = 4; i < tokens.size(); ++i) {
    if (tok.index_.count(tokens[i])) throw DataError("duplicate vocabulary token '" + tokens[i] + "'");
    tok.add(tokens[i]);
  }
  return tok;
}

std::vector<std::string> Tokenizer::split(std::string_view text) {
  std::vector<std::string> out;
  std::string word;
  auto is_word = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; };
  auto all_digits = [](const std::string& w) {
    return !w.empty() && std::all_of(w.begin(), w.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
  };
  auto flush = [&] {
    if (!word.empty()) out.push_back(std::move(word));
    word.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (is_word(c)) {
      word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    } else if (c == '.' && all_digits(word) && i + 1 < text.size() &&
               std::isdigit(static_cast<unsigned char>(text[i + 1]))) {
      word.push_back(c);
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else {
      flush();
      out.emplace_back(1, c);
    }
  }
  flush();
  return out;
}

int Tokenizer::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

std::vector<int> Tokenizer::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& w : split(text)) ids.push_back(id(w));
  return ids;
}

std::string Tokenizer::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (id == kEos) break;
    if (id == kPad || id == kBos) continue;
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) id = kUnk;
    if (!out.empty()) out.push_back(' ');
    out += tokens_[static_cast<std::size_t>(id)];
  }
  return out;
}

void Tokenizer::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write vocabulary " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

Tokenizer Tokenizer::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open vocabulary " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) tokens.push_back(line);
  return from_tokens(std::move(tokens));
}

// ------------------------------------------------------------- quantization

Tensor QuantizedLinear::dequantized() const {
  Tensor w(shape);
  for (std::size_t i = 0; i < q.size(); ++i) w[i] = scale * static_cast<double>(q[i]);
  return w;
}

QuantizedLinear quantize_int8(const Tensor& weight, std::optional<Tensor> bias) {
  QuantizedLinear out;
  out.shape = weight.shape();
  out.bias = std::move(bias);
  double max_abs = 0.0;
  for (double v : weight.data()) max_abs = std::max(max_abs, std::abs(v));
  out.scale = max_abs > 0 ? max_abs / 127.0 : 1.0;
  out.q.resize(weight.size());
  for (std::size_t i = 0; i < weight.size(); ++i) {
    const double r = std::nearbyint(weight[i] / out.scale);
    out.q[i] = static_cast<std::int8_t>(std::clamp(r, -127.0, 127.0));
  }
  return out;
}

Tensor dequant_matmul(const QuantizedLinear& q, const Tensor& x) {
  Tape tape(false);
  Var y = matmul(tape.constant(x.rank() == 2 ? x : x.reshaped({1, x.size()})),
                 tape.constant(q.dequantized()));
  if (q.bias) y = add_bias(y, tape.constant(*q.bias));
  return y.value();
}

// ------------------------------------------------------------------- layers

Var Linear::forward(Tape& tape, Var x) {
  Var w = quant ? tape.constant(quant_cache) : tape.param(weight);
  Var y = matmul(x, w);
  if (bias) y = add_bias(y, tape.param(*bias));
  if (lora) {
    Var down = matmul(x, transpose(tape.param(lora->a)));
    Var up = matmul(down, transpose(tape.param(lora->b)));
    y = add(y, scale(up, lora->scaling()));
  }
  return y;
}

Var Norm::forward(Tape& tape, Var x) {
  return layer_norm(x, tape.param(gain), tape.param(bias));
}

Var Attention::forward(Tape& tape, Var xq, Var xkv, std::span<const std::uint8_t> mask) {
  Var qa = q.forward(tape, xq);
  Var ka = k.forward(tape, xkv);
  Var va = v.forward(tape, xkv);
  const std::size_t d = qa.value().cols();
  const std::size_t dh = d / heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Var qh = heads == 1 ? qa : slice_cols(qa, h * dh, dh);
    Var kh = heads == 1 ? ka : slice_cols(ka, h * dh, dh);
    Var vh = heads == 1 ? va : slice_cols(va, h * dh, dh);
    Var scores = scale(matmul(qh, transpose(kh)), inv);
    outs.push_back(matmul(masked_softmax(scores, mask), vh));
  }
  Var merged = heads == 1 ? outs[0] : concat_cols(outs);
  return o.forward(tape, merged);
}

Var FeedForward::forward(Tape& tape, Var x) {
  return wo.forward(tape, relu(wi.forward(tape, x)));
}

// ---------------------------------------------------------- language model

namespace {

Linear make_linear(const std::string& name, std::size_t in, std::size_t out, double std,
                   SeededRng& rng) {
  Linear l;
  l.name = name;
  l.weight = {name + ".weight", ParamGroup::kLm, rng.normal({in, out}, std), {}, true};
  return l;
}

Norm make_norm(const std::string& name, std::size_t d) {
  return {{name + ".gain", ParamGroup::kLm, Tensor({d}, 1.0), {}, true},
          {name + ".bias", ParamGroup::kLm, Tensor({d}, 0.0), {}, true}};
}

Attention make_attention(const std::string& name, std::size_t d, std::size_t heads, double std,
                         SeededRng& rng) {
  Attention a;
  a.heads = heads;
  a.q = make_linear(name + ".q", d, d, std, rng);
  a.k = make_linear(name + ".k", d, d, std, rng);
  a.v = make_linear(name + ".v", d, d, std, rng);
  a.o = make_linear(name + ".o", d, d, std, rng);
  return a;
}

FeedForward make_ffn(const std::string& name, std::size_t d, std::size_t ff, double std,
                     SeededRng& rng) {
  return {make_linear(name + ".wi", d, ff, std, rng), make_linear(name + ".wo", ff, d, std, rng)};
}

std::vector<std::uint8_t> pair_mask(std::span<const std::uint8_t> q, std::span<const std::uint8_t> k) {
  std::vector<std::uint8_t> m(q.size() * k.size());
  for (std::size_t i = 0; i < q.size(); ++i)
    for (std::size_t j = 0; j < k.size(); ++j) m[i * k.size() + j] = q[i] && k[j];
  return m;
}

}  // namespace

LanguageModel::LanguageModel(const ModelSpec& spec, SeededRng& rng) : heads_(spec.n_heads) {
  spec.validate();
  if (spec.vocab_size < 4) throw ConfigError("vocab_size must cover the four special tokens");
  const std::size_t d = spec.d_model;
  const double std = spec.init_std;
  embed = {"lm.embed", ParamGroup::kLm, rng.normal({spec.vocab_size, d}, std), {}, true};
  enc_pos = {"lm.enc.pos", ParamGroup::kLm, rng.normal({spec.max_seq, d}, std), {}, true};
  dec_pos = {"lm.dec.pos", ParamGroup::kLm, rng.normal({spec.max_seq, d}, std), {}, true};
  for (std::size_t l = 0; l < spec.n_enc_layers; ++l) {
    const std::string p = "lm.enc." + std::to_string(l);
    EncoderLayer layer;
    layer.ln1 = make_norm(p + ".ln1", d);
    layer.attn = make_attention(p + ".attn", d, spec.n_heads, std, rng);
    layer.ln2 = make_norm(p + ".ln2", d);
    layer.ffn = make_ffn(p + ".ffn", d, spec.d_ff, std, rng);
    encoder.push_back(std::move(layer));
  }
  enc_final = make_norm("lm.enc.final", d);
  for (std::size_t l = 0; l < spec.n_dec_layers; ++l) {
    const std::string p = "lm.dec." + std::to_string(l);
    DecoderLayer layer;
    layer.ln1 = make_norm(p + ".ln1", d);
    layer.self_attn = make_attention(p + ".self", d, spec.n_heads, std, rng);
    layer.ln2 = make_norm(p + ".ln2", d);
    layer.cross_attn = make_attention(p + ".cross", d, spec.n_heads, std, rng);
    layer.ln3 = make_norm(p + ".ln3", d);
    layer.ffn = make_ffn(p + ".ffn", d, spec.d_ff, std, rng);
    decoder.push_back(std::move(layer));
  }
  dec_final = make_norm("lm.dec.final", d);
  if (!spec.tie_embeddings) head = make_linear("lm.head", d, spec.vocab_size, std, rng);
}

Var LanguageModel::embed_tokens(Tape& tape, std::span<const int> ids) {
  return gather_rows(tape.param(embed), ids);
}

Var LanguageModel::add_encoder_positions(Tape& tape, Var x) {
  const std::size_t s = x.value().rows();
  if (s > max_seq()) {
    throw DimensionError("encoder sequence of " + std::to_string(s) + " exceeds max_seq " +
                         std::to_string(max_seq()));
  }
  return add(x, slice_rows(tape.param(enc_pos), 0, s));
}

Var LanguageModel::encode(Tape& tape, Var x, std::span<const std::uint8_t> pad_mask) {
  const std::size_t s = x.value().rows();
  if (pad_mask.size() != s) {
    throw DimensionError("pad mask has " + std::to_string(pad_mask.size()) +
                         " entries for a sequence of " + std::to_string(s));
  }
  if (x.value().cols() != d_model()) {
    throw DimensionError("encoder input width " + std::to_string(x.value().cols()) +
                         " does not match d_model " + std::to_string(d_model()));
  }
  if (encoder.empty()) return x;
  const auto mask = pair_mask(pad_mask, pad_mask);
  for (auto& layer : encoder) {
    Var h = layer.ln1.forward(tape, x);
    x = add(x, layer.attn.forward(tape, h, h, mask));
    x = add(x, layer.ffn.forward(tape, layer.ln2.forward(tape, x)));
  }
  return enc_final.forward(tape, x);
}

Var LanguageModel::decode(Tape& tape, Var memory, std::span<const std::uint8_t> memory_mask,
                          std::span<const int> dec_in) {
  const std::size_t t = dec_in.size();
  if (t == 0 || t > max_seq()) {
    throw DimensionError("decoder input length " + std::to_string(t) + " outside [1, " +
                         std::to_string(max_seq()) + "]");
  }
  if (memory_mask.size() != memory.value().rows()) {
    throw DimensionError("memory mask length mismatch");
  }
  Var x = add(embed_tokens(tape, dec_in), slice_rows(tape.param(dec_pos), 0, t));
  std::vector<std::uint8_t> causal(t * t, 0);
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j <= i; ++j) causal[i * t + j] = 1;
  const std::vector<std::uint8_t> all(t, 1);
  const auto cross = pair_mask(all, memory_mask);
  for (auto& layer : decoder) {
    Var h = layer.ln1.forward(tape, x);
    x = add(x, layer.self_attn.forward(tape, h, h, causal));
    x = add(x, layer.cross_attn.forward(tape, layer.ln2.forward(tape, x), memory, cross));
    x = add(x, layer.ffn.forward(tape, layer.ln3.forward(tape, x)));
  }
  x = dec_final.forward(tape, x);
  if (head) return head->forward(tape, x);
  return matmul(x, transpose(tape.param(embed)));
}

std::vector<Linear*> LanguageModel::linears() {
  std::vector<Linear*> out;
  for (auto& l : encoder) {
    for (Linear* p : {&l.attn.q, &l.attn.k, &l.attn.v, &l.attn.o, &l.ffn.wi, &l.ffn.wo}) out.push_back(p);
  }
  for (auto& l : decoder) {
    for (Linear* p : {&l.self_attn.q, &l.self_attn.k, &l.self_attn.v, &l.self_attn.o,
                      &l.cross_attn.q, &l.cross_attn.k, &l.cross_attn.v, &l.cross_attn.o,
                      &l.ffn.wi, &l.ffn.wo})
      out.push_back(p);
  }
  if (head) out.push_back(&*head);
  return out;
}

Linear& LanguageModel::linear(const std::string& name) {
  for (Linear* l : linears())
    if (l->name == name) return *l;
  throw ConfigError("unknown weight matrix '" + name + "'");
}

std::vector<Parameter*> LanguageModel::parameters() {
  std::vector<Parameter*> out{&embed, &enc_pos, &dec_pos};
  auto add_norm = [&](Norm& n) {
    out.push_back(&n.gain);
    out.push_back(&n.bias);
  };
  auto add_linear = [&](Linear& l) {
    out.push_back(&l.weight);
    if (l.bias) out.push_back(&*l.bias);
    if (l.lora) {
      out.push_back(&l.lora->a);
      out.push_back(&l.lora->b);
    }
  };
  auto add_attn = [&](Attention& a) {
    for (Linear* l : {&a.q, &a.k, &a.v, &a.o}) add_linear(*l);
  };
  for (auto& l : encoder) {
    add_norm(l.ln1);
    add_attn(l.attn);
    add_norm(l.ln2);
    add_linear(l.ffn.wi);
    add_linear(l.ffn.wo);
  }
  add_norm(enc_final);
  for (auto& l : decoder) {
    add_norm(l.ln1);
    add_attn(l.self_attn);
    add_norm(l.ln2);
    add_attn(l.cross_attn);
    add_norm(l.ln3);
    add_linear(l.ffn.wi);
    add_linear(l.ffn.wo);
  }
  add_norm(dec_final);
  if (head) add_linear(*head);
  return out;
}

std::vector<std::string> LanguageModel::default_lora_targets(const LanguageModel& lm) {
  std::vector<std::string> out;
  auto& self = const_cast<LanguageModel&>(lm);
  for (Linear* l : self.linears()) {
    const auto& n = l->name;
    if (n.size() > 2 && (n.ends_with(".q") || n.ends_with(".v"))) out.push_back(n);
  }
  return out;
}

void LanguageModel::attach_lora(const std::vector<std::string>& targets, std::size_t rank,
                                double alpha, SeededRng& rng) {
  if (rank == 0) throw ConfigError("LoRA rank must be positive");
  // Resolve every name before touching the model.
  std::vector<Linear*> resolved;
  for (const auto& t : targets) resolved.push_back(&linear(t));
  for (Linear* l : resolved) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(l->d_in()));
    Tensor a({rank, l->d_in()});
    for (auto& v : a.storage()) v = rng.uniform(-bound, bound);
    LoraAdapter ad;
    ad.target = l->name;
    ad.rank = rank;
    ad.alpha = alpha;
    ad.a = {l->name + ".lora_a", ParamGroup::kLora, std::move(a), {}, true};
    ad.b = {l->name + ".lora_b", ParamGroup::kLora, Tensor({l->d_out(), rank}, 0.0), {}, true};
    l->lora = std::move(ad);
  }
}

void LanguageModel::merge_lora() {
  for (Linear* l : linears()) {
    if (!l->lora) continue;
    const auto& ad = *l->lora;
    const std::size_t din = l->d_in(), dout = l->d_out(), r = ad.rank;
    Tensor w = l->quant ? l->quant_cache : l->weight.value;
    const double s = ad.scaling();
    for (std::size_t i = 0; i < din; ++i) {
      for (std::size_t j = 0; j < dout; ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < r; ++k) acc += ad.b.value[j * r + k] * ad.a.value[k * din + i];
        w[i * dout + j] += s * acc;
      }
    }
    l->weight.value = std::move(w);
    l->quant.reset();
    l->lora.reset();
  }
}

void LanguageModel::detach_lora() {
  for (Linear* l : linears()) l->lora.reset();
}

bool LanguageModel::has_lora() const {
  auto& self = const_cast<LanguageModel&>(*this);
  for (Linear* l : self.linears())
    if (l->lora) return true;
  return false;
}

void LanguageModel::quantize_base() {
  for (Linear* l : linears()) {
    std::optional<Tensor> b;
    if (l->bias) b = l->bias->value;
    l->quant = quantize_int8(l->weight.value, b);
    l->quant_cache = l->quant->dequantized();
    l->weight.value = l->quant_cache;
    l->weight.trainable = false;
  }
}

void LanguageModel::set_base_trainable(bool trainable) {
  for (Parameter* p : parameters()) {
    if (p->group != ParamGroup::kLm) continue;
    p->trainable = trainable;
  }
  if (trainable) {
    for (Linear* l : linears())
      if (l->quant) l->weight.trainable = false;
  }
}

}  // namespace mvfuse
