#include "mvfuse/cost.hpp"

#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "mvfuse/error.hpp"

namespace mvfuse {

using json = nlohmann::json;

namespace {

const std::map<LayerKind, const char*> kKindNames = {
    {LayerKind::kEmbedding, "embedding"},     {LayerKind::kPosition, "position"},
    {LayerKind::kNorm, "norm"},               {LayerKind::kLinear, "linear"},
    {LayerKind::kAttention, "attention"},     {LayerKind::kFeedForward, "feed_forward"},
    {LayerKind::kFusionGate, "fusion_gate"},  {LayerKind::kProjection, "projection"},
    {LayerKind::kPatchEmbed, "patch_embed"},  {LayerKind::kLora, "lora"},
    {LayerKind::kLmHead, "lm_head"},
};

const std::map<Stream, const char*> kStreamNames = {
    {Stream::kEncoder, "enc"}, {Stream::kDecoder, "dec"}, {Stream::kImage, "image"},
    {Stream::kNone, "none"}};

template <typename E>
E parse_enum(const std::map<E, const char*>& names, const std::string& s, const char* what) {
  for (const auto& [e, n] : names)
    if (s == n) return e;
  throw ConfigError(std::string("unknown ") + what + " '" + s + "'");
}

std::uint64_t norm_params(const std::string& norm, std::size_t dim) {
  if (norm == "layer") return 2 * dim;
  if (norm == "rms") return dim;
  return 0;
}

std::size_t inner_dim(const LayerSpec& l) {
  return l.heads * (l.d_kv ? l.d_kv : (l.heads ? l.dim / l.heads : 0));
}

std::size_t stream_len(Stream s, const ArchSpec& arch, const SeqLengths& seq) {
  switch (s) {
    case Stream::kEncoder: return seq.s_enc;
    case Stream::kDecoder: return seq.s_dec;
    case Stream::kImage: return arch.image_seq;
    case Stream::kNone: return 0;
  }
  return 0;
}

std::string fmt_count(double v) {
  char buf[64];
  if (v >= 1e9)
    std::snprintf(buf, sizeof buf, "%.2fB", v / 1e9);
  else if (v >= 1e6)
    std::snprintf(buf, sizeof buf, "%.1fM", v / 1e6);
  else if (v >= 1e3)
    std::snprintf(buf, sizeof buf, "%.1fK", v / 1e3);
  else
    std::snprintf(buf, sizeof buf, "%.0f", v);
  return buf;
}

}  // namespace

const char* layer_kind_name(LayerKind k) { return kKindNames.at(k); }

int ArchSpec::bits_of(const std::string& group) const {
  auto it = bits.find(group);
  return it == bits.end() ? 32 : it->second;
}

std::vector<std::string> ArchSpec::problems() const {
  std::vector<std::string> out;
  for (const auto& [g, b] : bits)
    if (b != 32 && b != 8) out.push_back("group " + g + ": precision must be 32 or 8 bits");
  auto need = [&](const LayerSpec& l, std::size_t v, const char* field) {
    if (v == 0) out.push_back("layer " + l.name + ": " + field + " must be positive");
  };
  for (const auto& l : layers) {
    switch (l.kind) {
      case LayerKind::kEmbedding: need(l, l.vocab, "vocab"); need(l, l.dim, "dim"); break;
      case LayerKind::kPosition: need(l, l.rows, "rows"); need(l, l.dim, "dim"); break;
      case LayerKind::kNorm: need(l, l.dim, "dim"); break;
      case LayerKind::kLinear:
      case LayerKind::kProjection: need(l, l.d_in, "d_in"); need(l, l.d_out, "d_out"); break;
      case LayerKind::kAttention:
        need(l, l.dim, "dim");
        need(l, l.heads, "heads");
        if (l.heads && !l.d_kv && l.dim % l.heads != 0)
          out.push_back("layer " + l.name + ": dim must be divisible by heads");
        break;
      case LayerKind::kFeedForward: need(l, l.dim, "dim"); need(l, l.d_ff, "d_ff"); break;
      case LayerKind::kFusionGate:
        need(l, l.k, "k");
        need(l, l.m, "m");
        need(l, l.views, "views");
        break;
      case LayerKind::kPatchEmbed:
        need(l, l.patch, "patch");
        need(l, l.channels, "channels");
        need(l, l.dim, "dim");
        need(l, l.seq, "seq");
        need(l, l.views, "views");
        break;
      case LayerKind::kLora:
        need(l, l.rank, "rank");
        need(l, l.d_in, "d_in");
        need(l, l.d_out, "d_out");
        break;
      case LayerKind::kLmHead: need(l, l.dim, "dim"); need(l, l.vocab, "vocab"); break;
    }
    if (l.norm != "layer" && l.norm != "rms" && l.norm != "none")
      out.push_back("layer " + l.name + ": norm must be layer, rms or none");
  }
  return out;
}

void ArchSpec::validate() const {
  const auto p = problems();
  if (p.empty()) return;
  std::string msg = "invalid architecture spec:";
  for (const auto& s : p) msg += "\n  " + s;
  throw ConfigError(msg);
}

void to_json(json& j, const ArchSpec& a) {
  json layers = json::array();
  for (const auto& l : a.layers) {
    json o = {{"name", l.name}, {"kind", layer_kind_name(l.kind)}, {"group", l.group}};
    switch (l.kind) {
      case LayerKind::kEmbedding: o["vocab"] = l.vocab; o["dim"] = l.dim; break;
      case LayerKind::kPosition: o["rows"] = l.rows; o["dim"] = l.dim; break;
      case LayerKind::kNorm: o["dim"] = l.dim; o["norm"] = l.norm; break;
      case LayerKind::kLinear:
      case LayerKind::kProjection:
        o["d_in"] = l.d_in;
        o["d_out"] = l.d_out;
        o["bias"] = l.bias;
        o["stream"] = kStreamNames.at(l.stream);
        break;
      case LayerKind::kAttention:
        o["dim"] = l.dim;
        o["heads"] = l.heads;
        o["d_kv"] = l.d_kv;
        o["bias"] = l.bias;
        o["norm"] = l.norm;
        o["rel_buckets"] = l.rel_buckets;
        o["stream"] = kStreamNames.at(l.stream);
        o["kv_stream"] = kStreamNames.at(l.kv_stream);
        break;
      case LayerKind::kFeedForward:
        o["dim"] = l.dim;
        o["d_ff"] = l.d_ff;
        o["gated"] = l.gated;
        o["bias"] = l.bias;
        o["norm"] = l.norm;
        o["stream"] = kStreamNames.at(l.stream);
        break;
      case LayerKind::kFusionGate: o["k"] = l.k; o["m"] = l.m; o["views"] = l.views; break;
      case LayerKind::kPatchEmbed:
        o["patch"] = l.patch;
        o["channels"] = l.channels;
        o["dim"] = l.dim;
        o["seq"] = l.seq;
        o["views"] = l.views;
        o["bias"] = l.bias;
        o["positions"] = l.positions;
        break;
      case LayerKind::kLora:
        o["rank"] = l.rank;
        o["d_in"] = l.d_in;
        o["d_out"] = l.d_out;
        o["stream"] = kStreamNames.at(l.stream);
        break;
      case LayerKind::kLmHead:
        o["dim"] = l.dim;
        o["vocab"] = l.vocab;
        o["tied"] = l.tied;
        o["stream"] = kStreamNames.at(l.stream);
        break;
    }
    layers.push_back(std::move(o));
  }
  j = json{{"name", a.name},
           {"image_seq", a.image_seq},
           {"views", a.views},
           {"bits", a.bits},
           {"layers", layers}};
}

void from_json(const json& j, ArchSpec& a) {
  if (!j.is_object()) throw ConfigError("architecture spec must be a JSON object");
  static const std::set<std::string> top = {"name", "image_seq", "views", "bits", "layers"};
  static const std::set<std::string> layer_keys = {
      "name",  "kind",  "group", "stream", "kv_stream", "d_in",  "d_out",       "vocab",
      "dim",   "rows",  "heads", "d_kv",   "d_ff",      "k",     "m",           "views",
      "patch", "channels", "seq", "rank",  "rel_buckets", "bias", "gated",     "tied",
      "positions", "norm"};
  std::vector<std::string> unknown;
  for (const auto& [k, v] : j.items())
    if (!top.count(k)) unknown.push_back(k);
  try {
    a = ArchSpec{};
    a.name = j.value("name", std::string("custom"));
    a.image_seq = j.value("image_seq", std::size_t{0});
    a.views = j.value("views", std::size_t{1});
    if (j.contains("bits")) a.bits = j.at("bits").get<std::map<std::string, int>>();
    if (!j.contains("layers") || !j.at("layers").is_array())
      throw ConfigError("architecture spec needs a \"layers\" list");
    for (const auto& o : j.at("layers")) {
      for (const auto& [k, v] : o.items())
        if (!layer_keys.count(k)) unknown.push_back("layers[]." + k);
      LayerSpec l;
      l.name = o.value("name", std::string("layer") + std::to_string(a.layers.size()));
      l.kind = parse_enum(kKindNames, o.at("kind").get<std::string>(), "layer kind");
      l.group = o.value("group", std::string("lm"));
      l.stream = parse_enum(kStreamNames, o.value("stream", std::string("enc")), "stream");
      l.kv_stream = parse_enum(kStreamNames, o.value("kv_stream", std::string("enc")), "stream");
      l.d_in = o.value("d_in", std::size_t{0});
      l.d_out = o.value("d_out", std::size_t{0});
      l.vocab = o.value("vocab", std::size_t{0});
      l.dim = o.value("dim", std::size_t{0});
      l.rows = o.value("rows", std::size_t{0});
      l.heads = o.value("heads", std::size_t{0});
      l.d_kv = o.value("d_kv", std::size_t{0});
      l.d_ff = o.value("d_ff", std::size_t{0});
      l.k = o.value("k", std::size_t{0});
      l.m = o.value("m", std::size_t{0});
      l.views = o.value("views", std::size_t{0});
      l.patch = o.value("patch", std::size_t{0});
      l.channels = o.value("channels", std::size_t{3});
      l.seq = o.value("seq", std::size_t{0});
      l.rank = o.value("rank", std::size_t{0});
      l.rel_buckets = o.value("rel_buckets", std::size_t{0});
      l.bias = o.value("bias", false);
      l.gated = o.value("gated", false);
      l.tied = o.value("tied", false);
      l.positions = o.value("positions", true);
      l.norm = o.value("norm", std::string(l.kind == LayerKind::kNorm ? "layer" : "none"));
      a.layers.push_back(std::move(l));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("architecture spec: ") + e.what());
  }
  if (!unknown.empty()) {
    std::string msg = "unknown key(s) in architecture spec:";
    for (const auto& k : unknown) msg += " " + k;
    throw ConfigError(msg);
  }
}

// ------------------------------------------------------------------ counting

std::uint64_t layer_params(const LayerSpec& l) {
  switch (l.kind) {
    case LayerKind::kEmbedding: return std::uint64_t{l.vocab} * l.dim;
    case LayerKind::kPosition: return std::uint64_t{l.rows} * l.dim;
    case LayerKind::kNorm: return norm_params(l.norm, l.dim);
    case LayerKind::kLinear:
      return std::uint64_t{l.d_in} * l.d_out + (l.bias ? l.d_out : 0);
    case LayerKind::kProjection: return std::uint64_t{l.d_in} * l.d_out + l.d_out;
    case LayerKind::kAttention: {
      const std::uint64_t inner = inner_dim(l);
      std::uint64_t p = 4 * std::uint64_t{l.dim} * inner;
      if (l.bias) p += 3 * inner + l.dim;
      return p + norm_params(l.norm, l.dim) + std::uint64_t{l.rel_buckets} * l.heads;
    }
    case LayerKind::kFeedForward: {
      const std::uint64_t mats = l.gated ? 3 : 2;
      std::uint64_t p = mats * l.dim * l.d_ff;
      if (l.bias) p += (mats - 1) * l.d_ff + l.dim;
      return p + norm_params(l.norm, l.dim);
    }
    case LayerKind::kFusionGate: return std::uint64_t{l.k} + 2 * std::uint64_t{l.k} * l.m;
    case LayerKind::kPatchEmbed: {
      std::uint64_t p = std::uint64_t{l.channels} * l.patch * l.patch * l.dim;
      if (l.bias) p += l.dim;
      if (l.positions) p += std::uint64_t{l.seq} * l.dim;
      return p;
    }
    case LayerKind::kLora: return std::uint64_t{l.rank} * (l.d_in + l.d_out);
    case LayerKind::kLmHead: return l.tied ? 0 : std::uint64_t{l.dim} * l.vocab;
  }
  return 0;
}

std::uint64_t layer_flops(const LayerSpec& l, const ArchSpec& arch, const SeqLengths& seq) {
  const std::uint64_t s = stream_len(l.stream, arch, seq);
  switch (l.kind) {
    case LayerKind::kEmbedding:
    case LayerKind::kPosition:
    case LayerKind::kNorm: return 0;
    case LayerKind::kLinear:
    case LayerKind::kProjection: return s * l.d_in * l.d_out;
    case LayerKind::kAttention: {
      const std::uint64_t inner = inner_dim(l);
      const std::uint64_t sk = stream_len(l.kv_stream, arch, seq);
      const std::uint64_t kv_len = l.kv_stream == l.stream ? s : sk;
      const std::uint64_t proj = s * l.dim * inner * 2 + kv_len * l.dim * inner * 2;
      // Scores (Q K^T) and the weighted sum of values.
      const std::uint64_t contract = 2 * s * kv_len * inner;
      return proj + contract;
    }
    case LayerKind::kFeedForward: return s * l.dim * l.d_ff * (l.gated ? 3 : 2);
    case LayerKind::kFusionGate:
      return std::uint64_t{l.views} * (2 * std::uint64_t{l.k} * l.m + l.k + l.m);
    case LayerKind::kPatchEmbed:
      return std::uint64_t{l.views} * l.seq * l.channels * l.patch * l.patch * l.dim;
    case LayerKind::kLora: return s * l.rank * (l.d_in + l.d_out);
    case LayerKind::kLmHead: return s * l.dim * l.vocab;
  }
  return 0;
}

CostReport count_params(const ArchSpec& arch) {
  arch.validate();
  CostReport r;
  r.name = arch.name;
  for (const auto& l : arch.layers) {
    const auto p = layer_params(l);
    r.total_params += p;
    r.params_by_group[l.group] += p;
    r.params_by_layer[l.name] += p;
  }
  return r;
}

std::uint64_t estimate_flops(const ArchSpec& arch, const SeqLengths& seq) {
  arch.validate();
  if (seq.s_enc == 0 || seq.s_dec == 0) throw ConfigError("sequence lengths must be positive");
  std::uint64_t total = 0;
  for (const auto& l : arch.layers) total += layer_flops(l, arch, seq);
  return total;
}

double memory_report(const ArchSpec& arch, bool gib) {
  const auto r = count_params(arch);
  double bytes = 0.0;
  for (const auto& [g, p] : r.params_by_group)
    bytes += static_cast<double>(p) * arch.bits_of(g) / 8.0;
  return bytes / (gib ? 1073741824.0 : 1e9);
}

CostReport full_report(const ArchSpec& arch, const SeqLengths& seq, bool gib) {
  CostReport r = count_params(arch);
  r.seq = seq;
  r.gib = gib;
  r.flops = estimate_flops(arch, seq);
  for (const auto& l : arch.layers) {
    const auto f = layer_flops(l, arch, seq);
    r.flops_by_group[l.group] += f;
    r.flops_by_stream[kStreamNames.at(l.kind == LayerKind::kFusionGate ||
                                              l.kind == LayerKind::kPatchEmbed
                                          ? Stream::kImage
                                          : l.stream)] += f;
  }
  for (const auto& [g, p] : r.params_by_group)
    r.memory_bytes += static_cast<double>(p) * arch.bits_of(g) / 8.0;
  r.memory_gb = r.memory_bytes / (gib ? 1073741824.0 : 1e9);
  return r;
}

json CostReport::to_json() const {
  return json{{"name", name},
              {"total_params", total_params},
              {"params_by_group", params_by_group},
              {"flops", flops},
              {"flops_by_group", flops_by_group},
              {"flops_by_stream", flops_by_stream},
              {"flop_convention", "1 multiply-accumulate = 1 FLOP"},
              {"seq", {{"s_enc", seq.s_enc}, {"s_dec", seq.s_dec}}},
              {"memory_bytes", memory_bytes},
              {"memory_gb", memory_gb},
              {"memory_divisor", gib ? "2^30" : "1e9"}};
}

std::string CostReport::table() const {
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-14s %16s %10s\n", "group", "params", "FLOPs");
  os << name << "\n" << buf;
  for (const auto& [g, p] : params_by_group) {
    auto it = flops_by_group.find(g);
    const double f = it == flops_by_group.end() ? 0.0 : static_cast<double>(it->second);
    std::snprintf(buf, sizeof buf, "%-14s %16llu %10s\n", g.c_str(),
                  static_cast<unsigned long long>(p), fmt_count(f).c_str());
    os << buf;
  }
  std::snprintf(buf, sizeof buf, "%-14s %16llu %10s\n", "total",
                static_cast<unsigned long long>(total_params),
                fmt_count(static_cast<double>(flops)).c_str());
  os << buf;
  std::snprintf(buf, sizeof buf,
                "FLOPs at S_enc=%zu, S_dec=%zu (1 MAC = 1 FLOP); encoder %s, decoder %s, image %s\n",
                seq.s_enc, seq.s_dec,
                fmt_count(static_cast<double>(flops_by_stream.count("enc") ? flops_by_stream.at("enc") : 0)).c_str(),
                fmt_count(static_cast<double>(flops_by_stream.count("dec") ? flops_by_stream.at("dec") : 0)).c_str(),
                fmt_count(static_cast<double>(flops_by_stream.count("image") ? flops_by_stream.at("image") : 0)).c_str());
  os << buf;
  std::snprintf(buf, sizeof buf, "memory: %.2f %s\n", memory_gb, gib ? "GiB" : "GB");
  os << buf;
  return os.str();
}

// ------------------------------------------------------------------- presets

namespace {

struct LmShape {
  std::size_t vocab, d, layers, heads, d_kv, d_ff;
};

// T5 v1.0: rms norms, no biases, relative position table in the first layer
// of each stack, ReLU FFN, tied embeddings.
void add_t5(ArchSpec& a, const LmShape& s) {
  a.layers.push_back({.name = "lm.embed", .kind = LayerKind::kEmbedding, .vocab = s.vocab, .dim = s.d});
  for (std::size_t i = 0; i < s.layers; ++i) {
    const std::string p = "lm.enc." + std::to_string(i);
    LayerSpec att{.name = p + ".attn", .kind = LayerKind::kAttention, .stream = Stream::kEncoder,
                  .kv_stream = Stream::kEncoder, .dim = s.d, .heads = s.heads, .d_kv = s.d_kv,
                  .rel_buckets = i == 0 ? 32u : 0u, .norm = "rms"};
    a.layers.push_back(att);
    a.layers.push_back({.name = p + ".ffn", .kind = LayerKind::kFeedForward,
                        .stream = Stream::kEncoder, .dim = s.d, .d_ff = s.d_ff, .norm = "rms"});
  }
  a.layers.push_back({.name = "lm.enc.final", .kind = LayerKind::kNorm, .dim = s.d, .norm = "rms"});
  for (std::size_t i = 0; i < s.layers; ++i) {
    const std::string p = "lm.dec." + std::to_string(i);
    a.layers.push_back({.name = p + ".self", .kind = LayerKind::kAttention,
                        .stream = Stream::kDecoder, .kv_stream = Stream::kDecoder, .dim = s.d,
                        .heads = s.heads, .d_kv = s.d_kv, .rel_buckets = i == 0 ? 32u : 0u,
                        .norm = "rms"});
    a.layers.push_back({.name = p + ".cross", .kind = LayerKind::kAttention,
                        .stream = Stream::kDecoder, .kv_stream = Stream::kEncoder, .dim = s.d,
                        .heads = s.heads, .d_kv = s.d_kv, .norm = "rms"});
    a.layers.push_back({.name = p + ".ffn", .kind = LayerKind::kFeedForward,
                        .stream = Stream::kDecoder, .dim = s.d, .d_ff = s.d_ff, .norm = "rms"});
  }
  a.layers.push_back({.name = "lm.dec.final", .kind = LayerKind::kNorm, .dim = s.d, .norm = "rms"});
  a.layers.push_back({.name = "lm.head", .kind = LayerKind::kLmHead, .stream = Stream::kDecoder,
                      .vocab = s.vocab, .dim = s.d, .tied = true});
}

// ViT-B/32 patch embedder at 224x224, fusion gate and projection to the LM.
void add_vision(ArchSpec& a, std::size_t lm_width) {
  const std::size_t patch = 32, hidden = 768, seq = 49, views = 6, k = 128;
  a.image_seq = seq;
  a.views = views;
  a.layers.push_back({.name = "vision.patch", .kind = LayerKind::kPatchEmbed, .group = "patch",
                      .stream = Stream::kImage, .dim = hidden, .views = views, .patch = patch,
                      .seq = seq, .bias = true});
  a.layers.push_back({.name = "fusion", .kind = LayerKind::kFusionGate, .group = "fusion",
                      .stream = Stream::kImage, .k = k, .m = seq * hidden, .views = views});
  a.layers.push_back({.name = "proj", .kind = LayerKind::kProjection, .group = "projection",
                      .stream = Stream::kImage, .d_in = hidden, .d_out = lm_width});
}

const LmShape kT5Base{32128, 768, 12, 12, 64, 3072};
const LmShape kT5Large{32128, 1024, 24, 16, 64, 4096};

// LoRA rank 16 on every linear map of the LM stacks.
void add_lora_all(ArchSpec& a, const LmShape& s, std::size_t rank) {
  auto add = [&](const std::string& name, Stream st, std::size_t in, std::size_t out) {
    a.layers.push_back({.name = name, .kind = LayerKind::kLora, .group = "lora", .stream = st,
                        .d_in = in, .d_out = out, .rank = rank});
  };
  const std::size_t inner = s.heads * s.d_kv;
  for (std::size_t i = 0; i < s.layers; ++i) {
    const std::string p = "lm.enc." + std::to_string(i);
    for (const char* m : {".q", ".k", ".v"}) add(p + ".attn" + m, Stream::kEncoder, s.d, inner);
    add(p + ".attn.o", Stream::kEncoder, inner, s.d);
    add(p + ".ffn.wi", Stream::kEncoder, s.d, s.d_ff);
    add(p + ".ffn.wo", Stream::kEncoder, s.d_ff, s.d);
  }
  for (std::size_t i = 0; i < s.layers; ++i) {
    const std::string p = "lm.dec." + std::to_string(i);
    for (const char* blk : {".self", ".cross"}) {
      add(p + blk + ".q", Stream::kDecoder, s.d, inner);
      add(p + blk + ".k", std::string(blk) == ".cross" ? Stream::kEncoder : Stream::kDecoder, s.d, inner);
      add(p + blk + ".v", std::string(blk) == ".cross" ? Stream::kEncoder : Stream::kDecoder, s.d, inner);
      add(p + blk + ".o", Stream::kDecoder, inner, s.d);
    }
    add(p + ".ffn.wi", Stream::kDecoder, s.d, s.d_ff);
    add(p + ".ffn.wo", Stream::kDecoder, s.d_ff, s.d);
  }
}

}  // namespace

std::vector<std::string> preset_names() { return {"t5-base", "t5-large", "base", "q-large", "desk"}; }

ArchSpec preset(const std::string& name) {
  ArchSpec a;
  a.name = name;
  if (name == "t5-base") {
    add_t5(a, kT5Base);
  } else if (name == "t5-large") {
    add_t5(a, kT5Large);
  } else if (name == "base") {
    a.name = "EM-VLM4AD_Base";
    add_vision(a, kT5Base.d);
    add_t5(a, kT5Base);
  } else if (name == "q-large") {
    a.name = "EM-VLM4AD_Q-Large";
    add_vision(a, kT5Large.d);
    add_t5(a, kT5Large);
    add_lora_all(a, kT5Large, 16);
    for (const char* g : {"patch", "fusion", "projection", "lm", "lora"}) a.bits[g] = 8;
  } else if (name == "desk") {
    ModelSpec spec;
    spec.vocab_size = 256;
    a = arch_from_model_spec(spec);
    a.name = "desk";
  } else {
    std::string names;
    for (const auto& n : preset_names()) names += " " + n;
    throw ConfigError("unknown cost preset '" + name + "' (available:" + names + ")");
  }
  return a;
}

SeqLengths published_seq() { return {60 + 49, 40}; }

ArchSpec arch_from_model_spec(const ModelSpec& spec) {
  spec.validate();
  if (spec.vocab_size == 0) throw ConfigError("arch_from_model_spec needs a vocabulary size");
  ArchSpec a;
  a.name = "model";
  a.image_seq = spec.image_seq();
  a.views = spec.n_views;
  const std::size_t d = spec.d_model;
  a.layers.push_back({.name = "vision.patch", .kind = LayerKind::kPatchEmbed, .group = "patch",
                      .stream = Stream::kImage, .dim = spec.image_hidden, .views = spec.n_views,
                      .patch = spec.patch, .seq = spec.image_seq(), .bias = true});
  a.layers.push_back({.name = "fusion", .kind = LayerKind::kFusionGate, .group = "fusion",
                      .stream = Stream::kImage, .k = spec.fusion_k, .m = spec.fusion_m(),
                      .views = spec.n_views});
  a.layers.push_back({.name = "proj", .kind = LayerKind::kProjection, .group = "projection",
                      .stream = Stream::kImage, .d_in = spec.image_hidden, .d_out = d});
  a.layers.push_back({.name = "lm.embed", .kind = LayerKind::kEmbedding, .vocab = spec.vocab_size, .dim = d});
  a.layers.push_back({.name = "lm.enc.pos", .kind = LayerKind::kPosition, .dim = d, .rows = spec.max_seq});
  a.layers.push_back({.name = "lm.dec.pos", .kind = LayerKind::kPosition, .dim = d, .rows = spec.max_seq});
  for (std::size_t i = 0; i < spec.n_enc_layers; ++i) {
    const std::string p = "lm.enc." + std::to_string(i);
    a.layers.push_back({.name = p + ".attn", .kind = LayerKind::kAttention, .stream = Stream::kEncoder,
                        .kv_stream = Stream::kEncoder, .dim = d, .heads = spec.n_heads, .norm = "layer"});
    a.layers.push_back({.name = p + ".ffn", .kind = LayerKind::kFeedForward, .stream = Stream::kEncoder,
                        .dim = d, .d_ff = spec.d_ff, .norm = "layer"});
  }
  a.layers.push_back({.name = "lm.enc.final", .kind = LayerKind::kNorm, .dim = d, .norm = "layer"});
  for (std::size_t i = 0; i < spec.n_dec_layers; ++i) {
    const std::string p = "lm.dec." + std::to_string(i);
    a.layers.push_back({.name = p + ".self", .kind = LayerKind::kAttention, .stream = Stream::kDecoder,
                        .kv_stream = Stream::kDecoder, .dim = d, .heads = spec.n_heads, .norm = "layer"});
    a.layers.push_back({.name = p + ".cross", .kind = LayerKind::kAttention, .stream = Stream::kDecoder,
                        .kv_stream = Stream::kEncoder, .dim = d, .heads = spec.n_heads, .norm = "layer"});
    a.layers.push_back({.name = p + ".ffn", .kind = LayerKind::kFeedForward, .stream = Stream::kDecoder,
                        .dim = d, .d_ff = spec.d_ff, .norm = "layer"});
  }
  a.layers.push_back({.name = "lm.dec.final", .kind = LayerKind::kNorm, .dim = d, .norm = "layer"});
  a.layers.push_back({.name = "lm.head", .kind = LayerKind::kLmHead, .stream = Stream::kDecoder,
                      .vocab = spec.vocab_size, .dim = d, .tied = spec.tie_embeddings});

  if (spec.lora.enabled) {
    std::vector<std::string> targets = spec.lora.targets;
    if (targets.empty()) {
      for (std::size_t i = 0; i < spec.n_enc_layers; ++i)
        for (const char* m : {".q", ".v"}) targets.push_back("lm.enc." + std::to_string(i) + ".attn" + m);
      for (std::size_t i = 0; i < spec.n_dec_layers; ++i)
        for (const char* blk : {".self", ".cross"})
          for (const char* m : {".q", ".v"}) targets.push_back("lm.dec." + std::to_string(i) + blk + m);
    }
    for (const auto& t : targets) {
      std::size_t in = d, out = d;
      const bool wi = t.size() >= 7 && t.compare(t.size() - 7, 7, ".ffn.wi") == 0;
      const bool wo = t.size() >= 7 && t.compare(t.size() - 7, 7, ".ffn.wo") == 0;
      if (wi) out = spec.d_ff;
      if (wo) in = spec.d_ff;
      if (t == "lm.head") out = spec.vocab_size;
      const bool dec = t.rfind("lm.dec.", 0) == 0 || t == "lm.head";
      const bool cross_kv = t.find(".cross.k") != std::string::npos || t.find(".cross.v") != std::string::npos;
      a.layers.push_back({.name = t + ".lora", .kind = LayerKind::kLora, .group = "lora",
                          .stream = dec && !cross_kv ? Stream::kDecoder : Stream::kEncoder,
                          .d_in = in, .d_out = out, .rank = spec.lora.rank});
    }
    if (spec.lora.quantize_base) a.bits["lm"] = 8;
  }
  return a;
}

// ---------------------------------------------------------- published rows

std::vector<PublishedRow> published_rows(const SeqLengths& seq) {
  std::vector<PublishedRow> rows = {
      {"EM-VLM4AD_Base", "T5-Base, ViT-b/32 patch embedder", 235e6, 9.47e9, 0.94},
      {"EM-VLM4AD_Q-Large", "T5-Large, ViT-b/32 patch embedder", 769e6, 31.5e9, 0.77},
      {"DriveLM-Agent", "BLIP-2", 3.96e9, 439e9, 14.43},
      {"DriveMLM", "LLaMA-7B, Vit-g/14", 8.37e9, 535e9, 36},
      {"LLM-Driver", "LLaMA-7B", 7e9, 268e9, 28},
      {"Drive-GPT4", "LLaMA 2, CLIP", 7.3e9, 329e9, 29.2},
  };
  for (std::size_t i = 0; i < 2; ++i) {
    const auto r = full_report(preset(i == 0 ? "base" : "q-large"), seq);
    rows[i].estimated = true;
    rows[i].est_params = static_cast<double>(r.total_params);
    rows[i].est_flops = static_cast<double>(r.flops);
    rows[i].est_memory_gb = r.memory_gb;
  }
  return rows;
}

std::string published_table(const std::vector<PublishedRow>& rows, const SeqLengths& seq) {
  std::ostringstream os;
  char buf[512];
  std::snprintf(buf, sizeof buf, "%-18s %9s %9s %8s | %9s %9s %8s %11s\n", "model", "params",
                "FLOPs", "mem GB", "est par", "est FLOP", "est GB", "FLOP ratio");
  os << buf;
  for (const auto& r : rows) {
    if (r.estimated) {
      std::snprintf(buf, sizeof buf, "%-18s %9s %9s %8.2f | %9s %9s %8.2f %11.2f\n",
                    r.model.c_str(), fmt_count(r.params).c_str(), fmt_count(r.flops).c_str(),
                    r.memory_gb, fmt_count(r.est_params).c_str(), fmt_count(r.est_flops).c_str(),
                    r.est_memory_gb, r.est_flops / r.flops);
    } else {
      std::snprintf(buf, sizeof buf, "%-18s %9s %9s %8.2f | %9s %9s %8s %11s\n", r.model.c_str(),
                    fmt_count(r.params).c_str(), fmt_count(r.flops).c_str(), r.memory_gb, "-", "-",
                    "-", "-");
    }
    os << buf;
  }
  std::snprintf(buf, sizeof buf,
                "published columns are echoed; estimates use S_enc=%zu, S_dec=%zu, 1 MAC = 1 FLOP, "
                "GB = 1e9 bytes\n",
                seq.s_enc, seq.s_dec);
  os << buf;
  return os.str();
}

}  // namespace mvfuse
