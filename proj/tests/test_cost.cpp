#include <cmath>
#include <cstdio>

#include <doctest.h>
#include <nlohmann/json.hpp>

#include "mvfuse/cost.hpp"
#include "mvfuse/error.hpp"
#include "mvfuse/model.hpp"

using namespace mvfuse;
using nlohmann::json;

namespace {

ArchSpec one(LayerSpec l) {
  ArchSpec a;
  a.name = "one";
  a.layers.push_back(std::move(l));
  return a;
}

std::string two_dp(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

// Hand count of a pre-norm T5 v1.0 stack: rms norms, no biases, ReLU FFN,
// 32 relative-position buckets in the first layer of each stack, tied head.
double t5_oracle(double vocab, double d, double layers, double heads, double dff) {
  const double attn = 4 * d * d + d;
  const double ffn = 2 * d * dff + d;
  const double enc = layers * (attn + ffn) + 32 * heads + d;
  const double dec = layers * (2 * attn + ffn) + 32 * heads + d;
  return vocab * d + enc + dec;
}

}  // namespace

TEST_CASE("closed-form layer counts") {
  LayerSpec lin{.name = "l", .kind = LayerKind::kLinear, .d_in = 768, .d_out = 768, .bias = true};
  CHECK(layer_params(lin) == 590592);
  lin.bias = false;
  const auto a = one(lin);
  CHECK(layer_flops(lin, a, {1, 1}) == 589824);
  CHECK(estimate_flops(a, {1, 1}) == 589824);
  CHECK(estimate_flops(a, {3, 1}) == 3 * 589824);

  LayerSpec gate{.name = "g", .kind = LayerKind::kFusionGate, .k = 128, .m = 49 * 768, .views = 6};
  CHECK(layer_params(gate) == 9633920);
  LayerSpec proj{.name = "p", .kind = LayerKind::kProjection, .d_in = 768, .d_out = 1024};
  CHECK(layer_params(proj) == 768 * 1024 + 1024);
  LayerSpec lora{.name = "r", .kind = LayerKind::kLora, .d_in = 64, .d_out = 256, .rank = 8};
  CHECK(layer_params(lora) == 8 * (64 + 256));
  LayerSpec head{.name = "h", .kind = LayerKind::kLmHead, .vocab = 100, .dim = 8, .tied = true};
  CHECK(layer_params(head) == 0);
  head.tied = false;
  CHECK(layer_params(head) == 800);
}

TEST_CASE("attention FLOPs scale with the sequence length") {
  LayerSpec attn{.name = "a", .kind = LayerKind::kAttention, .stream = Stream::kEncoder,
                 .kv_stream = Stream::kEncoder, .dim = 64, .heads = 4};
  const auto a = one(attn);
  const double d = 64;
  auto f = [&](std::size_t s) { return static_cast<double>(layer_flops(attn, a, {s, 1})); };
  CHECK(f(10) == 4 * 10 * d * d + 2 * 10 * 10 * d);
  // Linear terms double, score terms quadruple.
  CHECK(f(20) == 2 * (4 * 10 * d * d) + 4 * (2 * 10 * 10 * d));

  LayerSpec cross = attn;
  cross.stream = Stream::kDecoder;
  CHECK(layer_flops(cross, a, {30, 5}) == 2 * 5 * 64 * 64 + 2 * 30 * 64 * 64 + 2 * 5 * 30 * 64);
}

TEST_CASE("paper-scale presets") {
  const auto t5 = count_params(preset("t5-base"));
  CHECK(std::fabs(t5.total_params / 223e6 - 1) < 0.03);
  CHECK(static_cast<double>(t5.total_params) == t5_oracle(32128, 768, 12, 12, 3072));

  const auto base = full_report(preset("base"), published_seq());
  CHECK(std::fabs(base.total_params / 235e6 - 1) < 0.05);
  CHECK(two_dp(base.memory_gb) == "0.94");
  CHECK(base.params_by_group.at("fusion") == 9633920);
  // Totals equal the sum of their parts.
  std::uint64_t s = 0, f = 0;
  for (const auto& [g, p] : base.params_by_group) s += p;
  for (const auto& [g, x] : base.flops_by_group) f += x;
  CHECK(s == base.total_params);
  CHECK(f == base.flops);

  const auto q = full_report(preset("q-large"), published_seq());
  CHECK(two_dp(q.memory_gb) == "0.77");
  CHECK(q.memory_gb == doctest::Approx(q.total_params / 1e9));
  CHECK(full_report(preset("base"), published_seq(), true).memory_gb ==
        doctest::Approx(base.total_params * 4.0 / 1073741824.0));

  CHECK_THROWS_WITH_AS(preset("t5-huge"), doctest::Contains("available: t5-base"), ConfigError);
}

TEST_CASE("published comparison rows are echoed") {
  const auto rows = published_rows();
  REQUIRE(rows.size() == 6);
  CHECK(rows[0].params == 235e6);
  CHECK(rows[0].flops == 9.47e9);
  CHECK(rows[1].memory_gb == 0.77);
  CHECK(rows[0].estimated);
  CHECK(!rows[2].estimated);
  const auto text = published_table(rows, published_seq());
  CHECK(text.find("S_enc=109") != std::string::npos);
  CHECK(text.find("DriveMLM") != std::string::npos);
}

TEST_CASE("memory of an empty spec is zero") {
  ArchSpec a;
  CHECK(memory_report(a) == 0.0);
  CHECK(count_params(a).total_params == 0);
}

TEST_CASE("invalid specs are rejected with every problem listed") {
  ArchSpec a;
  a.bits["lm"] = 16;
  a.layers.push_back({.name = "x", .kind = LayerKind::kLinear});
  try {
    count_params(a);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("32 or 8") != std::string::npos);
    CHECK(msg.find("layer x: d_in") != std::string::npos);
    CHECK(msg.find("layer x: d_out") != std::string::npos);
  }
  CHECK_THROWS_AS(estimate_flops(preset("desk"), {0, 4}), ConfigError);
}

TEST_CASE("arch spec JSON round trip") {
  const auto a = preset("q-large");
  json j = a;
  const ArchSpec b = j.get<ArchSpec>();
  CHECK(json(b) == j);
  CHECK(full_report(b, published_seq()).to_json() == full_report(a, published_seq()).to_json());

  j["layers"][0]["widht"] = 3;
  CHECK_THROWS_WITH_AS(j.get<ArchSpec>(), doctest::Contains("widht"), ConfigError);
  CHECK_THROWS_AS(json::parse(R"({"layers":[{"kind":"conv"}]})").get<ArchSpec>(), ConfigError);
}

TEST_CASE("the runnable model matches its cost description") {
  ModelSpec spec;
  spec.vocab_size = 256;
  const VisionLanguageModel m(spec, 1);
  CHECK(m.parameter_count() == count_params(arch_from_model_spec(spec)).total_params);
  // patch + gate + projection + embeddings + 2 encoder + 2 decoder layers + norms + head
  const std::size_t hand = (3 * 16 * 16 * 64 + 64 + 16 * 64) + (128 + 2 * 128 * 1024) + (64 * 64 + 64) +
                           (256 * 64 + 2 * 64 * 64) + 2 * (16512 + 32896) + 2 * (2 * 16512 + 32896) +
                           2 * 128 + 256 * 64;
  CHECK(hand == 588544);
  CHECK(m.parameter_count() == hand);
  CHECK(count_params(preset("desk")).total_params == hand);

  spec.lora.enabled = true;
  const VisionLanguageModel ml(spec, 1);
  CHECK(ml.parameter_count() == count_params(arch_from_model_spec(spec)).total_params);
  // rank 8 adapters on q and v: 2 per encoder layer, 4 per decoder layer
  CHECK(ml.parameter_count() == hand + 12 * 8 * (64 + 64));

  ModelSpec wide;
  wide.vocab_size = 50;
  wide.d_model = 32;
  wide.n_enc_layers = 1;
  wide.n_dec_layers = 3;
  wide.tie_embeddings = true;
  wide.lora.enabled = true;
  wide.lora.targets = {"lm.enc.0.ffn.wi", "lm.dec.2.cross.k"};
  const VisionLanguageModel mw(wide, 2);
  CHECK(mw.parameter_count() == count_params(arch_from_model_spec(wide)).total_params);

  ModelSpec novocab;
  CHECK_THROWS_AS(arch_from_model_spec(novocab), ConfigError);
}

TEST_CASE("LoRA on query and value maps touches a few percent of T5-Large") {
  auto a = preset("t5-large");
  for (std::size_t i = 0; i < 24; ++i) {
    for (const char* m : {"q", "v"}) {
      a.layers.push_back({.name = "enc" + std::to_string(i) + m, .kind = LayerKind::kLora,
                          .group = "lora", .d_in = 1024, .d_out = 1024, .rank = 32});
      for (const char* blk : {"self", "cross"})
        a.layers.push_back({.name = "dec" + std::to_string(i) + blk + m, .kind = LayerKind::kLora,
                            .group = "lora", .d_in = 1024, .d_out = 1024, .rank = 32});
    }
  }
  const auto r = count_params(a);
  const double frac = static_cast<double>(r.params_by_group.at("lora")) / r.params_by_group.at("lm");
  CHECK(r.params_by_group.at("lora") == 144ull * 32 * 2048);
  CHECK(frac > 0.01);
  CHECK(frac < 0.10);
}

TEST_CASE("growing a dimension never lowers params or FLOPs") {
  const SeqLengths seq{12, 7};
  const auto base = preset("desk");
  const auto p0 = count_params(base).total_params;
  const auto f0 = estimate_flops(base, seq);
  for (std::size_t i = 0; i < base.layers.size(); ++i) {
    auto a = base;
    auto& l = a.layers[i];
    for (std::size_t* v : {&l.dim, &l.d_ff, &l.d_in, &l.d_out, &l.vocab, &l.k, &l.m, &l.rows}) {
      if (*v == 0) continue;
      const std::size_t keep = *v;
      *v = keep * 2;
      if (l.kind != LayerKind::kAttention || l.dim % l.heads == 0) {
        CHECK(count_params(a).total_params >= p0);
        CHECK(estimate_flops(a, seq) >= f0);
      }
      *v = keep;
    }
  }
  CHECK(estimate_flops(base, {24, 7}) > f0);
  CHECK(estimate_flops(base, {12, 14}) > f0);
}
