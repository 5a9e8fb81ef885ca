// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "mvfuse/cost.hpp"
#include "mvfuse/data.hpp"
#include "mvfuse/fusion.hpp"
#include "mvfuse/metrics.hpp"
#include "mvfuse/model.hpp"
#include "mvfuse/pipeline.hpp"
#include "mvfuse/training.hpp"
#include "oracles.hpp"
#include "util.hpp"

using namespace mvfuse;
using testutil::TempDir;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Result {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
  void note(const std::string& s) { detail += (detail.empty() ? "" : "; ") + s; }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ------------------------------------------------------------------ 1

Result gradients() {
  Result r;
  const auto t0 = Clock::now();
  std::vector<std::string> failures;
  const auto [worst, cases] = oracle::gradient_suite(6, &failures);
  std::size_t probes = 0;
  double composed = 0.0;
  for (std::uint64_t seed : {5, 6}) {
    const auto [w, p] = oracle::composed_graph_check(seed);
    composed = std::max(composed, w);
    probes += p;
  }
  const double secs = seconds_since(t0);
  r.require(worst < 1e-5, "op cases above 1e-5: " + std::to_string(failures.size()));
  r.require(composed < 1e-5, "composed graph error " + fmt("%.2e", composed));
  r.require(cases >= 100, "fewer than 100 op cases");
  r.require(secs < 120.0, "took " + fmt("%.2f s", secs));
  r.note(std::to_string(cases) + " op cases, worst " + fmt("%.1e", worst) + "; " + std::to_string(probes) +
         " composed probes, worst " + fmt("%.1e", composed) + "; " + fmt("%.2f s", secs));
  return r;
}

// ------------------------------------------------------------------ 2

Result fusion() {
  Result r;
  double sum_err = 0.0, perm_err = 0.0;
  bool exact = true;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    SeededRng rng(seed);
    const std::size_t n = 1 + rng.below(6), s = 1 + rng.below(3), h = 1 + rng.below(4), k = 1 + rng.below(5);
    GatedPoolParams p(k, s * h, rng, 0.5);
    std::vector<Tensor> views;
    for (std::size_t i = 0; i < n; ++i) views.push_back(rng.normal({s, h}, 1.0));
    const auto out = fuse(views, p);
    double total = 0.0;
    for (double a : out.alpha) {
      if (!(a > 0.0 && a < 1.0) && n > 1) exact = false;
      total += a;
    }
    sum_err = std::max(sum_err, std::abs(total - 1.0));

    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    rng.shuffle(perm);
    std::vector<Tensor> shuffled;
    for (auto i : perm) shuffled.push_back(views[i]);
    const auto po = fuse(shuffled, p);
    perm_err = std::max(perm_err, max_abs_diff(po.fused, out.fused));
    for (std::size_t i = 0; i < n; ++i) perm_err = std::max(perm_err, std::abs(po.alpha[i] - out.alpha[perm[i]]));

    const auto one = fuse(std::vector<Tensor>{views[0]}, p);
    exact = exact && one.alpha == std::vector<double>{1.0} && one.fused == views[0];
    const auto same = fuse(std::vector<Tensor>(n, views[0]), p);
    for (double a : same.alpha) exact = exact && std::abs(a - 1.0 / static_cast<double>(n)) < 1e-15;
    exact = exact && max_abs_diff(same.fused, views[0]) < 1e-15;
  }
  // K = 1: w = 1, Z = [1 0], G = 0, views (1,0) and (0,0).
  const GatedPoolParams k1(Tensor::vector({1}), Tensor::matrix({{1, 0}}), Tensor::matrix({{0, 0}}));
  const std::vector<Tensor> vs = {Tensor::matrix({{1, 0}}), Tensor::matrix({{0, 0}})};
  const auto out = fuse(vs, k1);
  const auto d = oracle::direct_fuse(vs, k1.w.value, k1.z.value, k1.g.value);
  double k1_err = 0.0;
  for (std::size_t i = 0; i < 2; ++i) {
    k1_err = std::max(k1_err, std::abs(out.alpha[i] - d.alpha[i]));
    k1_err = std::max(k1_err, std::abs(out.fused[i] - d.fused[i]));
  }
  r.require(sum_err <= 1e-9, "alpha sum off by " + fmt("%.1e", sum_err));
  r.require(perm_err <= 1e-12, "permutation changed output by " + fmt("%.1e", perm_err));
  r.require(exact, "N=1 or identical-view case not exact");
  r.require(k1_err < 1e-4, "K=1 example off by " + fmt("%.1e", k1_err));
  r.note("50 random cases; max |sum-1| " + fmt("%.1e", sum_err) + ", permutation " + fmt("%.1e", perm_err) +
         "; K=1 alpha " + fmt("%.4f", out.alpha[0]));
  return r;
}

// ------------------------------------------------------------------ 3

Result freeze_contract() {
  Result r;
  TempDir dir("accept");
  const auto summary = gen_synthetic(2, 1, 7, dir.path());
  const auto samples = load_dataset(summary.manifest).samples;
  const Tokenizer tok = build_tokenizer(samples);
  ModelSpec spec;
  spec.vocab_size = tok.size();
  VisionLanguageModel m(spec, 1);
  std::map<std::string, Tensor> init;
  for (const Parameter* p : m.parameters()) init[p->name] = p->value;
  const auto data = prepare_examples(m, tok, samples);
  TrainConfig cfg;
  cfg.epochs_per_stage = 2;
  TrainState st = initial_state(cfg);

  auto changed = [&](ParamGroup g) {
    std::size_t n = 0;
    for (const Parameter* p : m.parameters())
      if (p->group == g && !(p->value == init.at(p->name))) ++n;
    return n;
  };
  run_stage(m, StagePlan::for_stage(1), cfg, data, st);
  r.require(changed(ParamGroup::kLm) == 0, "stage 1 changed LM arrays");
  r.require(changed(ParamGroup::kPatch) == 0, "stage 1 changed patch arrays");
  const std::size_t fusion_moved = changed(ParamGroup::kFusion);
  run_stage(m, StagePlan::for_stage(2), cfg, data, st);
  r.require(changed(ParamGroup::kPatch) == 0, "stage 2 changed patch arrays");
  const std::size_t lm_moved = changed(ParamGroup::kLm);
  r.require(fusion_moved > 0 && lm_moved > 0, "a trainable group did not move");
  r.note("stage 1 moved " + std::to_string(fusion_moved) + " fusion arrays, stage 2 moved " +
         std::to_string(lm_moved) + " LM arrays; patch arrays bit-identical");
  return r;
}

// ------------------------------------------------------------------ 4 and 8

struct PipelineRun {
  std::string loss_csv, ckpt;
  nlohmann::json predictions, references;
  double seconds = 0.0;
};

PipelineRun run_pipeline(const TempDir& dir, const std::string& tag, std::size_t threads) {
  const auto t0 = Clock::now();
  RunConfig cfg;  // paper hyperparameters are the TrainConfig defaults
  cfg.data.manifest = dir / "data/manifest.json";
  cfg.data.train_split = "all";
  TrainRequest req;
  req.config = cfg;
  req.stage = "all";
  req.out = dir / (tag + ".ckpt");
  const auto outcome = train_pipeline(req);
  const auto gen = generate_split(outcome.checkpoint, cfg.data.manifest, "all", threads);
  PipelineRun run;
  run.seconds = seconds_since(t0);
  run.loss_csv = testutil::read_file(outcome.loss_csv);
  run.ckpt = testutil::read_file(outcome.checkpoint);
  run.predictions = gen.predictions;
  run.references = gen.references;
  return run;
}

Result overfit(const PipelineRun& run) {
  Result r;
  const auto report = evaluate(align_predictions(run.predictions, run.references));
  r.require(report.n == 32, "expected 32 samples, got " + std::to_string(report.n));
  r.require(report.exact_match >= 0.95, "exact match " + fmt("%.1f%%", 100 * report.exact_match) + " < 95%");
  r.require(report.bleu4 >= 0.90, "BLEU-4 " + fmt("%.3f", report.bleu4) + " < 0.90");
  r.require(run.seconds < 600.0, "took " + fmt("%.0f s", run.seconds));
  r.note("lr 1e-4, wd 0.05, batch 4, 6+6 epochs, gamma 0.9; EM " + fmt("%.1f%%", 100 * report.exact_match) +
         ", BLEU-4 " + fmt("%.3f", report.bleu4) + ", " + fmt("%.1f s", run.seconds));
  return r;
}

Result determinism(const TempDir& a, const TempDir& b, const PipelineRun& ra, const PipelineRun& rb) {
  Result r;
  r.require(testutil::tree(a / "data") == testutil::tree(b / "data"), "synth output differs");
  r.require(ra.loss_csv == rb.loss_csv, "loss CSV differs");
  r.require(ra.ckpt == rb.ckpt, "checkpoint bytes differ");
  r.require(ra.predictions.dump() == rb.predictions.dump(), "generated answers differ");
  if (r.pass)
    r.note("synth tree, loss CSV, checkpoint (" + std::to_string(ra.ckpt.size()) +
           " bytes) and predictions identical across two runs (1 and 4 generate threads)");
  return r;
}

// ------------------------------------------------------------------ 5

Result metric_oracles() {
  Result r;
  using namespace oracle;
  auto close = [](double a, double b) { return std::abs(a - b) <= 1e-9 * std::max(1.0, std::abs(b)); };
  const std::vector<EvalPair> bleu_case{pair("x", "a b c d e", {"a b c d"})};
  r.require(close(bleu4(bleu_case), std::pow(0.2, 0.25)) && std::abs(bleu4(bleu_case) - 0.6687) < 5e-5,
            "BLEU worked case");
  const std::vector<Tokens> rr{toks("a c b d")};
  r.require(close(rouge_l_pair(toks("a b c d"), rr), 0.75), "ROUGE worked case");
  const std::vector<Tokens> mr{toks("a b c")};
  r.require(close(meteor_pair(toks("a b c"), mr), 1 - 0.5 / 27) &&
                std::abs(meteor_pair(toks("a b c"), mr) - 0.9815) < 5e-5,
            "METEOR worked case");
  const std::vector<EvalPair> cc{pair("x", "a b c d", {"a b c d"}), pair("y", "e f g h", {"i j k l"})};
  r.require(close(cider_scores(cc)[0], 10.0), "CIDEr worked case");

  std::size_t fixtures = 4, mismatches = 0;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const auto corpus = random_corpus(seed);
    ++fixtures;
    mismatches += !close(bleu4(corpus), oracle_bleu(corpus, false));
    mismatches += !close(bleu4(corpus, true), oracle_bleu(corpus, true));
    const auto cs = cider_scores(corpus);
    const auto co = oracle_cider(corpus);
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      const auto& p = corpus[i];
      mismatches += !close(rouge_l_pair(p.candidate, p.references), oracle_rouge(p, 1.2));
      mismatches += !close(meteor_pair(p.candidate, p.references), oracle_meteor(p));
      mismatches += !close(cs[i], co[i]);
    }
  }
  r.require(mismatches == 0, std::to_string(mismatches) + " oracle mismatches");
  r.require(fixtures >= 20, "fewer than 20 fixtures");
  r.note(std::to_string(fixtures) + " fixtures (4 worked + 40 random corpora), tolerance 1e-9");
  return r;
}

// ------------------------------------------------------------------ 6

Result cost_fixtures() {
  Result r;
  const auto t5 = count_params(preset("t5-base"));
  const auto seq = published_seq();
  const auto base = full_report(preset("base"), seq);
  const auto q = full_report(preset("q-large"), seq);
  const double t5_dev = t5.total_params / 223e6 - 1, base_dev = base.total_params / 235e6 - 1;
  const double ratio = static_cast<double>(base.flops) / 9.47e9;
  r.require(std::abs(t5_dev) < 0.03, "T5-Base params off by " + fmt("%.1f%%", 100 * t5_dev));
  r.require(std::abs(base_dev) < 0.05, "Base params off by " + fmt("%.1f%%", 100 * base_dev));
  r.require(fmt("%.2f", base.memory_gb) == "0.94", "Base memory " + fmt("%.2f GB", base.memory_gb));
  r.require(fmt("%.2f", q.memory_gb) == "0.77", "Q-Large memory " + fmt("%.2f GB", q.memory_gb));
  r.require(ratio >= 0.7 && ratio <= 1.3, "Base FLOPs " + fmt("%.2fB", base.flops / 1e9) + " vs 9.47B, ratio " +
                                              fmt("%.2f", ratio) + " outside +-30%");
  r.note("T5-Base " + fmt("%.1fM", t5.total_params / 1e6) + ", Base " + fmt("%.1fM", base.total_params / 1e6) +
         " / " + fmt("%.2f GB", base.memory_gb) + ", Q-Large " + fmt("%.2f GB", q.memory_gb) + "; FLOPs at S_enc=" +
         std::to_string(seq.s_enc) + " (60 text + 49 image), S_dec=" + std::to_string(seq.s_dec) +
         ", 1 MAC = 1 FLOP: " + fmt("%.2fB", base.flops / 1e9) + " (ratio " + fmt("%.2f", ratio) + ")");
  return r;
}

// ------------------------------------------------------------------ 7

Tensor logits_of(VisionLanguageModel& m, const std::vector<Tensor>& views) {
  Tape t(false);
  std::vector<Var> vs;
  for (const auto& v : views) vs.push_back(t.constant(v));
  const std::vector<int> q = {4, 8};
  Var mm = m.multimodal_embedding(t, vs, q);
  const std::vector<std::uint8_t> mask(mm.value().rows(), 1);
  const std::vector<int> dec = {Tokenizer::kBos, 5, 6, 7};
  return m.lm.decode(t, m.lm.encode(t, mm, mask), mask, dec).value();
}

Result lora_quant() {
  Result r;
  bool fresh_identical = true;
  double merge_err = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ModelSpec s = oracle::tiny_spec(1, 1);
    VisionLanguageModel plain(s, seed);
    s.lora.enabled = true;
    s.lora.rank = 3;
    s.lora.alpha = 5.0;
    VisionLanguageModel m(s, seed);
    SeededRng rng(seed + 50);
    const auto views = oracle::rand_views(s, rng);
    fresh_identical = fresh_identical && logits_of(plain, views) == logits_of(m, views);
    for (Linear* l : m.lm.linears())
      if (l->lora) l->lora->b.value = rng.normal(l->lora->b.value.shape(), 0.3);
    const Tensor before = logits_of(m, views);
    m.lm.merge_lora();
    merge_err = std::max(merge_err, max_abs_diff(before, logits_of(m, views)));
  }
  std::size_t weights = 0, over = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    SeededRng rng(seed);
    Tensor w = rng.normal({1 + rng.below(24), 1 + rng.below(24)}, 0.05 + 4.0 * rng.uniform());
    if (seed % 7 == 0) w[rng.below(w.size())] *= 50.0;
    const auto qw = quantize_int8(w);
    const Tensor d = qw.dequantized();
    for (std::size_t i = 0; i < w.size(); ++i, ++weights)
      over += std::abs(d[i] - w[i]) > qw.scale / 2.0 * (1.0 + 1e-12);
  }
  r.require(fresh_identical, "fresh adapters changed outputs");
  r.require(merge_err < 1e-10, "merge changed outputs by " + fmt("%.1e", merge_err));
  r.require(over == 0, std::to_string(over) + " weights beyond scale/2");
  r.note("fresh adapters bit-identical; merge max diff " + fmt("%.1e", merge_err) + "; " +
         std::to_string(weights) + " int8 weights within scale/2");
  return r;
}

}  // namespace

int main() {
  std::vector<std::pair<std::string, std::function<Result()>>> criteria;
  criteria.emplace_back("gradient suite", gradients);
  criteria.emplace_back("fusion invariants", fusion);
  criteria.emplace_back("two-stage freeze contract", freeze_contract);

  TempDir a("accept"), b("accept");
  std::optional<PipelineRun> ra, rb;
  auto pipelines = [&] {
    if (ra) return;
    gen_synthetic(8, 1, 7, a / "data");
    gen_synthetic(8, 1, 7, b / "data");
    // Same manifest path for both runs: checkpoints record it.
    ra = run_pipeline(a, "first", 1);
    rb = run_pipeline(a, "second", 4);
  };
  criteria.emplace_back("end-to-end overfit", [&] {
    pipelines();
    return overfit(*ra);
  });
  criteria.emplace_back("metric oracles", metric_oracles);
  criteria.emplace_back("cost fixtures", cost_fixtures);
  criteria.emplace_back("LoRA and int8", lora_quant);
  criteria.emplace_back("determinism", [&] {
    pipelines();
    return determinism(a, b, *ra, *rb);
  });

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Result res;
    try {
      res = criteria[i].second();
    } catch (const std::exception& e) {
      res.pass = false;
      res.detail = std::string("exception: ") + e.what();
    }
    failed += !res.pass;
    std::printf("%s %zu %s: %s\n", res.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                res.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
  return failed ? 1 : 0;
}
