#include "mvfuse/pipeline.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>
#include <thread>

#include "mvfuse/error.hpp"

namespace mvfuse {

using json = nlohmann::json;
namespace fs = std::filesystem;

// ------------------------------------------------------------------- config

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where,
                    std::vector<std::string>& errors) {
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) errors.push_back("unknown key " + where + "." + k);
}

template <typename F>
void collect(std::vector<std::string>& errors, F&& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    errors.emplace_back(e.what());
  } catch (const json::exception& e) {
    errors.emplace_back(e.what());
  }
}

}  // namespace

std::vector<std::string> RunConfig::problems() const {
  std::vector<std::string> out;
  for (const auto& p : model.problems()) out.push_back(p);
  for (const auto& p : train.problems()) out.push_back(p);
  double sum = 0.0;
  for (double f : data.fractions) {
    if (f < 0) out.push_back("data.fractions must be non-negative");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) out.push_back("data.fractions must sum to 1");
  const std::set<std::string> buckets = {"train", "val", "test", "all"};
  if (!buckets.count(data.train_split))
    out.push_back("data.train_split must be train, val, test or all");
  if (cost.spec) {
    for (const auto& p : cost.spec->problems()) out.push_back("cost.spec: " + p);
  } else {
    const auto names = preset_names();
    if (std::find(names.begin(), names.end(), cost.preset) == names.end())
      out.push_back("cost.preset '" + cost.preset + "' is not a known preset");
  }
  if (cost.seq.s_enc == 0 || cost.seq.s_dec == 0) out.push_back("cost sequence lengths must be positive");
  return out;
}

RunConfig parse_run_config(const json& j) {
  RunConfig c;
  std::vector<std::string> errors;
  if (!j.is_object()) throw ConfigError("run config must be a JSON object");
  reject_unknown(j, {"model", "train", "data", "eval", "cost"}, "config", errors);
  if (j.contains("model")) collect(errors, [&] { c.model = j.at("model").get<ModelSpec>(); });
  if (j.contains("train")) collect(errors, [&] { c.train = j.at("train").get<TrainConfig>(); });
  if (j.contains("data")) {
    const auto& d = j.at("data");
    reject_unknown(d, {"manifest", "fractions", "split_seed", "strict", "train_split"}, "data", errors);
    collect(errors, [&] {
      if (d.contains("manifest")) c.data.manifest = d.at("manifest").get<std::string>();
      if (d.contains("fractions")) c.data.fractions = d.at("fractions").get<std::array<double, 3>>();
      if (d.contains("split_seed")) c.data.split_seed = d.at("split_seed").get<std::uint64_t>();
      if (d.contains("strict")) c.data.strict = d.at("strict").get<bool>();
      if (d.contains("train_split")) c.data.train_split = d.at("train_split").get<std::string>();
    });
  }
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    reject_unknown(e, {"predictions", "references", "bleu_smoothing", "meteor_stem"}, "eval", errors);
    collect(errors, [&] {
      if (e.contains("predictions")) c.eval.predictions = e.at("predictions").get<std::string>();
      if (e.contains("references")) c.eval.references = e.at("references").get<std::string>();
      if (e.contains("bleu_smoothing")) c.eval.options.bleu_smoothing = e.at("bleu_smoothing").get<bool>();
      if (e.contains("meteor_stem")) c.eval.options.meteor_stem = e.at("meteor_stem").get<bool>();
    });
  }
  if (j.contains("cost")) {
    const auto& k = j.at("cost");
    reject_unknown(k, {"preset", "spec", "s_enc", "s_dec", "gib"}, "cost", errors);
    collect(errors, [&] {
      if (k.contains("preset")) c.cost.preset = k.at("preset").get<std::string>();
      if (k.contains("spec")) c.cost.spec = k.at("spec").get<ArchSpec>();
      if (k.contains("s_enc")) c.cost.seq.s_enc = k.at("s_enc").get<std::size_t>();
      if (k.contains("s_dec")) c.cost.seq.s_dec = k.at("s_dec").get<std::size_t>();
      if (k.contains("gib")) c.cost.gib = k.at("gib").get<bool>();
    });
  }
  for (const auto& p : c.problems()) errors.push_back(p);
  if (!errors.empty()) {
    std::string msg = "invalid run config:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  RunConfig c = parse_run_config(j);
  // Relative paths are taken relative to the config file.
  auto rebase = [&](fs::path& p) {
    if (!p.empty() && p.is_relative()) p = path.parent_path() / p;
  };
  rebase(c.data.manifest);
  rebase(c.eval.predictions);
  rebase(c.eval.references);
  return c;
}

json run_config_json(const RunConfig& c) {
  json cost = {{"s_enc", c.cost.seq.s_enc}, {"s_dec", c.cost.seq.s_dec}, {"gib", c.cost.gib}};
  if (c.cost.spec)
    cost["spec"] = *c.cost.spec;
  else
    cost["preset"] = c.cost.preset;
  return json{{"model", c.model},
              {"train", c.train},
              {"data",
               {{"manifest", c.data.manifest.string()},
                {"fractions", c.data.fractions},
                {"split_seed", c.data.split_seed},
                {"strict", c.data.strict},
                {"train_split", c.data.train_split}}},
              {"eval",
               {{"predictions", c.eval.predictions.string()},
                {"references", c.eval.references.string()},
                {"bleu_smoothing", c.eval.options.bleu_smoothing},
                {"meteor_stem", c.eval.options.meteor_stem}}},
              {"cost", cost}};
}

Tokenizer build_tokenizer(std::span<const QASample> samples) {
  std::vector<std::string> corpus;
  corpus.reserve(samples.size() * 2);
  for (const auto& s : samples) {
    corpus.push_back(s.question);
    corpus.push_back(s.answer);
  }
  return Tokenizer::build(corpus);
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

// ----------------------------------------------------------------- training

namespace {

fs::path sibling(const fs::path& out, const std::string& suffix) {
  fs::path p = out;
  p.replace_extension();
  return fs::path(p.string() + suffix);
}

struct SplitInfo {
  std::array<double, 3> fractions;
  std::uint64_t seed;
  std::string bucket;
};

json split_meta(const SplitInfo& s, const fs::path& manifest) {
  return json{{"manifest", fs::absolute(manifest).lexically_normal().string()},
              {"split", {{"fractions", s.fractions}, {"seed", s.seed}, {"bucket", s.bucket}}}};
}

SplitInfo split_from_meta(const json& meta) {
  try {
    const auto& s = meta.at("split");
    return {s.at("fractions").get<std::array<double, 3>>(), s.at("seed").get<std::uint64_t>(),
            s.at("bucket").get<std::string>()};
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint lacks split metadata: ") + e.what());
  }
}

}  // namespace

TrainOutcome train_pipeline(const TrainRequest& req) {
  const RunConfig& cfg = req.config;
  if (req.stage != "1" && req.stage != "2" && req.stage != "all")
    throw ConfigError("--stage must be 1, 2 or all");
  if (req.stage == "2" && !req.resume)
    throw ConfigError("stage 2 requires --resume CKPT from stage 1");
  if (req.out.empty()) throw ConfigError("an output checkpoint path is required");
  const fs::path out_dir = fs::absolute(req.out).parent_path();
  if (!fs::is_directory(out_dir)) throw ConfigError("output directory " + out_dir.string() + " does not exist");
  if (req.resume && !fs::exists(*req.resume))
    throw ConfigError("resume checkpoint " + req.resume->string() + " does not exist");
  if (!req.resume && cfg.data.manifest.empty()) throw ConfigError("data.manifest is required");

  std::unique_ptr<VisionLanguageModel> model;
  Tokenizer tokenizer;
  TrainState state;
  SplitInfo split_info{cfg.data.fractions, cfg.data.split_seed, cfg.data.train_split};
  fs::path manifest = cfg.data.manifest;

  if (req.resume) {
    LoadedModel loaded = load_checkpoint(*req.resume);
    ModelSpec want = cfg.model;
    want.vocab_size = loaded.ckpt.spec.vocab_size;
    if (!(want == loaded.ckpt.spec))
      throw ConfigError("model section of the config does not match the checkpoint's model spec");
    model = std::move(loaded.model);
    tokenizer = std::move(loaded.tokenizer);
    state = std::move(loaded.ckpt.state);
    split_info = split_from_meta(loaded.ckpt.meta);
    if (manifest.empty()) manifest = loaded.ckpt.meta.value("manifest", std::string());
  }
  if (!fs::exists(manifest)) throw ConfigError("manifest " + manifest.string() + " does not exist");

  const LoadResult loaded = load_dataset(manifest, cfg.data.strict);
  if (!loaded.errors.empty() && req.verbose) {
    for (const auto& e : loaded.errors) std::cerr << "skipped: " << e << '\n';
  }
  const SceneSplit split = split_scenes(loaded.samples, split_info.fractions, split_info.seed);
  const auto samples = select_split(loaded.samples, split, split_info.bucket);
  if (samples.empty()) throw DataError("training split '" + split_info.bucket + "' is empty");

  if (!model) {
    tokenizer = build_tokenizer(samples);
    ModelSpec spec = cfg.model;
    spec.vocab_size = tokenizer.size();
    model = std::make_unique<VisionLanguageModel>(spec, cfg.train.seed);
    state = initial_state(cfg.train);
  }
  const auto examples = prepare_examples(*model, tokenizer, samples);
  const json meta = split_meta(split_info, manifest);
  const bool lora = model->spec().lora.enabled;

  TrainOutcome outcome;
  outcome.train_samples = samples.size();
  std::size_t ran = 0;
  auto on_epoch = [&](const EpochLog& log, const TrainState&) {
    ++ran;
    if (req.verbose) {
      std::fprintf(stderr, "stage %d epoch %zu mean_loss %.6f lr %.3g\n", log.stage, log.epoch,
                   log.mean_loss, log.lr);
    }
  };
  auto remaining = [&]() -> std::optional<std::size_t> {
    if (!req.stop_after) return std::nullopt;
    return *req.stop_after > ran ? *req.stop_after - ran : 0;
  };
  auto stopped = [&] { return req.stop_after && ran >= *req.stop_after; };

  const bool want1 = req.stage == "1" || req.stage == "all";
  const bool want2 = req.stage == "2" || req.stage == "all";
  if (want1 && state.stage <= 1) {
    run_stage(*model, StagePlan::for_stage(1, lora), cfg.train, examples, state, on_epoch, remaining());
    if (req.stage == "all" && state.stage == 1 && state.stage_complete(cfg.train)) {
      outcome.stage1_checkpoint = sibling(req.out, ".stage1.ckpt");
      save_checkpoint(*outcome.stage1_checkpoint, *model, tokenizer, cfg.train, state, meta);
    }
  }
  if (want2 && !stopped()) {
    run_stage(*model, StagePlan::for_stage(2, lora), cfg.train, examples, state, on_epoch, remaining());
  }
  save_checkpoint(req.out, *model, tokenizer, cfg.train, state, meta);
  outcome.checkpoint = req.out;
  outcome.trace = state.trace;
  outcome.loss_csv = sibling(req.out, ".loss.csv");
  write_loss_csv(outcome.loss_csv, state.trace);
  return outcome;
}

// --------------------------------------------------------------- generation

std::size_t worker_threads() {
  if (const char* env = std::getenv("MVFUSE_THREADS")) {
    const long n = std::strtol(env, nullptr, 10);
    if (n > 0) return static_cast<std::size_t>(n);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

Generation generate_split(const fs::path& checkpoint, const fs::path& manifest,
                          const std::string& split_name, std::size_t threads) {
  LoadedModel loaded = load_checkpoint(checkpoint);
  const SplitInfo info = split_from_meta(loaded.ckpt.meta);
  const LoadResult data = load_dataset(manifest, true);
  const SceneSplit split = split_scenes(data.samples, info.fractions, info.seed);
  const auto samples = select_split(data.samples, split, split_name);
  if (samples.empty()) throw DataError("split '" + split_name + "' has no samples");

  const VisionLanguageModel& model = *loaded.model;
  const Tokenizer& tok = loaded.tokenizer;
  std::vector<std::string> answers(samples.size());
  if (threads == 0) threads = worker_threads();
  threads = std::min(threads, samples.size());
  std::vector<std::exception_ptr> errors(threads);
  auto work = [&](std::size_t t) {
    try {
      for (std::size_t i = t; i < samples.size(); i += threads) {
        const auto images = samples[i].load_views();
        const auto views = model.embed_views(images);
        const auto ids = model.generate(views, tok.encode(samples[i].question), model.spec().max_seq);
        answers[i] = tok.decode(ids);
      }
    } catch (...) {
      errors[t] = std::current_exception();
    }
  };
  if (threads <= 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, t);
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  Generation g;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    g.predictions.push_back({{"id", samples[i].id()}, {"text", answers[i]}});
    g.references.push_back({{"id", samples[i].id()}, {"text", samples[i].answer}});
  }
  return g;
}

}  // namespace mvfuse
