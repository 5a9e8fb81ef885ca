// mvfuse: synth | train | generate | eval | cost
//
// Exit codes: 0 success, 2 usage or config error, 3 data error, 4 numeric abort.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mvfuse/cost.hpp"
#include "mvfuse/data.hpp"
#include "mvfuse/error.hpp"
#include "mvfuse/metrics.hpp"
#include "mvfuse/pipeline.hpp"
#include "mvfuse/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace mvfuse;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct SynthArgs {
  std::size_t scenes = 0;
  std::size_t frames = 1;
  std::uint64_t seed = 0;
  std::string out;
  std::string json_out;
};

struct TrainArgs {
  std::string config;
  std::string stage = "all";
  std::string out;
  std::string resume;
  std::size_t stop_after = 0;
  std::string data;
  std::optional<double> lr;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch_size;
  std::optional<std::uint64_t> seed;
  bool lenient = false;
  bool verbose = false;
  std::string json_out;
};

struct GenerateArgs {
  std::string ckpt;
  std::string data;
  std::string split = "test";
  std::string out;
  std::string refs_out;
  std::size_t threads = 0;
};

struct EvalArgs {
  std::string pred;
  std::string refs;
  std::string json_out;
  bool smooth = false;
  bool stem = false;
};

struct CostArgs {
  std::string preset;
  std::string spec;
  std::string config;
  std::optional<std::size_t> s_enc;
  std::optional<std::size_t> s_dec;
  bool gib = false;
  bool published = false;
  std::string json_out;
};

int run_synth(const SynthArgs& a) {
  if (a.scenes == 0) throw ConfigError("--scenes must be at least 1");
  if (a.frames == 0) throw ConfigError("--frames must be at least 1");
  const auto s = gen_synthetic(a.scenes, a.frames, a.seed, a.out);
  std::printf("scenes %zu\nframes %zu\nsamples %zu\nmanifest %s\n", s.scenes, s.frames, s.samples,
              s.manifest.string().c_str());
  if (!a.json_out.empty()) {
    write_json(a.json_out, {{"scenes", s.scenes},
                            {"frames", s.frames},
                            {"samples", s.samples},
                            {"manifest", s.manifest.string()}});
  }
  return 0;
}

int run_train(const TrainArgs& a) {
  TrainRequest req;
  if (!a.config.empty()) req.config = load_run_config(a.config);
  RunConfig& c = req.config;
  if (!a.data.empty()) c.data.manifest = a.data;
  if (a.lr) c.train.lr0 = *a.lr;
  if (a.epochs) c.train.epochs_per_stage = *a.epochs;
  if (a.batch_size) c.train.batch_size = *a.batch_size;
  if (a.seed) c.train.seed = *a.seed;
  if (a.lenient) c.data.strict = false;
  // Flags may have broken an otherwise valid config.
  c = parse_run_config(run_config_json(c));
  req.stage = a.stage;
  req.out = a.out;
  if (!a.resume.empty()) req.resume = fs::path(a.resume);
  if (a.stop_after > 0) req.stop_after = a.stop_after;
  req.verbose = a.verbose;

  const TrainOutcome r = train_pipeline(req);
  std::printf("%-6s %-6s %-12s %s\n", "stage", "epoch", "mean_loss", "lr");
  for (const auto& e : r.trace)
    std::printf("%-6d %-6zu %-12.6f %.6g\n", e.stage, e.epoch, e.mean_loss, e.lr);
  std::printf("train samples %zu\n", r.train_samples);
  if (r.stage1_checkpoint) std::printf("stage 1 checkpoint %s\n", r.stage1_checkpoint->string().c_str());
  std::printf("checkpoint %s\nloss trace %s\n", r.checkpoint.string().c_str(),
              r.loss_csv.string().c_str());
  if (!a.json_out.empty()) {
    json trace = json::array();
    for (const auto& e : r.trace)
      trace.push_back({{"stage", e.stage}, {"epoch", e.epoch}, {"mean_loss", e.mean_loss}, {"lr", e.lr}});
    json j = {{"trace", trace},
              {"train_samples", r.train_samples},
              {"checkpoint", r.checkpoint.string()},
              {"loss_csv", r.loss_csv.string()}};
    if (r.stage1_checkpoint) j["stage1_checkpoint"] = r.stage1_checkpoint->string();
    write_json(a.json_out, j);
  }
  return 0;
}

int run_generate(const GenerateArgs& a) {
  if (!fs::exists(a.ckpt)) throw ConfigError("checkpoint " + a.ckpt + " does not exist");
  if (!fs::exists(a.data)) throw ConfigError("manifest " + a.data + " does not exist");
  const Generation g = generate_split(a.ckpt, a.data, a.split, a.threads);
  write_json(a.out, g.predictions);
  if (!a.refs_out.empty()) write_json(a.refs_out, g.references);
  std::printf("%zu predictions written to %s\n", g.predictions.size(), a.out.c_str());
  return 0;
}

int run_eval(const EvalArgs& a) {
  for (const auto& p : {a.pred, a.refs})
    if (!fs::exists(p)) throw ConfigError(p + " does not exist");
  MetricOptions opts;
  opts.bleu_smoothing = a.smooth;
  opts.meteor_stem = a.stem;
  const MetricReport r = evaluate_files(a.pred, a.refs, opts);
  std::cout << r.table();
  if (!a.json_out.empty()) write_json(a.json_out, r.to_json());
  return 0;
}

int run_cost(const CostArgs& a) {
  CostConfig c;
  if (!a.config.empty()) c = load_run_config(a.config).cost;
  if (!a.preset.empty()) {
    c.preset = a.preset;
    c.spec.reset();
  }
  if (!a.spec.empty()) {
    std::ifstream in(a.spec);
    if (!in) throw ConfigError("cannot open spec " + a.spec);
    try {
      c.spec = json::parse(in).get<ArchSpec>();
    } catch (const json::exception& e) {
      throw ConfigError("spec " + a.spec + ": " + e.what());
    }
  }
  if (a.s_enc) c.seq.s_enc = *a.s_enc;
  if (a.s_dec) c.seq.s_dec = *a.s_dec;
  if (a.gib) c.gib = true;
  if (c.seq.s_enc == 0 || c.seq.s_dec == 0) throw ConfigError("sequence lengths must be positive");

  if (a.published) {
    const auto rows = published_rows(c.seq);
    std::cout << published_table(rows, c.seq);
    if (!a.json_out.empty()) {
      json out = json::array();
      for (const auto& r : rows) {
        json row = {{"model", r.model},
                    {"pretrained", r.pretrained},
                    {"params", r.params},
                    {"flops", r.flops},
                    {"memory_gb", r.memory_gb}};
        if (r.estimated) {
          row["est_params"] = r.est_params;
          row["est_flops"] = r.est_flops;
          row["est_memory_gb"] = r.est_memory_gb;
        }
        out.push_back(row);
      }
      write_json(a.json_out, {{"s_enc", c.seq.s_enc}, {"s_dec", c.seq.s_dec}, {"rows", out}});
    }
    return 0;
  }
  const ArchSpec arch = c.spec ? *c.spec : preset(c.preset);
  arch.validate();
  const CostReport r = full_report(arch, c.seq, c.gib);
  std::cout << r.table();
  if (!a.json_out.empty()) write_json(a.json_out, r.to_json());
  return 0;
}

template <typename F>
int guarded(F&& f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DimensionError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-view fusion VQA toolkit"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Write a seeded synthetic multi-view dataset");
  synth->add_option("--scenes", sa.scenes, "Number of scenes")->required();
  synth->add_option("--frames", sa.frames, "Frames per scene");
  synth->add_option("--seed", sa.seed, "Generator seed");
  synth->add_option("--out", sa.out, "Output directory")->required();
  synth->add_option("--json", sa.json_out, "Also write the summary as JSON");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Two-stage training");
  train->add_option("--config", ta.config, "Run config JSON");
  train->add_option("--stage", ta.stage, "1, 2 or all")->check(CLI::IsMember({"1", "2", "all"}));
  train->add_option("--out", ta.out, "Output checkpoint")->required();
  train->add_option("--resume", ta.resume, "Checkpoint to continue from");
  train->add_option("--stop-after", ta.stop_after, "Stop after this many epochs");
  train->add_option("--data", ta.data, "Manifest (overrides data.manifest)");
  train->add_option("--lr", ta.lr, "Initial learning rate");
  train->add_option("--epochs", ta.epochs, "Epochs per stage");
  train->add_option("--batch-size", ta.batch_size, "Batch size");
  train->add_option("--seed", ta.seed, "Model and shuffle seed");
  train->add_flag("--lenient", ta.lenient, "Skip malformed records instead of failing");
  train->add_flag("-v,--verbose", ta.verbose, "Log each epoch to stderr");
  train->add_option("--json", ta.json_out, "Also write the loss trace as JSON");

  GenerateArgs ga;
  auto* gen = app.add_subcommand("generate", "Greedy answers for one split");
  gen->add_option("--ckpt", ga.ckpt, "Checkpoint")->required();
  gen->add_option("--data", ga.data, "Manifest")->required();
  gen->add_option("--split", ga.split, "train, val, test or all")
      ->check(CLI::IsMember({"train", "val", "test", "all"}));
  gen->add_option("--out", ga.out, "Predictions JSON")->required();
  gen->add_option("--refs-out", ga.refs_out, "Also write the matching references JSON");
  gen->add_option("--threads", ga.threads, "Worker threads (0 = MVFUSE_THREADS or all cores)");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Score predictions against references");
  eval->add_option("--pred", ea.pred, "Predictions JSON")->required();
  eval->add_option("--refs", ea.refs, "References JSON")->required();
  eval->add_option("--json", ea.json_out, "Also write the report as JSON");
  eval->add_flag("--bleu-smoothing", ea.smooth, "Add-one smoothing for BLEU n >= 2");
  eval->add_flag("--meteor-stem", ea.stem, "Stem-level METEOR matching");

  CostArgs ca;
  auto* cost = app.add_subcommand("cost", "Parameter, FLOP and memory estimates");
  auto* preset_opt = cost->add_option("--preset", ca.preset, "t5-base, t5-large, base, q-large or desk");
  cost->add_option("--spec", ca.spec, "Architecture JSON")->excludes(preset_opt);
  cost->add_option("--config", ca.config, "Run config JSON (cost section)");
  cost->add_option("--s-enc", ca.s_enc, "Encoder sequence length");
  cost->add_option("--s-dec", ca.s_dec, "Decoder sequence length");
  cost->add_flag("--gib", ca.gib, "Report memory in GiB (2^30 bytes)");
  cost->add_flag("--published", ca.published, "Published comparison table with estimates");
  cost->add_option("--json", ca.json_out, "Also write the report as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  if (*synth) return guarded([&] { return run_synth(sa); });
  if (*train) return guarded([&] { return run_train(ta); });
  if (*gen) return guarded([&] { return run_generate(ga); });
  if (*eval) return guarded([&] { return run_eval(ea); });
  return guarded([&] { return run_cost(ca); });
}
