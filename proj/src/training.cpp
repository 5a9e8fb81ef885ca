#include "mvfuse/training.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "mvfuse/error.hpp"

namespace mvfuse {

using json = nlohmann::json;

// ------------------------------------------------------------------- config

std::vector<std::string> TrainConfig::problems() const {
  std::vector<std::string> out;
  if (!(lr0 > 0)) out.push_back("train.lr0 must be positive");
  if (!(weight_decay >= 0)) out.push_back("train.weight_decay must be non-negative");
  if (batch_size == 0) out.push_back("train.batch_size must be positive");
  if (epochs_per_stage == 0) out.push_back("train.epochs_per_stage must be positive");
  if (!(lr_gamma > 0 && lr_gamma <= 1)) out.push_back("train.lr_gamma must lie in (0, 1]");
  if (!(clip_norm >= 0)) out.push_back("train.clip_norm must be non-negative (0 disables)");
  if (!(beta1 >= 0 && beta1 < 1)) out.push_back("train.beta1 must lie in [0, 1)");
  if (!(beta2 >= 0 && beta2 < 1)) out.push_back("train.beta2 must lie in [0, 1)");
  if (!(eps > 0)) out.push_back("train.eps must be positive");
  return out;
}

void TrainConfig::validate() const {
  const auto p = problems();
  if (p.empty()) return;
  std::string msg = "invalid training config:";
  for (const auto& s : p) msg += "\n  " + s;
  throw ConfigError(msg);
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"lr0", c.lr0},
           {"weight_decay", c.weight_decay},
           {"batch_size", c.batch_size},
           {"epochs_per_stage", c.epochs_per_stage},
           {"lr_gamma", c.lr_gamma},
           {"seed", c.seed},
           {"clip_norm", c.clip_norm},
           {"reset_optimizer", c.reset_optimizer},
           {"beta1", c.beta1},
           {"beta2", c.beta2},
           {"eps", c.eps}};
}

void from_json(const json& j, TrainConfig& c) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  static const std::set<std::string> known = {"lr0",       "weight_decay", "batch_size",
                                              "epochs_per_stage", "lr_gamma", "seed",
                                              "clip_norm", "reset_optimizer", "beta1",
                                              "beta2",     "eps"};
  std::vector<std::string> unknown;
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) unknown.push_back("train." + k);
  if (!unknown.empty()) {
    std::string msg = "unknown key(s):";
    for (const auto& k : unknown) msg += " " + k;
    throw ConfigError(msg);
  }
  try {
    if (j.contains("lr0")) c.lr0 = j.at("lr0").get<double>();
    if (j.contains("weight_decay")) c.weight_decay = j.at("weight_decay").get<double>();
    if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<std::size_t>();
    if (j.contains("epochs_per_stage"))
      c.epochs_per_stage = j.at("epochs_per_stage").get<std::size_t>();
    if (j.contains("lr_gamma")) c.lr_gamma = j.at("lr_gamma").get<double>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("clip_norm")) c.clip_norm = j.at("clip_norm").get<double>();
    if (j.contains("reset_optimizer")) c.reset_optimizer = j.at("reset_optimizer").get<bool>();
    if (j.contains("beta1")) c.beta1 = j.at("beta1").get<double>();
    if (j.contains("beta2")) c.beta2 = j.at("beta2").get<double>();
    if (j.contains("eps")) c.eps = j.at("eps").get<double>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
}

double lr_schedule(const TrainConfig& cfg, std::size_t epoch) {
  return cfg.lr0 * std::pow(cfg.lr_gamma, static_cast<double>(epoch));
}

// --------------------------------------------------------------------- plan

StagePlan StagePlan::for_stage(int stage, bool lora) {
  StagePlan p;
  p.stage = stage;
  if (stage == 1) {
    p.trainable = {ParamGroup::kFusion, ParamGroup::kProjection};
    p.frozen = {ParamGroup::kPatch, ParamGroup::kLm, ParamGroup::kLora};
  } else if (stage == 2) {
    p.trainable = {ParamGroup::kFusion, ParamGroup::kProjection,
                   lora ? ParamGroup::kLora : ParamGroup::kLm};
    p.frozen = {ParamGroup::kPatch, lora ? ParamGroup::kLm : ParamGroup::kLora};
  } else {
    throw ConfigError("stage must be 1 or 2, got " + std::to_string(stage));
  }
  return p;
}

bool StagePlan::trains(ParamGroup g) const {
  return std::find(trainable.begin(), trainable.end(), g) != trainable.end();
}

void apply_plan(VisionLanguageModel& model, const StagePlan& plan) {
  std::set<const Parameter*> int8_backed;
  for (Linear* l : model.lm.linears())
    if (l->quant) int8_backed.insert(&l->weight);
  for (Parameter* p : model.parameters())
    p->trainable = plan.trains(p->group) && !int8_backed.count(p);
  model.patch.frozen = true;
}

// ---------------------------------------------------------------- optimizer

void optimizer_step(std::span<Parameter* const> params, AdamState& state, const TrainConfig& cfg,
                    double lr) {
  for (const Parameter* p : params) {
    if (!p->trainable) continue;
    if (p->grad.size() != p->value.size()) {
      throw DimensionError("gradient of " + p->name + " has shape " + shape_str(p->grad.shape()) +
                           ", expected " + shape_str(p->value.shape()));
    }
    if (!p->grad.all_finite()) throw NumericError("non-finite gradient in parameter " + p->name);
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (Parameter* p : params) {
    if (!p->trainable) continue;
    auto& m = state.m[p->name];
    auto& v = state.v[p->name];
    const std::size_t n = p->value.size();
    if (m.size() != n) m.assign(n, 0.0);
    if (v.size() != n) v.assign(n, 0.0);
    auto w = p->value.data();
    auto g = p->grad.data();
    for (std::size_t i = 0; i < n; ++i) {
      w[i] -= lr * cfg.weight_decay * w[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
    if (!p->value.all_finite()) throw NumericError("update produced non-finite values in " + p->name);
  }
}

double clip_grad_norm(std::span<Parameter* const> params, double max_norm) {
  double sq = 0.0;
  for (const Parameter* p : params) {
    if (!p->trainable) continue;
    for (double g : p->grad.data()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const double c = max_norm / norm;
    for (Parameter* p : params) {
      if (!p->trainable) continue;
      for (double& g : p->grad.data()) g *= c;
    }
  }
  return norm;
}

// --------------------------------------------------------------------- loop

std::vector<TrainExample> prepare_examples(const VisionLanguageModel& model,
                                           const Tokenizer& tokenizer,
                                           std::span<const QASample> samples) {
  std::vector<TrainExample> out;
  out.reserve(samples.size());
  // Frames are shared by several questions; embed each image set once.
  std::map<std::string, std::vector<Tensor>> cache;
  for (const auto& s : samples) {
    const std::string frame_key = s.scene_id + "/" + s.frame_id;
    auto it = cache.find(frame_key);
    if (it == cache.end()) {
      const auto images = s.load_views();
      it = cache.emplace(frame_key, model.embed_views(images)).first;
    }
    out.push_back(TrainExample{s.id(), it->second, tokenizer.encode(s.question),
                               tokenizer.encode(s.answer)});
  }
  return out;
}

TrainState initial_state(const TrainConfig& cfg) {
  TrainState s;
  s.rng = SeededRng(cfg.seed);
  return s;
}

Var batch_loss(Tape& tape, VisionLanguageModel& model, std::span<const TrainExample* const> batch) {
  if (batch.empty()) throw DataError("empty batch");
  std::vector<Var> terms;
  double tokens = 0.0;
  for (const TrainExample* ex : batch) {
    std::vector<Var> views;
    for (const auto& v : ex->views) views.push_back(tape.constant(v));
    Var l = model.answer_loss(tape, views, ex->question, ex->answer);
    const double n =
        static_cast<double>(std::min(ex->answer.size(), model.spec().max_seq - 1) + 1);
    terms.push_back(scale(l, n));
    tokens += n;
  }
  Var total = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) total = add(total, terms[i]);
  return scale(total, 1.0 / tokens);
}

void run_stage(VisionLanguageModel& model, const StagePlan& plan, const TrainConfig& cfg,
               std::span<const TrainExample> data, TrainState& state,
               const EpochCallback& on_epoch, std::optional<std::size_t> stop_after) {
  cfg.validate();
  if (data.empty()) throw DataError("training set is empty");
  if (plan.stage == 2 && state.stage < 1) {
    throw ConfigError("stage 2 requires a stage-1 checkpoint (resume from stage 1 first)");
  }
  if (plan.stage == 2 && state.stage == 1 && !state.stage_complete(cfg)) {
    throw ConfigError("stage 1 has not finished; resume stage 1 before starting stage 2");
  }
  if (plan.stage < state.stage) {
    throw ConfigError("checkpoint is already past stage " + std::to_string(plan.stage));
  }
  if (plan.stage != state.stage) {
    state.stage = plan.stage;
    state.epoch = 0;
    if (cfg.reset_optimizer) state.opt = AdamState{};
  }
  apply_plan(model, plan);
  const auto params = model.parameters();
  std::vector<Parameter*> trainable;
  for (Parameter* p : params)
    if (p->trainable) trainable.push_back(p);

  std::size_t ran = 0;
  while (state.epoch < cfg.epochs_per_stage) {
    if (stop_after && ran >= *stop_after) break;
    const double lr = lr_schedule(cfg, state.epoch);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    state.rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<const TrainExample*> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(&data[order[i]]);
      for (Parameter* p : trainable) p->zero_grad();
      Tape tape;
      Var loss = batch_loss(tape, model, batch);
      const double value = loss.value().item();
      if (!std::isfinite(value)) {
        throw NumericError("non-finite loss at stage " + std::to_string(plan.stage) + " epoch " +
                           std::to_string(state.epoch));
      }
      tape.backward(loss);
      clip_grad_norm(trainable, cfg.clip_norm);
      optimizer_step(trainable, state.opt, cfg, lr);
      loss_sum += value;
      ++batches;
    }
    EpochLog log{plan.stage, state.epoch, loss_sum / static_cast<double>(batches), lr};
    state.trace.push_back(log);
    ++state.epoch;
    ++ran;
    if (on_epoch) on_epoch(log, state);
  }
}

void write_loss_csv(const std::filesystem::path& path, std::span<const EpochLog> trace) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "stage,epoch,mean_loss,lr\n";
  char buf[128];
  for (const auto& e : trace) {
    std::snprintf(buf, sizeof buf, "%d,%zu,%.17g,%.17g\n", e.stage, e.epoch, e.mean_loss, e.lr);
    out << buf;
  }
}

// --------------------------------------------------------------- checkpoint

namespace {

constexpr char kMagic[4] = {'M', 'V', 'F', '1'};
constexpr std::size_t kAlign = 64;

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

struct ArrayBlob {
  std::string name;
  std::string dtype;
  Shape shape;
  std::vector<char> bytes;
};

template <typename T>
std::vector<char> to_bytes(const std::vector<T>& v) {
  std::vector<char> b(v.size() * sizeof(T));
  if (!b.empty()) std::memcpy(b.data(), v.data(), b.size());
  return b;
}

ArrayBlob blob_f(const std::string& name, const Tensor& t, StorageType storage) {
  if (storage == StorageType::kF32) {
    std::vector<float> f(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) f[i] = static_cast<float>(t[i]);
    return {name, "f32", t.shape(), to_bytes(f)};
  }
  return {name, "f64", t.shape(), to_bytes(t.storage())};
}

// Names of int8-backed weights and their linear layers.
std::map<std::string, const Linear*> quantized_weights(const VisionLanguageModel& model) {
  std::map<std::string, const Linear*> out;
  auto& lm = const_cast<LanguageModel&>(model.lm);
  for (const Linear* l : lm.linears())
    if (l->quant) out[l->weight.name] = l;
  return out;
}

std::vector<ArrayBlob> collect_arrays(const VisionLanguageModel& model, const TrainState& state,
                                      StorageType storage) {
  std::vector<ArrayBlob> out;
  const auto quant = quantized_weights(model);
  for (const Parameter* p : model.parameters()) {
    auto q = quant.find(p->name);
    if (q != quant.end()) {
      const auto& ql = *q->second->quant;
      out.push_back({p->name, "i8", ql.shape, to_bytes(ql.q)});
      out.push_back(blob_f(p->name + ".scale", Tensor::scalar(ql.scale), StorageType::kF64));
    } else {
      out.push_back(blob_f(p->name, p->value, storage));
    }
  }
  for (const auto& [name, m] : state.opt.m)
    out.push_back({"opt.m." + name, "f64", {m.size()}, to_bytes(m)});
  for (const auto& [name, v] : state.opt.v)
    out.push_back({"opt.v." + name, "f64", {v.size()}, to_bytes(v)});
  return out;
}

json trace_json(const std::vector<EpochLog>& trace) {
  json a = json::array();
  for (const auto& e : trace)
    a.push_back({{"stage", e.stage}, {"epoch", e.epoch}, {"mean_loss", e.mean_loss}, {"lr", e.lr}});
  return a;
}

std::size_t dtype_size(const std::string& dtype) {
  if (dtype == "f64") return 8;
  if (dtype == "f32") return 4;
  if (dtype == "i8") return 1;
  throw DataError("checkpoint: unknown dtype '" + dtype + "'");
}

struct RawCheckpoint {
  json header;
  std::uint64_t data_start = 0;
  std::vector<char> file;
};

RawCheckpoint read_raw(const std::filesystem::path& path, bool header_only) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  char magic[4];
  std::uint64_t hlen = 0;
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw DataError(path.string() + " is not a checkpoint (bad magic bytes)");
  }
  if (!in.read(reinterpret_cast<char*>(&hlen), 8)) {
    throw DataError("checkpoint " + path.string() + " is truncated (no header length)");
  }
  std::string htext(hlen, '\0');
  if (!in.read(htext.data(), static_cast<std::streamsize>(hlen))) {
    throw DataError("checkpoint " + path.string() + " is truncated inside the header");
  }
  RawCheckpoint raw;
  try {
    raw.header = json::parse(htext);
  } catch (const json::exception& e) {
    throw DataError("checkpoint header is not valid JSON: " + std::string(e.what()));
  }
  const int version = raw.header.value("format_version", -1);
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint format version " + std::to_string(version) +
                    " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  raw.data_start = (12 + hlen + kAlign - 1) / kAlign * kAlign;
  if (!header_only) {
    in.seekg(0, std::ios::end);
    const auto size = static_cast<std::size_t>(in.tellg());
    raw.file.resize(size);
    in.seekg(0);
    in.read(raw.file.data(), static_cast<std::streamsize>(size));
  }
  return raw;
}

Checkpoint parse_header(const json& h) {
  Checkpoint c;
  try {
    c.spec = h.at("model").get<ModelSpec>();
    c.vocab = h.at("vocab").get<std::vector<std::string>>();
    c.train = h.at("train").get<TrainConfig>();
    const auto& st = h.at("state");
    c.state.stage = st.at("stage").get<int>();
    c.state.epoch = st.at("epoch").get<std::size_t>();
    c.state.rng.set_state(st.at("rng").get<std::string>());
    c.state.opt.step = st.at("opt_step").get<std::uint64_t>();
    for (const auto& e : st.at("trace")) {
      c.state.trace.push_back({e.at("stage").get<int>(), e.at("epoch").get<std::size_t>(),
                               e.at("mean_loss").get<double>(), e.at("lr").get<double>()});
    }
    c.meta = h.at("meta");
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint header is incomplete: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("checkpoint header: ") + e.what());
  }
  return c;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const VisionLanguageModel& model,
                     const Tokenizer& tokenizer, const TrainConfig& cfg, const TrainState& state,
                     const json& meta, StorageType storage) {
  const auto arrays = collect_arrays(model, state, storage);
  ModelSpec spec = model.spec();
  spec.vocab_size = tokenizer.size();

  // Offsets are relative to the start of the data section, which begins at
  // the first 64-byte boundary after the header.
  json manifest = json::array();
  std::uint64_t offset = 0;
  for (const auto& a : arrays) {
    offset = (offset + kAlign - 1) / kAlign * kAlign;
    manifest.push_back({{"name", a.name},
                        {"dtype", a.dtype},
                        {"shape", a.shape},
                        {"offset", offset},
                        {"length", a.bytes.size()}});
    offset += a.bytes.size();
  }
  json header = {{"format_version", kCheckpointVersion},
                 {"model", spec},
                 {"vocab", tokenizer.tokens()},
                 {"train", cfg},
                 {"state",
                  {{"stage", state.stage},
                   {"epoch", state.epoch},
                   {"rng", state.rng.state()},
                   {"opt_step", state.opt.step},
                   {"trace", trace_json(state.trace)}}},
                 {"meta", meta},
                 {"arrays", manifest}};
  const std::string htext = header.dump();
  const std::uint64_t hlen = htext.size();
  const std::uint64_t data_start = (12 + hlen + kAlign - 1) / kAlign * kAlign;

  std::vector<char> buf(data_start + offset, '\0');
  std::memcpy(buf.data(), kMagic, 4);
  std::memcpy(buf.data() + 4, &hlen, 8);
  std::memcpy(buf.data() + 12, htext.data(), hlen);
  for (std::size_t i = 0; i < arrays.size(); ++i) {
    const auto off = manifest[i]["offset"].get<std::uint64_t>();
    if (!arrays[i].bytes.empty())
      std::memcpy(buf.data() + data_start + off, arrays[i].bytes.data(), arrays[i].bytes.size());
  }
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint " + path.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw DataError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint_header(const std::filesystem::path& path) {
  return parse_header(read_raw(path, true).header);
}

Checkpoint load_checkpoint_into(const std::filesystem::path& path, VisionLanguageModel& model) {
  const RawCheckpoint raw = read_raw(path, false);
  Checkpoint c = parse_header(raw.header);

  struct Entry {
    std::string dtype;
    Shape shape;
    const char* data;
    std::size_t length;
  };
  std::map<std::string, Entry> entries;
  std::vector<std::string> order;
  try {
    for (const auto& a : raw.header.at("arrays")) {
      Entry e;
      const auto name = a.at("name").get<std::string>();
      e.dtype = a.at("dtype").get<std::string>();
      e.shape = a.at("shape").get<Shape>();
      const auto off = a.at("offset").get<std::uint64_t>();
      e.length = a.at("length").get<std::size_t>();
      if (e.length != shape_numel(e.shape) * dtype_size(e.dtype)) {
        throw DataError("checkpoint array " + name + " has inconsistent length");
      }
      if (raw.data_start + off + e.length > raw.file.size()) {
        throw DataError("checkpoint " + path.string() + " is truncated (array " + name +
                        " extends past end of file)");
      }
      e.data = raw.file.data() + raw.data_start + off;
      entries[name] = e;
      order.push_back(name);
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint array manifest is malformed: ") + e.what());
  }

  auto read_tensor = [&](const std::string& name, const Entry& e) {
    Tensor t(e.shape, 0.0);
    if (e.dtype == "f64") {
      std::memcpy(t.storage().data(), e.data, e.length);
    } else if (e.dtype == "f32") {
      std::vector<float> f(t.size());
      std::memcpy(f.data(), e.data, e.length);
      for (std::size_t i = 0; i < f.size(); ++i) t[i] = f[i];
    } else {
      throw DataError("checkpoint array " + name + " has dtype " + e.dtype +
                      " where a float array is expected");
    }
    return t;
  };

  // Validate everything against the model before modifying it.
  const auto quant = quantized_weights(model);
  const auto params = model.parameters();
  std::set<std::string> expected;
  for (const Parameter* p : params) {
    expected.insert(p->name);
    auto it = entries.find(p->name);
    if (it == entries.end()) {
      throw DataError("checkpoint does not match the model: array " + p->name + " is missing");
    }
    if (it->second.shape != p->value.shape()) {
      throw DataError("checkpoint does not match the model: array " + p->name + " has shape " +
                      shape_str(it->second.shape) + ", model expects " +
                      shape_str(p->value.shape()));
    }
    const bool is_q = quant.count(p->name) > 0;
    if (is_q != (it->second.dtype == "i8")) {
      throw DataError("checkpoint does not match the model: array " + p->name +
                      (is_q ? " should be int8" : " should be floating point"));
    }
    if (is_q) {
      expected.insert(p->name + ".scale");
      if (!entries.count(p->name + ".scale")) {
        throw DataError("checkpoint does not match the model: array " + p->name +
                        ".scale is missing");
      }
    }
  }
  for (const auto& name : order) {
    if (name.rfind("opt.", 0) == 0) continue;
    if (!expected.count(name)) {
      throw DataError("checkpoint does not match the model: unexpected array " + name);
    }
  }

  for (Parameter* p : params) {
    const Entry& e = entries.at(p->name);
    if (quant.count(p->name)) {
      Linear* l = const_cast<Linear*>(quant.at(p->name));
      auto& ql = *l->quant;
      ql.q.resize(e.length);
      std::memcpy(ql.q.data(), e.data, e.length);
      ql.scale = read_tensor(p->name + ".scale", entries.at(p->name + ".scale")).item();
      l->quant_cache = ql.dequantized();
      p->value = l->quant_cache;
    } else {
      p->value = read_tensor(p->name, e);
    }
  }
  // Quantized biases track the float bias parameter.
  for (Linear* l : model.lm.linears())
    if (l->quant && l->bias) l->quant->bias = l->bias->value;

  for (const auto& name : order) {
    const bool is_m = name.rfind("opt.m.", 0) == 0;
    const bool is_v = name.rfind("opt.v.", 0) == 0;
    if (!is_m && !is_v) continue;
    const Tensor t = read_tensor(name, entries.at(name));
    auto& dst = is_m ? c.state.opt.m : c.state.opt.v;
    dst[name.substr(6)] = t.storage();
  }
  return c;
}

LoadedModel load_checkpoint(const std::filesystem::path& path) {
  Checkpoint header = read_checkpoint_header(path);
  LoadedModel out;
  out.tokenizer = Tokenizer::from_tokens(header.vocab);
  out.model = std::make_unique<VisionLanguageModel>(header.spec, 0);
  out.ckpt = load_checkpoint_into(path, *out.model);
  return out;
}

}  // namespace mvfuse
