#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "mvfuse/cost.hpp"
#include "mvfuse/data.hpp"
#include "mvfuse/error.hpp"
#include "mvfuse/fusion.hpp"
#include "mvfuse/lm.hpp"
#include "mvfuse/metrics.hpp"
#include "mvfuse/pipeline.hpp"

namespace py = pybind11;
using namespace mvfuse;
using json = nlohmann::json;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  if (shape.empty()) shape = {1};
  return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  Array out(t.shape());
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

// Structured results cross the boundary as JSON text; the Python side parses it.
std::string dump(const json& j) { return j.dump(); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Multi-view gated fusion VLM toolkit (C++ core)";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);

  m.def("tokenize", &Tokenizer::split, py::arg("text"));

  m.def(
      "synth",
      [](const std::filesystem::path& out, std::size_t scenes, std::size_t frames, std::uint64_t seed) {
        const auto s = gen_synthetic(scenes, frames, seed, out);
        return dump({{"scenes", s.scenes}, {"frames", s.frames}, {"samples", s.samples},
                     {"manifest", s.manifest.string()}});
      },
      py::arg("out"), py::arg("scenes"), py::arg("frames") = 1, py::arg("seed") = 0);

  m.def(
      "fuse",
      [](const std::vector<Array>& views, const Array& w, const Array& z, const Array& g) {
        std::vector<Tensor> vs;
        for (const auto& v : views) vs.push_back(to_tensor(v));
        const GatedPoolParams p(to_tensor(w), to_tensor(z), to_tensor(g));
        const auto out = fuse(vs, p);
        return py::make_tuple(out.alpha, to_array(out.fused));
      },
      py::arg("views"), py::arg("w"), py::arg("z"), py::arg("g"),
      "Gated pooling over views; returns (alpha, fused).");

  m.def(
      "quantize_int8",
      [](const Array& w) {
        const auto q = quantize_int8(to_tensor(w));
        py::array_t<std::int8_t> out(q.shape);
        std::copy(q.q.begin(), q.q.end(), out.mutable_data());
        return py::make_tuple(out, q.scale);
      },
      py::arg("weight"));

  m.def(
      "evaluate_pairs",
      [](const std::vector<std::tuple<std::string, std::string, std::vector<std::string>>>& pairs,
         bool bleu_smoothing, bool meteor_stem) {
        std::vector<EvalPair> corpus;
        for (const auto& [id, cand, refs] : pairs) {
          EvalPair p{id, Tokenizer::split(cand), {}};
          for (const auto& r : refs) p.references.push_back(Tokenizer::split(r));
          corpus.push_back(std::move(p));
        }
        return dump(evaluate(std::move(corpus), {bleu_smoothing, meteor_stem}).to_json());
      },
      py::arg("pairs"), py::arg("bleu_smoothing") = false, py::arg("meteor_stem") = false);

  m.def(
      "evaluate_files",
      [](const std::filesystem::path& pred, const std::filesystem::path& refs, bool bleu_smoothing,
         bool meteor_stem) {
        return dump(evaluate_files(pred, refs, {bleu_smoothing, meteor_stem}).to_json());
      },
      py::arg("predictions"), py::arg("references"), py::arg("bleu_smoothing") = false,
      py::arg("meteor_stem") = false);

  m.def("cost_presets", &preset_names);
  m.def(
      "cost",
      [](const std::string& preset_name, const std::string& spec_json, std::size_t s_enc, std::size_t s_dec,
         bool gib) {
        const ArchSpec arch =
            spec_json.empty() ? preset(preset_name) : json::parse(spec_json).get<ArchSpec>();
        return dump(full_report(arch, {s_enc, s_dec}, gib).to_json());
      },
      py::arg("preset") = "base", py::arg("spec_json") = "", py::arg("s_enc") = published_seq().s_enc,
      py::arg("s_dec") = published_seq().s_dec, py::arg("gib") = false);

  m.def(
      "train",
      [](const std::string& config_json, const std::filesystem::path& out, const std::string& stage,
         std::optional<std::filesystem::path> resume) {
        TrainRequest req;
        req.config = parse_run_config(json::parse(config_json));
        req.stage = stage;
        req.out = out;
        req.resume = std::move(resume);
        TrainOutcome o;
        {
          py::gil_scoped_release release;
          o = train_pipeline(req);
        }
        json trace = json::array();
        for (const auto& e : o.trace)
          trace.push_back({{"stage", e.stage}, {"epoch", e.epoch}, {"mean_loss", e.mean_loss}, {"lr", e.lr}});
        return dump({{"trace", trace},
                     {"checkpoint", o.checkpoint.string()},
                     {"loss_csv", o.loss_csv.string()},
                     {"train_samples", o.train_samples}});
      },
      py::arg("config_json"), py::arg("out"), py::arg("stage") = "all", py::arg("resume") = py::none());

  m.def(
      "generate",
      [](const std::filesystem::path& ckpt, const std::filesystem::path& manifest, const std::string& split,
         std::size_t threads) {
        Generation g;
        {
          py::gil_scoped_release release;
          g = generate_split(ckpt, manifest, split, threads);
        }
        return dump({{"predictions", g.predictions}, {"references", g.references}});
      },
      py::arg("checkpoint"), py::arg("manifest"), py::arg("split") = "test", py::arg("threads") = 0);
}
