#include "mvfuse/fusion.hpp"

#include <string>

#include "mvfuse/error.hpp"

namespace mvfuse {

GatedPoolParams::GatedPoolParams(std::size_t k, std::size_t m, SeededRng& rng, double std) {
  if (k == 0 || m == 0) throw ConfigError("gated pooling needs K >= 1 and M >= 1");
  w = {"fusion.w", ParamGroup::kFusion, rng.normal({k}, std), {}, true};
  z = {"fusion.Z", ParamGroup::kFusion, rng.normal({k, m}, std), {}, true};
  g = {"fusion.G", ParamGroup::kFusion, rng.normal({k, m}, std), {}, true};
}

GatedPoolParams::GatedPoolParams(Tensor w_, Tensor z_, Tensor g_) {
  const std::size_t k = w_.size();
  if (z_.rank() != 2 || z_.rows() != k || g_.shape() != z_.shape()) {
    throw DimensionError("gated pooling: w " + shape_str(w_.shape()) + ", Z " +
                         shape_str(z_.shape()) + ", G " + shape_str(g_.shape()) + " disagree");
  }
  w = {"fusion.w", ParamGroup::kFusion, w_.reshaped({k}), {}, true};
  z = {"fusion.Z", ParamGroup::kFusion, std::move(z_), {}, true};
  g = {"fusion.G", ParamGroup::kFusion, std::move(g_), {}, true};
}

namespace {

Var stack_views(std::span<const Var> views, std::size_t m) {
  if (views.empty()) throw DimensionError("fuse: no views to pool (N = 0)");
  std::vector<Var> flat;
  flat.reserve(views.size());
  for (std::size_t i = 0; i < views.size(); ++i) {
    const std::size_t len = views[i].value().size();
    if (len != m) {
      throw DimensionError("view " + std::to_string(i) + " flattens to " + std::to_string(len) +
                           " values but the pooling gate expects M = " + std::to_string(m));
    }
    flat.push_back(reshape(views[i], {1, m}));
  }
  return concat_rows(flat);
}

Var logits_from_stack(Tape& tape, Var stack, GatedPoolParams& p) {
  Var content = tanh(matmul(stack, transpose(tape.param(p.z))));
  Var gate = sigmoid(matmul(stack, transpose(tape.param(p.g))));
  Var w = reshape(tape.param(p.w), {p.k(), 1});
  return matmul(hadamard(content, gate), w);  // N x 1
}

std::vector<Var> as_constants(Tape& tape, std::span<const Tensor> views) {
  std::vector<Var> out;
  out.reserve(views.size());
  for (const auto& v : views) out.push_back(tape.constant(v));
  return out;
}

}  // namespace

Var attention_logits(Tape& tape, std::span<const Var> views, GatedPoolParams& p) {
  return logits_from_stack(tape, stack_views(views, p.m()), p);
}

FusionVars fuse(Tape& tape, std::span<const Var> views, GatedPoolParams& p) {
  Var stack = stack_views(views, p.m());
  Var alpha = softmax(logits_from_stack(tape, stack, p), 0);
  Var pooled = matmul(transpose(alpha), stack);  // 1 x M
  return {alpha, reshape(pooled, views[0].value().shape())};
}

std::vector<double> attention_logits(std::span<const Tensor> views, const GatedPoolParams& p) {
  Tape tape(false);
  auto vars = as_constants(tape, views);
  auto& params = const_cast<GatedPoolParams&>(p);  // read-only on a no-grad tape
  const Tensor& l = attention_logits(tape, vars, params).value();
  return {l.data().begin(), l.data().end()};
}

FusionOutput fuse(std::span<const Tensor> views, const GatedPoolParams& p) {
  Tape tape(false);
  auto vars = as_constants(tape, views);
  auto& params = const_cast<GatedPoolParams&>(p);
  FusionVars out = fuse(tape, vars, params);
  const Tensor& a = out.alpha.value();
  return {{a.data().begin(), a.data().end()}, out.fused.value()};
}

ProjectionLayer::ProjectionLayer(std::size_t in, std::size_t out, SeededRng& rng, double std) {
  weight = {"proj.weight", ParamGroup::kProjection, rng.normal({in, out}, std), {}, true};
  bias = {"proj.bias", ParamGroup::kProjection, Tensor({out}, 0.0), {}, true};
}

ProjectionLayer::ProjectionLayer(Tensor w, Tensor b) {
  if (w.rank() != 2 || b.size() != w.cols()) {
    throw DimensionError("projection weight " + shape_str(w.shape()) + " and bias " +
                         shape_str(b.shape()) + " disagree");
  }
  const std::size_t n = b.size();
  weight = {"proj.weight", ParamGroup::kProjection, std::move(w), {}, true};
  bias = {"proj.bias", ParamGroup::kProjection, b.reshaped({n}), {}, true};
}

Var project_and_concat(Tape& tape, Var fused, ProjectionLayer& proj, Var text_emb) {
  const Tensor& f = fused.value();
  if (f.cols() != proj.in_width()) {
    throw DimensionError("fused embedding width " + std::to_string(f.cols()) +
                         " does not match projection input " + std::to_string(proj.in_width()));
  }
  if (text_emb.value().cols() != proj.out_width()) {
    throw DimensionError("text embedding width " + std::to_string(text_emb.value().cols()) +
                         " does not match projection output " + std::to_string(proj.out_width()));
  }
  Var fused2d = f.rank() == 2 ? fused : reshape(fused, {1, f.size()});
  Var image = add_bias(matmul(fused2d, tape.param(proj.weight)), tape.param(proj.bias));
  const Var parts[] = {text_emb, image};
  return concat_rows(parts);
}

Tensor project_and_concat(const Tensor& fused, const ProjectionLayer& proj, const Tensor& text_emb) {
  Tape tape(false);
  auto& p = const_cast<ProjectionLayer&>(proj);
  return project_and_concat(tape, tape.constant(fused), p, tape.constant(text_emb)).value();
}

}  // namespace mvfuse
