#pragma once

#include <span>
#include <vector>

#include "mvfuse/autodiff.hpp"
#include "mvfuse/tensor.hpp"

namespace mvfuse {

/// Gated pooling attention parameters: w (K), Z (K x M), G (K x M), where
/// M = S_I * H_I is the flattened length of one view embedding.
struct GatedPoolParams {
  Parameter w;
  Parameter z;
  Parameter g;

  GatedPoolParams() = default;
  GatedPoolParams(std::size_t k, std::size_t m, SeededRng& rng, double std = 0.02);
  GatedPoolParams(Tensor w, Tensor z, Tensor g);

  std::size_t k() const { return w.value.size(); }
  std::size_t m() const { return z.value.cols(); }
};

struct FusionOutput {
  std::vector<double> alpha;
  Tensor fused;  // S_I x H_I
};

/// Per-view logit w^T (tanh(Z v_i) .* sigmoid(G v_i)) for each flattened view.
std::vector<double> attention_logits(std::span<const Tensor> views, const GatedPoolParams& p);

/// alpha = softmax(logits); fused = sum_i alpha_i V_i in the views' shape.
FusionOutput fuse(std::span<const Tensor> views, const GatedPoolParams& p);

struct FusionVars {
  Var alpha;  // N x 1
  Var fused;  // S_I x H_I
};

// Tape versions of the above; views may themselves require grad.
Var attention_logits(Tape& tape, std::span<const Var> views, GatedPoolParams& p);
FusionVars fuse(Tape& tape, std::span<const Var> views, GatedPoolParams& p);

/// Maps the fused image embedding from width H_I to the LM width H_T.
struct ProjectionLayer {
  Parameter weight;  // H_I x H_T
  Parameter bias;    // H_T

  ProjectionLayer() = default;
  ProjectionLayer(std::size_t in, std::size_t out, SeededRng& rng, double std = 0.02);
  ProjectionLayer(Tensor weight, Tensor bias);

  std::size_t in_width() const { return weight.value.rows(); }
  std::size_t out_width() const { return weight.value.cols(); }
};

/// Text rows first, then the projected image rows: (S_T + S_I) x H_T.
Tensor project_and_concat(const Tensor& fused, const ProjectionLayer& proj, const Tensor& text_emb);
Var project_and_concat(Tape& tape, Var fused, ProjectionLayer& proj, Var text_emb);

}  // namespace mvfuse
