#include "mvfuse/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "mvfuse/error.hpp"

namespace mvfuse {

const Tensor& Var::value() const { return tape_->value(*this); }
bool Var::requires_grad() const { return tape_->requires_grad(*this); }

Var Tape::constant(Tensor t) {
  nodes_.push_back(Node{std::move(t), {}, {}, nullptr, false});
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::leaf(Tensor t) {
  nodes_.push_back(Node{std::move(t), {}, {}, nullptr, grad_enabled_});
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::param(Parameter& p) {
  const bool rg = grad_enabled_ && p.trainable;
  nodes_.push_back(Node{p.value, {}, {}, rg ? &p : nullptr, rg});
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, Backward fn) {
  bool rg = false;
  if (grad_enabled_) {
    for (const auto& v : inputs) rg = rg || nodes_[v.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, rg ? std::move(fn) : Backward{}, nullptr, rg});
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Tensor Tape::grad(Var v) const {
  const auto& n = nodes_[v.id()];
  if (n.grad.empty()) return Tensor(n.value.shape(), 0.0);
  return Tensor(n.value.shape(), n.grad);
}

std::vector<double>* Tape::grad_buffer(Var v) {
  auto& n = nodes_[v.id()];
  if (!n.requires_grad) return nullptr;
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return &n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw DimensionError("backward: loss is not on this tape");
  if (value(loss).size() != 1) {
    throw DimensionError("backward: loss must be scalar, got " + shape_str(value(loss).shape()));
  }
  for (auto& n : nodes_) n.grad.clear();
  if (!nodes_[loss.id()].requires_grad) return;
  nodes_[loss.id()].grad.assign(1, 1.0);
  // Node i's backward reads its own grad (already complete, since every
  // consumer of i was recorded after it) and pushes into its inputs.
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    auto& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this);
    if (n.param != nullptr) {
      auto& pg = n.param->grad;
      if (pg.shape() != n.value.shape()) pg = Tensor(n.value.shape(), 0.0);
      for (std::size_t k = 0; k < n.grad.size(); ++k) pg[k] += n.grad[k];
    }
  }
}

namespace {

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) +
                       " and " + shape_str(b.shape()));
}

void require_2d(const char* op, const Tensor& a) {
  if (a.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(a.shape()));
  }
}

// Gradient of this node's output, captured by id so closures stay valid when
// the node vector reallocates.
const std::vector<double>& out_grad(Tape& t, std::uint32_t id) {
  return *t.grad_buffer(Var(&t, id));
}

template <typename F>
Var unary_pointwise(Var a, F f, double (*dfdy_from)(double x, double y)) {
  Tape& t = *a.tape();
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const Var in[] = {a};
  std::uint32_t self = static_cast<std::uint32_t>(t.size());
  return t.record(std::move(y), in, [a, self, dfdy_from](Tape& tp) {
    auto* ga = tp.grad_buffer(a);
    if (!ga) return;
    const auto& g = out_grad(tp, self);
    const Tensor& x = tp.value(a);
    const Tensor& y = tp.value(Var(&tp, self));
    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * dfdy_from(x[i], y[i]);
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = *a.tape();
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_2d("matmul", A);
  require_2d("matmul", B);
  if (A.cols() != B.rows()) shape_error("matmul", A, B);
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Tensor C({m, n});
  gemm(false, false, m, n, k, A.storage().data(), B.storage().data(), 0.0, C.storage().data());
  const Var in[] = {a, b};
  std::uint32_t self = static_cast<std::uint32_t>(t.size());
  return t.record(std::move(C), in, [a, b, self, m, k, n](Tape& tp) {
    const auto& g = out_grad(tp, self);
    const Tensor& A = tp.value(a);
    const Tensor& B = tp.value(b);
    // dA += dC B^T, dB += A^T dC
    if (auto* ga = tp.grad_buffer(a))
      gemm(false, true, m, k, n, g.data(), B.storage().data(), 1.0, ga->data());
    if (auto* gb = tp.grad_buffer(b))
      gemm(true, false, k, n, m, A.storage().data(), g.data(), 1.0, gb->data());
  });
}

Var transpose(Var a) {
  Tape& t = *a.tape();
  const Tensor& A = a.value();
  require_2d("transpose", A);
  const std::size_t r = A.rows(), c = A.cols();
  Tensor T({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) T[j * r + i] = A[i * c + j];
  const Var in[] = {a};
  std::uint32_t self = static_cast<std::uint32_t>(t.size());
  return t.record(std::move(T), in, [a, self, r, c](Tape& tp) {
    auto* ga = tp.grad_buffer(a);
    if (!ga) return;
    const auto& g = out_grad(tp, self);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) (*ga)[i * c + j] += g[j * r + i];
  });
}

namespace {

Var binary_same_shape(const char* op, Var a, Var b, double sa, double sb) {
  Tape& t = *a.tape();
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.shape() != B.shape()) shape_error(op, A, B);
  Tensor C(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) C[i] = sa * A[i] + sb * B[i];
  const Var in[] = {a, b};
  std::uint32_t self = static_cast<std::uint32_t>(t.size());
  return t.record(std::move(C), in, [a, b, self, sa, sb](Tape& tp) {
    const auto& g = out_grad(tp, self);
    if (auto* ga = tp.grad_buffer(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += sa * g[i];
    if (auto* gb = tp.grad_buffer(b))
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += sb * g[i];
  });
}

}  // namespace

Var add(Var a, Var b) { return binary_same_shape("add", a, b, 1.0, 1.0); }
Var sub(Var a, Var b) { return binary_same_shape("sub", a, b, 1.0, -1.0); }

Var hadamard(Var a, Var b) {
  Tape& t = *a.tape();
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.shape() != B.shape()) shape_error("hadamard", A, B);
  Tensor C(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) C[i] = A[i] * B[i];
  const Var in[] = {a, b};
  std::uint32_t self = static_cast<std::uint32_t>(t.size());
  return t.record(std::move(C), in, [a, b, self](Tape& tp) {
    const auto& g = out_grad(tp, self);
    const Tensor& A = tp.value(a);
    const Tensor& B = tp.value(b);
    if (auto* ga = tp.grad_buffer(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * B[i];
    if (auto* gb = tp.grad_buffer(b))
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * A[i];
  });
}

Var mul(Var a, Var b) {
  if (b.value().size() != 1 || a.value().size() == 1) return hadamard(a, b);
  Tape& t = *a.tape();
  const Tensor& A = a.value();
  const double s = b.value()[0];
  Tensor C(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) C[i] = A[i] * s;
  const Var in[] = {a, b};
  std::uint32_t self = static_cast<std::uint32_t>(t.size());
  return t.record(std::move(C), in, [a, b, self](Tape& tp) {
    const auto& g = out_grad(tp, self);
    const Tensor& A = tp.value(a);
    const double s = tp.value(b)[0];
    if (auto* ga = tp.grad_buffer(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * s;
    if (auto* gb = tp.grad_buffer(b)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * A[i];
      (*gb)[0] += acc;
    }
  });
}

Var scale(Var a, double c) {
  Tape& t = *a.tape();
  const Tensor& A = a.value();
  Tensor C(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) C[i] = A[i] * c;
  const Var in[] = {a};
  std::uint32_t self = static_cast<std::uint32_t>(t.size());
  return t.record(std::move(C), in, [a, self, c](Tape& tp) {
    auto* ga = tp.grad_buffer(a);
    if (!ga) return;
    const auto& g = out_grad(tp, self);
    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * c;
  });
}

Var add_bias(Var x, Var bias) {
  Tape& t = *x.tape();
  const Tensor& X = x.value();
  const Tensor& b = bias.value();
  if (b.size() != X.cols()) shape_error("add_bias", X, b);
  const std::size_t r = X.rows(), c = X.cols();
  Tensor Y = X;
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) Y[i * c + j] += b[j];
  const Var in[] = {x, bias};
  std::uint32_t self = static_cast<std::uint32_t>(t.size());
  return t.record(std::move(Y), in, [x, bias, self, r, c](Tape& tp) {
    const auto& g = out_grad(tp, self);
    if (auto* gx = tp.grad_buffer(x))
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
    if (auto* gb = tp.grad_buffer(bias))
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) (*gb)[j] += g[i * c + j];
  });
}

Var tanh(Var a) {
  return unary_pointwise(
      a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var a) {
  return unary_pointwise(
      a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var relu(Var a) {
  return unary_pointwise(
      a, [](double x) { return x > 0 ? x : 0.0; },
      [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Var exp(Var a) {
  return unary_pointwise(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var softmax(Var x, std::size_t axis) {
  Tape& t = *x.tape();
  const Tensor& X = x.value();
  if (X.rank() > 2 || axis >= X.rank()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for " +
                         shape_str(X.shape()));
  }
  // Treat the tensor as a [outer x len] grid walked with `stride`.
  const std::size_t rows = X.rows(), cols = X.cols();
  const bool along_cols = X.rank() == 1 || axis == 1;
  const std::size_t groups = along_cols ? rows : cols;
  const std::size_t len = along_cols ? cols : rows;
  auto index = [=](std::size_t g, std::size_t k) {
    return along_cols ? g * cols + k : k * cols + g;
  };
  Tensor Y(X.shape());
  for (std::size_t g = 0; g < groups; ++g) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < len; ++k) mx = std::max(mx, X[index(g, k)]);
    double z = 0.0;
    for (std::size_t k = 0; k < len; ++k) {
      const double e = std::exp(X[index(g, k)] - mx);
      Y[index(g, k)] = e;
      z += e;
    }
    for (std::size_t k = 0; k < len; ++k) Y[index(g, k)] /= z;
  }
  const Var in[] = {x};
  std::uint32_t self = static_cast<std::uint32_t>(t.size());
  return t.record(std::move(Y), in, [x, self, groups, len, index](Tape& tp) {
    auto* gx = tp.grad_buffer(x);
    if (!gx) return;
    const auto& g = out_grad(tp, self);
    const Tensor& Y = tp.value(Var(&tp, self));
    for (std::size_t gi = 0; gi < groups; ++gi) {
      double dot = 0.0;
      for (std::size_t k = 0; k < len; ++k) dot += g[index(gi, k)] * Y[index(gi, k)];
      for (std::size_t k = 0; k < len; ++k) {
        const auto id = index(gi, k);
        (*gx)[id] += Y[id] * (g[id] - dot);
      }
    }
  });
}

Var masked_softmax(Var x, std::span<const std::uint8_t> mask) {
  Tape& t = *x.tape();
  const Tensor& X = x.value();
  require_2d("masked_softmax", X);
  if (mask.size() != X.size()) {
    throw DimensionError("masked_softmax: mask has " + std::to_string(mask.size()) +
                         " entries for " + shape_str(X.shape()));
  }
  const std::size_t rows = X.rows(), cols = X.cols();
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  Tensor Y(X.shape());
  for (std::size_t i = 0; i < rows; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < cols; ++j)
      if (m[i * cols + j]) mx = std::max(mx, X[i * cols + j]);
    if (!std::isfinite(mx)) continue;
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      if (!m[i * cols + j]) continue;
      const double e = std::exp(X[i * cols + j] - mx);
      Y[i * cols + j] = e;
      z += e;
    }
    for (std::size_t j = 0; j < cols; ++j) Y[i * cols + j] /= z;
  }
  const Var in[] = {x};
  std::uint32_t self = static_cast<std::uint32_t>(t.size());
  return t.record(std::move(Y), in, [x, self, rows, cols](Tape& tp) {
    auto* gx = tp.grad_buffer(x);
    if (!gx) return;
    const auto& g = out_grad(tp, self);
    const Tensor& Y = tp.value(Var(&tp, self));
    for (std::size_t i = 0; i < rows; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < cols; ++j) dot += g[i * cols + j] * Y[i * cols + j];
      for (std::size_t j = 0; j < cols; ++j) {
        const auto id = i * cols + j;
        (*gx)[id] += Y[id] * (g[id] - dot);
      }
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Tape& t = *x.tape();
  const Tensor& X = x.value();
  const std::size_t rows = X.rows(), cols = X.cols();
  if (gain.value().size() != cols) shape_error("layer_norm(gain)", X, gain.value());
  if (bias.value().size() != cols) shape_error("layer_norm(bias)", X, bias.value());
  const Tensor& G = gain.value();
  const Tensor& B = bias.value();
  Tensor Y(X.shape());
  // Normalized values and per-row 1/sigma, needed by the backward rule.
  auto xhat = std::make_shared<std::vector<double>>(X.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    const double* row = &X[i * cols];
    double mu = 0.0;
    for (std::size_t j = 0; j < cols; ++j) mu += row[j];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t j = 0; j < cols; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(cols);
    const double denom = var + eps;
    const double is = denom > 0 ? 1.0 / std::sqrt(denom) : 0.0;
    (*inv_std)[i] = is;
    for (std::size_t j = 0; j < cols; ++j) {
      const double h = (row[j] - mu) * is;
      (*xhat)[i * cols + j] = h;
      Y[i * cols + j] = G[j] * h + B[j];
    }
  }
  const Var in[] = {x, gain, bias};
  std::uint32_t self = static_cast<std::uint32_t>(t.size());
  return t.record(std::move(Y), in, [x, gain, bias, self, rows, cols, xhat, inv_std](Tape& tp) {
    const auto& g = out_grad(tp, self);
    const Tensor& G = tp.value(gain);
    if (auto* gg = tp.grad_buffer(gain))
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j)
          (*gg)[j] += g[i * cols + j] * (*xhat)[i * cols + j];
    if (auto* gb = tp.grad_buffer(bias))
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) (*gb)[j] += g[i * cols + j];
    if (auto* gx = tp.grad_buffer(x)) {
      const double n = static_cast<double>(cols);
      for (std::size_t i = 0; i < rows; ++i) {
        double mean_d = 0.0, mean_dx = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
          const double d = g[i * cols + j] * G[j];
          mean_d += d;
          mean_dx += d * (*xhat)[i * cols + j];
        }
        mean_d /= n;
        mean_dx /= n;
        for (std::size_t j = 0; j < cols; ++j) {
          const double d = g[i * cols + j] * G[j];
          (*gx)[i * cols + j] +=
              (*inv_std)[i] * (d - mean_d - (*xhat)[i * cols + j] * mean_dx);
        }
      }
    }
  });
}

Var cross_entropy(Var logits, std::span<const int> targets, int pad_id) {
  Tape& t = *logits.tape();
  const Tensor& L = logits.value();
  require_2d("cross_entropy", L);
  const std::size_t T = L.rows(), V = L.cols();
  if (targets.size() != T) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) +
                         " targets for logits " + shape_str(L.shape()));
  }
  std::vector<int> tg(targets.begin(), targets.end());
  std::size_t count = 0;
  for (int id : tg) {
    if (id == pad_id) continue;
    if (id < 0 || static_cast<std::size_t>(id) >= V) {
      throw DimensionError("cross_entropy: target id " + std::to_string(id) +
                           " outside vocabulary of " + std::to_string(V));
    }
    ++count;
  }
  auto probs = std::make_shared<std::vector<double>>(L.size(), 0.0);
  double loss = 0.0;
  for (std::size_t i = 0; i < T; ++i) {
    if (tg[i] == pad_id) continue;
    const double* row = &L[i * V];
    const double mx = *std::max_element(row, row + V);
    double z = 0.0;
    for (std::size_t j = 0; j < V; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    loss += lse - row[tg[i]];
    for (std::size_t j = 0; j < V; ++j) (*probs)[i * V + j] = std::exp(row[j] - lse);
  }
  if (count) loss /= static_cast<double>(count);
  const Var in[] = {logits};
  std::uint32_t self = static_cast<std::uint32_t>(t.size());
  return t.record(Tensor::scalar(loss), in, [logits, self, tg, pad_id, probs, count, V](Tape& tp) {
    auto* gl = tp.grad_buffer(logits);
    if (!gl || count == 0) return;
    const double g = out_grad(tp, self)[0] / static_cast<double>(count);
    for (std::size_t i = 0; i < tg.size(); ++i) {
      if (tg[i] == pad_id) continue;
      for (std::size_t j = 0; j < V; ++j) (*gl)[i * V + j] += g * (*probs)[i * V + j];
      (*gl)[i * V + static_cast<std::size_t>(tg[i])] -= g;
    }
  });
}

Var sum(Var a) {
  Tape& t = *a.tape();
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const Var in[] = {a};
  std::uint32_t self = static_cast<std::uint32_t>(t.size());
  return t.record(Tensor::scalar(s), in, [a, self](Tape& tp) {
    auto* ga = tp.grad_buffer(a);
    if (!ga) return;
    const double g = out_grad(tp, self)[0];
    for (auto& v : *ga) v += g;
  });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var reshape(Var a, Shape shape) {
  Tape& t = *a.tape();
  Tensor y = a.value().reshaped(std::move(shape));
  const Var in[] = {a};
  std::uint32_t self = static_cast<std::uint32_t>(t.size());
  return t.record(std::move(y), in, [a, self](Tape& tp) {
    auto* ga = tp.grad_buffer(a);
    if (!ga) return;
    const auto& g = out_grad(tp, self);
    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  Tape& t = *parts[0].tape();
  const std::size_t cols = parts[0].value().cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.value().cols() != cols) shape_error("concat_rows", parts[0].value(), p.value());
    rows += p.value().rows();
  }
  std::vector<double> data;
  data.reserve(rows * cols);
  for (const auto& p : parts) {
    const auto d = p.value().data();
    data.insert(data.end(), d.begin(), d.end());
  }
  std::vector<Var> in(parts.begin(), parts.end());
  std::uint32_t self = static_cast<std::uint32_t>(t.size());
  return t.record(Tensor({rows, cols}, std::move(data)), in, [in, self](Tape& tp) {
    const auto& g = out_grad(tp, self);
    std::size_t off = 0;
    for (const auto& p : in) {
      const std::size_t n = tp.value(p).size();
      if (auto* gp = tp.grad_buffer(p))
        for (std::size_t i = 0; i < n; ++i) (*gp)[i] += g[off + i];
      off += n;
    }
  });
}

Var slice_rows(Var a, std::size_t start, std::size_t count) {
  Tape& t = *a.tape();
  const Tensor& A = a.value();
  const std::size_t cols = A.cols();
  if (count == 0 || start + count > A.rows()) {
    throw DimensionError("slice_rows: rows [" + std::to_string(start) + "," +
                         std::to_string(start + count) + ") outside " + shape_str(A.shape()));
  }
  std::vector<double> data(A.data().begin() + start * cols,
                           A.data().begin() + (start + count) * cols);
  const Var in[] = {a};
  std::uint32_t self = static_cast<std::uint32_t>(t.size());
  return t.record(Tensor({count, cols}, std::move(data)), in, [a, self, start, cols](Tape& tp) {
    auto* ga = tp.grad_buffer(a);
    if (!ga) return;
    const auto& g = out_grad(tp, self);
    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[start * cols + i] += g[i];
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  Tape& t = *parts[0].tape();
  const std::size_t rows = parts[0].value().rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.value().rows() != rows) shape_error("concat_cols", parts[0].value(), p.value());
    cols += p.value().cols();
  }
  Tensor Y({rows, cols});
  std::size_t off = 0;
  for (const auto& p : parts) {
    const Tensor& P = p.value();
    const std::size_t pc = P.cols();
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < pc; ++j) Y[i * cols + off + j] = P[i * pc + j];
    off += pc;
  }
  std::vector<Var> in(parts.begin(), parts.end());
  std::uint32_t self = static_cast<std::uint32_t>(t.size());
  return t.record(std::move(Y), in, [in, self, rows, cols](Tape& tp) {
    const auto& g = out_grad(tp, self);
    std::size_t off = 0;
    for (const auto& p : in) {
      const std::size_t pc = tp.value(p).cols();
      if (auto* gp = tp.grad_buffer(p))
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t j = 0; j < pc; ++j) (*gp)[i * pc + j] += g[i * cols + off + j];
      off += pc;
    }
  });
}

Var slice_cols(Var a, std::size_t start, std::size_t count) {
  Tape& t = *a.tape();
  const Tensor& A = a.value();
  require_2d("slice_cols", A);
  const std::size_t rows = A.rows(), cols = A.cols();
  if (count == 0 || start + count > cols) {
    throw DimensionError("slice_cols: cols [" + std::to_string(start) + "," +
                         std::to_string(start + count) + ") outside " + shape_str(A.shape()));
  }
  Tensor Y({rows, count});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < count; ++j) Y[i * count + j] = A[i * cols + start + j];
  const Var in[] = {a};
  std::uint32_t self = static_cast<std::uint32_t>(t.size());
  return t.record(std::move(Y), in, [a, self, rows, cols, start, count](Tape& tp) {
    auto* ga = tp.grad_buffer(a);
    if (!ga) return;
    const auto& g = out_grad(tp, self);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < count; ++j) (*ga)[i * cols + start + j] += g[i * count + j];
  });
}

Var gather_rows(Var table, std::span<const int> ids) {
  Tape& t = *table.tape();
  const Tensor& E = table.value();
  require_2d("gather_rows", E);
  if (ids.empty()) throw DimensionError("gather_rows: empty id list");
  const std::size_t cols = E.cols();
  std::vector<int> idv(ids.begin(), ids.end());
  Tensor Y({idv.size(), cols});
  for (std::size_t i = 0; i < idv.size(); ++i) {
    if (idv[i] < 0 || static_cast<std::size_t>(idv[i]) >= E.rows()) {
      throw DimensionError("gather_rows: id " + std::to_string(idv[i]) + " outside table " +
                           shape_str(E.shape()));
    }
    std::copy_n(&E[static_cast<std::size_t>(idv[i]) * cols], cols, &Y[i * cols]);
  }
  const Var in[] = {table};
  std::uint32_t self = static_cast<std::uint32_t>(t.size());
  return t.record(std::move(Y), in, [table, self, idv, cols](Tape& tp) {
    auto* ge = tp.grad_buffer(table);
    if (!ge) return;
    const auto& g = out_grad(tp, self);
    for (std::size_t i = 0; i < idv.size(); ++i)
      for (std::size_t j = 0; j < cols; ++j)
        (*ge)[static_cast<std::size_t>(idv[i]) * cols + j] += g[i * cols + j];
  });
}

Var elementwise(Elementwise kind, std::span<const Var> args) {
  const std::size_t arity =
      (kind == Elementwise::kTanh || kind == Elementwise::kSigmoid) ? 1 : 2;
  if (args.size() != arity) {
    throw DimensionError("elementwise: expected " + std::to_string(arity) + " operands, got " +
                         std::to_string(args.size()));
  }
  switch (kind) {
    case Elementwise::kTanh: return tanh(args[0]);
    case Elementwise::kSigmoid: return sigmoid(args[0]);
    case Elementwise::kAdd: return add(args[0], args[1]);
    case Elementwise::kMul: return mul(args[0], args[1]);
    case Elementwise::kHadamard: return hadamard(args[0], args[1]);
  }
  throw DimensionError("elementwise: unknown kind");
}

double grad_check(const ScalarFn& f, const Tensor& x, double h) {
  Tensor analytic;
  {
    Tape tape;
    Var in = tape.leaf(x);
    Var out = f(tape, in);
    tape.backward(out);
    analytic = tape.grad(in);
  }
  auto eval = [&](const Tensor& at) {
    Tape tape(false);
    return f(tape, tape.leaf(at)).value().item();
  };
  double worst = 0.0;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = eval(probe);
    probe[i] = x[i] - h;
    const double down = eval(probe);
    probe[i] = x[i];
    const double numeric = (up - down) / (2.0 * h);
    const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace mvfuse
