#include <algorithm>
#include <cmath>
#include <filesystem>

#include <doctest.h>

#include "mvfuse/error.hpp"
#include "mvfuse/fusion.hpp"
#include "mvfuse/vision.hpp"
#include "oracles.hpp"

using namespace mvfuse;
using oracle::direct_fuse;

namespace {

GatedPoolParams k1_params() {
  return GatedPoolParams(Tensor::vector({1}), Tensor::matrix({{1, 0}}), Tensor::matrix({{0, 0}}));
}

}  // namespace

TEST_CASE("patchify shapes and order") {
  Image img(64, 64);
  const Tensor p = patchify(img, 32);
  CHECK(p.shape() == Shape{4, 3072});
  CHECK(patchify(Image(224, 224), 32).rows() == 49);
  CHECK_THROWS_AS(patchify(Image(64, 60), 16), ConfigError);

  Image c(32, 32, 0.25);
  const Tensor pc = patchify(c, 16);
  for (std::size_t r = 1; r < pc.rows(); ++r)
    for (std::size_t j = 0; j < pc.cols(); ++j) CHECK(pc.at(r, j) == pc.at(0, j));

  // Patch 1 is the top-right patch; element (c, y, x) sits at c*P*P + y*P + x.
  Image marked(4, 4);
  marked.at(2, 1, 3) = 0.5;
  const Tensor pm = patchify(marked, 2);
  CHECK(pm.at(1, 2 * 4 + 1 * 2 + 1) == 0.5);
  double others = 0.0;
  for (double v : pm.data()) others += v;
  CHECK(others == 0.5);
}

TEST_CASE("embed_view on a zero image returns the positional table") {
  SeededRng rng(1);
  PatchEmbedder pe(32, 16, 8, rng);
  for (auto& b : pe.bias.value.storage()) b = 0.0;
  CHECK(embed_view(Image(32, 32), pe) == pe.position.value);
  CHECK_THROWS_AS(embed_view(Image(16, 16), pe), ConfigError);
}

TEST_CASE("embed_view single patch hand-set projection") {
  SeededRng rng(1);
  PatchEmbedder pe(1, 1, 2, rng);
  pe.projection.value = Tensor::matrix({{1, 2}, {3, 4}, {5, 6}});
  pe.bias.value = Tensor::vector({0, 0});
  pe.position.value = Tensor::matrix({{0.5, -0.5}});
  Image img(1, 1);
  img.at(0, 0, 0) = 0.1;
  img.at(1, 0, 0) = 0.2;
  img.at(2, 0, 0) = 0.3;
  const Tensor e = embed_view(img, pe);
  CHECK(e[0] == doctest::Approx(0.1 * 1 + 0.2 * 3 + 0.3 * 5 + 0.5));
  CHECK(e[1] == doctest::Approx(0.1 * 2 + 0.2 * 4 + 0.3 * 6 - 0.5));
}

TEST_CASE("embed_view is local to patches") {
  SeededRng rng(2);
  PatchEmbedder pe(32, 16, 6, rng);
  Image a(32, 32, 0.3), b = a;
  b.at(1, 20, 5) = 0.9;  // patch 2 (bottom-left)
  const Tensor ea = embed_view(a, pe), eb = embed_view(b, pe);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 6; ++c) {
      if (r == 2)
        continue;
      CHECK(ea.at(r, c) == eb.at(r, c));
    }
  CHECK(ea.at(2, 0) != eb.at(2, 0));
}

TEST_CASE("ppm round trip quantizes to 8 bits") {
  Image img(3, 5);
  SeededRng rng(4);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 3; ++y)
      for (std::size_t x = 0; x < 5; ++x) img.at(c, y, x) = static_cast<double>(rng.below(256)) / 255.0;
  const auto path = std::filesystem::temp_directory_path() / "mvfuse_roundtrip.ppm";
  write_ppm(path, img);
  CHECK(read_ppm(path) == img);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(read_ppm(path), DataError);
}

TEST_CASE("attention logits worked values") {
  const auto p = k1_params();
  const Tensor v = Tensor::matrix({{1, 0}});
  const auto l = attention_logits(std::vector<Tensor>{v}, p);
  CHECK(l[0] == doctest::Approx(std::tanh(1.0) * 0.5).epsilon(1e-15));
  CHECK(l[0] == doctest::Approx(0.3808).epsilon(1e-4));

  SeededRng rng(5);
  GatedPoolParams zero(Tensor::vector({1, 2, 3}), Tensor({3, 4}, 0.0), Tensor({3, 4}, 0.0));
  const std::vector<Tensor> views = {rng.normal({2, 2}, 1.0), rng.normal({2, 2}, 1.0)};
  for (double x : attention_logits(views, zero)) CHECK(x == 0.0);
  CHECK_THROWS_AS(attention_logits(std::vector<Tensor>{Tensor({3, 2})}, zero), DimensionError);
}

TEST_CASE("fusion worked example against the direct oracle") {
  const auto p = k1_params();
  const std::vector<Tensor> views = {Tensor::matrix({{1, 0}}), Tensor::matrix({{0, 0}})};
  const auto out = fuse(views, p);
  const auto d = direct_fuse(views, p.w.value, p.z.value, p.g.value);
  CHECK(std::abs(out.alpha[0] - d.alpha[0]) < 1e-4);
  CHECK(out.alpha[0] == doctest::Approx(0.5941).epsilon(1e-4));
  CHECK(out.alpha[1] == doctest::Approx(0.4059).epsilon(1e-4));
  CHECK(out.fused[0] == doctest::Approx(0.5941).epsilon(1e-4));
  CHECK(out.fused[1] == 0.0);
}

TEST_CASE("fusion invariants over random cases") {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    SeededRng rng(seed);
    const std::size_t n = 1 + rng.below(6), s = 1 + rng.below(3), h = 1 + rng.below(4), k = 1 + rng.below(5);
    GatedPoolParams p(k, s * h, rng, 0.5);
    std::vector<Tensor> views;
    for (std::size_t i = 0; i < n; ++i) views.push_back(rng.normal({s, h}, 1.0));

    const auto out = fuse(views, p);
    const auto d = direct_fuse(views, p.w.value, p.z.value, p.g.value);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(out.alpha[i] >= 0.0);
      CHECK(std::abs(out.alpha[i] - d.alpha[i]) < 1e-12);
      total += out.alpha[i];
    }
    CHECK(std::abs(total - 1.0) < 1e-9);
    CHECK(out.fused.shape() == Shape{s, h});
    for (std::size_t c = 0; c < s * h; ++c) CHECK(std::abs(out.fused[c] - d.fused[c]) < 1e-12);

    // Permuting views permutes alpha and leaves the pooled output alone.
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    rng.shuffle(perm);
    std::vector<Tensor> shuffled;
    for (auto i : perm) shuffled.push_back(views[i]);
    const auto po = fuse(shuffled, p);
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(po.alpha[i] - out.alpha[perm[i]]) < 1e-15);
    CHECK(max_abs_diff(po.fused, out.fused) < 1e-12);

    // A single view gets all the weight; identical views split it evenly.
    const auto one = fuse(std::vector<Tensor>{views[0]}, p);
    CHECK(one.alpha == std::vector<double>{1.0});
    CHECK(one.fused == views[0]);
    const auto same = fuse(std::vector<Tensor>(n, views[0]), p);
    for (double a : same.alpha) CHECK(a == doctest::Approx(1.0 / static_cast<double>(n)).epsilon(1e-15));
    CHECK(max_abs_diff(same.fused, views[0]) < 1e-15);
  }
  CHECK_THROWS_AS(fuse(std::vector<Tensor>{}, k1_params()), DimensionError);
}

TEST_CASE("tape fusion matches the tensor version") {
  SeededRng rng(9);
  GatedPoolParams p(4, 6, rng, 0.5);
  std::vector<Tensor> views;
  for (int i = 0; i < 3; ++i) views.push_back(rng.normal({2, 3}, 1.0));
  Tape t(false);
  std::vector<Var> vs;
  for (const auto& v : views) vs.push_back(t.constant(v));
  const auto fv = fuse(t, vs, p);
  const auto ft = fuse(views, p);
  CHECK(fv.fused.value() == ft.fused);
  for (std::size_t i = 0; i < 3; ++i) CHECK(fv.alpha.value()[i] == ft.alpha[i]);
}

TEST_CASE("gated logit gradient") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SeededRng rng(seed + 100);
    GatedPoolParams p(3, 4, rng, 0.7);
    const Tensor v = rng.normal({2, 2}, 1.0);
    // Gradient w.r.t. the view.
    CHECK(grad_check([&](Tape& t, Var x) { return sum(attention_logits(t, std::vector<Var>{x}, p)); }, v) < 1e-5);
    // The same logit spelled out in primitive ops, as a function of Z.
    const Tensor z0 = p.z.value;
    CHECK(grad_check(
              [&](Tape& t, Var z) {
                auto vv = reshape(t.constant(v), {4, 1});
                auto a = tanh(matmul(z, vv));
                auto b = sigmoid(matmul(t.constant(p.g.value), vv));
                return sum(hadamard(reshape(t.constant(p.w.value), {3, 1}), hadamard(a, b)));
              },
              z0) < 1e-5);
  }
}

TEST_CASE("fusion parameter gradients through the pooled output") {
  SeededRng rng(11);
  GatedPoolParams p(3, 4, rng, 0.7);
  std::vector<Tensor> views;
  for (int i = 0; i < 3; ++i) views.push_back(rng.normal({2, 2}, 1.0));
  const Tensor r = rng.normal({2, 2}, 1.0);
  auto loss_at = [&](Tape& t) {
    std::vector<Var> vs;
    for (const auto& v : views) vs.push_back(t.constant(v));
    return sum(hadamard(fuse(t, vs, p).fused, t.constant(r)));
  };
  for (Parameter* prm : {&p.w, &p.z, &p.g}) {
    prm->trainable = true;
    prm->zero_grad();
    {
      Tape t;
      t.backward(loss_at(t));
    }
    const Tensor analytic = prm->grad;
    double worst = 0.0;
    for (std::size_t i = 0; i < prm->value.size(); ++i) {
      const double keep = prm->value[i];
      prm->value[i] = keep + 1e-5;
      Tape up(false);
      const double fu = loss_at(up).value().item();
      prm->value[i] = keep - 1e-5;
      Tape dn(false);
      const double fd = loss_at(dn).value().item();
      prm->value[i] = keep;
      const double num = (fu - fd) / 2e-5;
      worst = std::max(worst, std::abs(num - analytic[i]) / std::max(1.0, std::abs(analytic[i])));
    }
    INFO(prm->name);
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("projection and concatenation") {
  ProjectionLayer id(Tensor::matrix({{1, 0}, {0, 1}}), Tensor::vector({0, 0}));
  const Tensor fused = Tensor::matrix({{1, 2}, {3, 4}});
  const Tensor text = Tensor::matrix({{9, 9}, {8, 8}, {7, 7}});
  const Tensor out = project_and_concat(fused, id, text);
  CHECK(out.shape() == Shape{5, 2});
  CHECK(out.at(0, 0) == 9.0);
  CHECK(out.at(3, 0) == 1.0);
  CHECK(out.at(4, 1) == 4.0);

  ProjectionLayer hand(Tensor::matrix({{1, 2}, {3, 4}}), Tensor::vector({0.5, 0}));
  const Tensor one = project_and_concat(Tensor::matrix({{1, 1}}), hand, Tensor::matrix({{0, 0}}));
  CHECK(one.at(1, 0) == 4.5);
  CHECK(one.at(1, 1) == 6.0);
  CHECK_THROWS_AS(project_and_concat(Tensor::matrix({{1, 1, 1}}), hand, text), DimensionError);
  CHECK_THROWS_AS(project_and_concat(fused, hand, Tensor::matrix({{1, 1, 1}})), DimensionError);
}
