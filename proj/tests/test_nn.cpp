#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "helpers.hpp"

#include <cmath>
#include <functional>

#include "stylus/checkpoint.hpp"
#include "stylus/layers.hpp"
#include "stylus/tensor.hpp"

using namespace stylus;
using namespace stylus::nn;

namespace {

Arr random_arr(Eigen::Index n, Rng& rng, double scale = 1.0) {
  Arr a(n);
  for (Eigen::Index i = 0; i < n; ++i) a(i) = rng.normal() * scale;
  return a;
}

// Central-difference check of d(loss)/d(param) for every coordinate of
// `param`. `rebuild` must construct the loss graph from current values.
double max_rel_error(const std::function<Var()>& rebuild, const Var& param, double step = 1e-5) {
  Var loss = rebuild();
  param->grad = Arr::Zero(param->value.size());
  backward(loss);
  const Arr analytic = param->grad;
  const Arr numeric = finite_difference_grad([&]() { return rebuild()->value(0); }, param, step);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < analytic.size(); ++i) {
    const double denom = std::max({1e-6, std::abs(analytic(i)), std::abs(numeric(i))});
    worst = std::max(worst, std::abs(analytic(i) - numeric(i)) / denom);
  }
  return worst;
}

}  // namespace

TEST_CASE("elementwise and matmul gradients match finite differences") {
  Rng rng(1);
  auto a = make_leaf(Shape::of({3, 4}), true);
  auto b = make_leaf(Shape::of({4, 5}), true);
  a->value = random_arr(12, rng);
  b->value = random_arr(20, rng);

  auto rebuild = [&]() { return mean(square(matmul(gelu(a), b))); };
  CHECK(max_rel_error(rebuild, a) < 1e-3);
  CHECK(max_rel_error(rebuild, b) < 1e-3);
}

TEST_CASE("softmax (plain and causal) gradients") {
  Rng rng(2);
  auto x = make_leaf(Shape::of({5, 5}), true);
  x->value = random_arr(25, rng);
  auto plain = [&]() { return mean(mul(softmax_rows(x, false), x)); };
  CHECK(max_rel_error(plain, x) < 1e-3);
  auto causal = [&]() { return mean(mul(softmax_rows(x, true), x)); };
  CHECK(max_rel_error(causal, x) < 1e-3);
}

TEST_CASE("log-softmax and cross-entropy gradients") {
  Rng rng(3);
  auto x = make_leaf(Shape::of({4, 6}), true);
  x->value = random_arr(24, rng);
  auto lsm = [&]() { return mean(log_softmax_rows(x)); };
  CHECK(max_rel_error(lsm, x) < 1e-3);
  const std::vector<int> labels = {1, 0, 5, 2};
  auto ce = [&]() { return cross_entropy_logits(x, labels); };
  CHECK(max_rel_error(ce, x) < 1e-3);
}

TEST_CASE("slice / concat / transpose / gather gradients") {
  Rng rng(4);
  auto x = make_leaf(Shape::of({6, 6}), true);
  x->value = random_arr(36, rng);
  auto f = [&]() {
    Var left = slice_cols(x, 0, 3);
    Var right = slice_cols(x, 3, 3);
    Var rows = slice_rows(x, 1, 4);
    Var cat = concat_cols({left, right});
    Var cat2 = concat_rows({slice_rows(cat, 0, 2), slice_rows(cat, 2, 4)});
    Var g = gather_rows(x, {0, 5, 3, 0});
    return mean(add(mul(cat2, cat2), add(mean(transpose(rows)), mean(g))));
  };
  CHECK(max_rel_error(f, x) < 1e-3);
}

TEST_CASE("rms_norm gradients (input and gain)") {
  Rng rng(5);
  auto x = make_leaf(Shape::of({3, 8}), true);
  auto gamma = make_leaf(Shape::of({8}), true);
  x->value = random_arr(24, rng);
  gamma->value = random_arr(8, rng, 0.3) + 1.0;
  auto f = [&]() { return mean(square(rms_norm(x, gamma))); };
  CHECK(max_rel_error(f, x) < 1e-3);
  CHECK(max_rel_error(f, gamma) < 1e-3);
}

TEST_CASE("conv2d gradients: input, weight, bias, stride and padding") {
  Rng rng(6);
  auto x = make_leaf(Shape::of({2, 3, 6, 8}), true);
  auto w = make_leaf(Shape::of({4, 3, 3, 3}), true);
  auto b = make_leaf(Shape::of({4}), true);
  x->value = random_arr(x->shape.numel(), rng);
  w->value = random_arr(w->shape.numel(), rng, 0.4);
  b->value = random_arr(4, rng, 0.2);
  for (int stride : {1, 2}) {
    auto f = [&]() { return mean(square(conv2d(x, w, b, stride, 1))); };
    CHECK(max_rel_error(f, x) < 1e-3);
    CHECK(max_rel_error(f, w) < 1e-3);
    CHECK(max_rel_error(f, b) < 1e-3);
  }
}

TEST_CASE("upsample / group-norm / global-pool gradients") {
  Rng rng(7);
  auto x = make_leaf(Shape::of({2, 4, 4, 6}), true);
  auto gamma = make_leaf(Shape::of({4}), true);
  auto beta = make_leaf(Shape::of({4}), true);
  x->value = random_arr(x->shape.numel(), rng);
  gamma->value = random_arr(4, rng, 0.2) + 1.0;
  beta->value = random_arr(4, rng, 0.2);
  auto f = [&]() { return mean(square(global_avg_pool(group_norm(upsample_nearest2x(x), gamma, beta, 2)))); };
  CHECK(max_rel_error(f, x) < 1e-3);
  CHECK(max_rel_error(f, gamma) < 1e-3);
  CHECK(max_rel_error(f, beta) < 1e-3);
}

TEST_CASE("losses: l1, mse, masked mse, KL") {
  Rng rng(8);
  auto p = make_leaf(Shape::of({4, 5}), true);
  auto t = make_leaf(Shape::of({4, 5}), false);
  p->value = random_arr(20, rng);
  t->value = random_arr(20, rng);
  auto f1 = [&]() { return mse_mean(p, t); };
  CHECK(max_rel_error(f1, p) < 1e-3);
  const std::vector<bool> mask = {true, false, true, true};
  auto f2 = [&]() { return mse_masked_rows(p, t, mask); };
  CHECK(max_rel_error(f2, p) < 1e-3);
  // l1 is non-smooth at 0; values here are generic so FD is safe
  auto f3 = [&]() { return l1_mean(p, t); };
  CHECK(max_rel_error(f3, p) < 1e-3);

  auto mu = make_leaf(Shape::of({2, 6}), true);
  auto logvar = make_leaf(Shape::of({2, 6}), true);
  mu->value = random_arr(12, rng, 0.5);
  logvar->value = random_arr(12, rng, 0.5);
  auto f4 = [&]() { return kl_gaussian_mean(mu, logvar); };
  CHECK(max_rel_error(f4, mu) < 1e-3);
  CHECK(max_rel_error(f4, logvar) < 1e-3);
}

TEST_CASE("masked MSE ignores masked rows exactly") {
  auto p = make_leaf(Shape::of({3, 2}), false);
  auto t = make_leaf(Shape::of({3, 2}), false);
  p->value << 1, 2, 3, 4, 5, 6;
  t->value << 1, 2, 0, 0, 5, 6;
  const std::vector<bool> mask = {true, false, true};
  const double before = mse_masked_rows(p, t, mask)->value(0);
  CHECK(before == doctest::Approx(0.0));
  p->value(2) = 1000;  // masked row perturbed arbitrarily
  p->value(3) = -1000;
  CHECK(mse_masked_rows(p, t, mask)->value(0) == doctest::Approx(0.0));
}

TEST_CASE("KL closed-form values") {
  auto mu = make_leaf(Shape::of({1, 4}), false);
  auto logvar = make_leaf(Shape::of({1, 4}), false);
  mu->value.setZero();
  logvar->value.setZero();
  CHECK(kl_gaussian_mean(mu, logvar)->value(0) == doctest::Approx(0.0));
  mu->value.setConstant(0.8);
  CHECK(kl_gaussian_mean(mu, logvar)->value(0) == doctest::Approx(0.5 * 0.8 * 0.8).epsilon(1e-12));
  mu->value.setZero();
  logvar->value.setConstant(0.3);
  // 0.5 (e^s - 1 - s)
  CHECK(kl_gaussian_mean(mu, logvar)->value(0) == doctest::Approx(0.5 * (std::exp(0.3) - 1.0 - 0.3)).epsilon(1e-12));
  logvar->value.setConstant(-40.0);
  CHECK(kl_gaussian_mean(mu, logvar)->value(0) >= 0.0);
}

TEST_CASE("transformer layer end-to-end gradient (self + cross attention)") {
  Rng rng(9);
  ParamStore store;
  auto layer = TransformerLayer::create(store, "l", 8, 2, 16, true, rng);
  auto x = make_leaf(Shape::of({4, 8}), true);
  auto memory = make_leaf(Shape::of({3, 8}), true);
  x->value = random_arr(32, rng, 0.7);
  memory->value = random_arr(24, rng, 0.7);
  auto f = [&]() { return mean(square(layer(x, &memory, true))); };
  CHECK(max_rel_error(f, x) < 1e-3);
  CHECK(max_rel_error(f, memory) < 1e-3);
  CHECK(max_rel_error(f, layer.self_attn.q.weight) < 1e-3);
  CHECK(max_rel_error(f, layer.cross_attn.k.weight) < 1e-3);
  CHECK(max_rel_error(f, layer.ff_in.bias) < 1e-3);
}

TEST_CASE("AdamW decreases a quadratic and applies decoupled decay") {
  ParamStore store;
  Rng rng(10);
  auto p = store.add("p", parameter(Shape::of({4}), rng, 1.0));
  AdamW opt(store, {0.05, 0.9, 0.999, 1e-8, 0.0});
  auto loss_value = [&]() {
    store.zero_grad();
    Var l = mean(square(p));
    backward(l);
    return l->value(0);
  };
  const double before = loss_value();
  for (int i = 0; i < 200; ++i) {
    loss_value();
    opt.step();
  }
  store.zero_grad();
  const double after = mean(square(p))->value(0);
  CHECK(after < 0.01 * before);

  // weight decay shrinks parameters even with zero gradient
  auto q = store.add("q", parameter_consts(Shape::of({2}), 1.0));
  AdamW opt2(store, {0.1, 0.9, 0.999, 1e-8, 0.5});
  store.zero_grad();
  opt2.step();
  CHECK(q->value(0) < 1.0);
}

TEST_CASE("detach blocks gradient flow") {
  auto x = make_leaf(Shape::of({2, 2}), true);
  x->value << 1, 2, 3, 4;
  Var d = detach(x);
  CHECK_FALSE(d->requires_grad);
  Var l = mean(mul(d, d));
  backward(l);  // no-op: nothing requires grad upstream
  CHECK(x->grad.size() == 0);
}

TEST_CASE("backward accumulates across shared subexpressions") {
  auto x = make_leaf(Shape::of({2}), true);
  x->value << 3.0, -1.0;
  Var y = add(x, x);  // dy/dx = 2
  Var l = sum(mul(y, y));
  backward(l);
  // d/dx sum((2x)^2) = 8x
  CHECK(x->grad(0) == doctest::Approx(24.0));
  CHECK(x->grad(1) == doctest::Approx(-8.0));
}

TEST_CASE("checkpoints round-trip parameters bit-exactly") {
  testutil::TempDir tmp("ckpt");
  Rng rng(11);
  ParamStore a;
  a.add("w1", parameter(Shape::of({3, 4}), rng, 1.0));
  a.add("b1", parameter(Shape::of({4}), rng, 1.0));
  json cfg;
  cfg["dims"] = {3, 4};
  json extras;
  extras["note"] = "test";
  extras["centroid"] = {1.0, 2.0, 3.0};
  Checkpoint::save(tmp.sub("m.ckpt"), "unit", cfg, extras, a);

  ParamStore b;
  b.add("w1", parameter_zeros(Shape::of({3, 4})));
  b.add("b1", parameter_zeros(Shape::of({4})));
  const auto loaded = Checkpoint::load_into(tmp.sub("m.ckpt"), b);
  CHECK(loaded.kind == "unit");
  CHECK(loaded.config.at("dims")[1] == 4);
  CHECK(loaded.extras.at("centroid")[2] == 3.0);
  CHECK(a.value_hash() == b.value_hash());

  // wrong shape is rejected
  ParamStore c;
  c.add("w1", parameter_zeros(Shape::of({3, 4})));
  c.add("b1", parameter_zeros(Shape::of({5})));
  CHECK_THROWS_AS(static_cast<void>(Checkpoint::load_into(tmp.sub("m.ckpt"), c)), Error);
}

TEST_CASE("rng streams are deterministic and child streams independent") {
  Rng a(99), b(99);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng c(99);
  Rng c1 = c.child("alpha");
  Rng c2 = c.child("beta");
  CHECK(c1.next_u64() != c2.next_u64());
  // uniform_int covers its range inclusively
  Rng d(5);
  bool saw_lo = false, saw_hi = false;
  for (int i = 0; i < 1000; ++i) {
    const auto v = d.uniform_int(2, 4);
    CHECK(v >= 2);
    CHECK(v <= 4);
    saw_lo |= v == 2;
    saw_hi |= v == 4;
  }
  CHECK(saw_lo);
  CHECK(saw_hi);
}
