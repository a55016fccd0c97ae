#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "helpers.hpp"

#include <cmath>
#include <limits>

#include "stylus/auxnets.hpp"

using namespace stylus;
using namespace stylus::auxnets;
using nn::Arr;
using nn::Shape;
using nn::Var;
using testutil::u32;

namespace {

// Exhaustive CTC oracle: enumerate every frame labelling, collapse repeats,
// drop blanks, and sum the probability of labellings that match the target.
double brute_force_ctc(const Arr& log_probs, int T, int V1, const std::vector<int>& target, int blank) {
  std::vector<int> path(static_cast<std::size_t>(T), 0);
  double total = 0.0;
  while (true) {
    // collapse
    std::vector<int> collapsed;
    int prev = -1;
    for (int t = 0; t < T; ++t) {
      const int s = path[static_cast<std::size_t>(t)];
      if (s != prev && s != blank) collapsed.push_back(s);
      prev = s;
    }
    if (collapsed == target) {
      double lp = 0.0;
      for (int t = 0; t < T; ++t) lp += log_probs(static_cast<Eigen::Index>(t) * V1 + path[static_cast<std::size_t>(t)]);
      total += std::exp(lp);
    }
    // next path
    int pos = T - 1;
    while (pos >= 0 && path[static_cast<std::size_t>(pos)] == V1 - 1) {
      path[static_cast<std::size_t>(pos)] = 0;
      --pos;
    }
    if (pos < 0) break;
    ++path[static_cast<std::size_t>(pos)];
  }
  return total > 0.0 ? -std::log(total) : std::numeric_limits<double>::infinity();
}

Var random_log_probs(int T, int V1, Rng& rng) {
  auto logits = nn::make_leaf(Shape::of({T, V1}), true);
  for (Eigen::Index i = 0; i < logits->value.size(); ++i) logits->value(i) = rng.normal();
  return nn::log_softmax_rows(logits);
}

}  // namespace

TEST_CASE("ctc single-frame single-path value") {
  // vocab {a, blank}; p(a) = 0.4 at the only frame
  auto lp = nn::make_leaf(Shape::of({1, 2}), false);
  lp->value(0) = std::log(0.4);
  lp->value(1) = std::log(0.6);
  const auto loss = ctc_loss(lp, {0}, 1);
  CHECK(loss->value(0) == doctest::Approx(-std::log(0.4)).epsilon(1e-12));
}

TEST_CASE("ctc empty target forces the all-blank path") {
  Rng rng(3);
  auto lp = random_log_probs(4, 3, rng);
  double blanks = 0.0;
  for (int t = 0; t < 4; ++t) blanks += lp->value(static_cast<Eigen::Index>(t) * 3 + 2);
  const auto loss = ctc_loss(lp, {}, 2);
  CHECK(loss->value(0) == doctest::Approx(-blanks).epsilon(1e-9));
}

TEST_CASE("ctc uniform 1/3 logits, T=3, target ab matches enumeration") {
  auto lp = nn::make_leaf(Shape::of({3, 3}), false);
  lp->value.setConstant(std::log(1.0 / 3.0));
  const std::vector<int> target = {0, 1};  // "ab", blank = 2
  const auto loss = ctc_loss(lp, target, 2);
  const double oracle = brute_force_ctc(lp->value, 3, 3, target, 2);
  CHECK(loss->value(0) == doctest::Approx(oracle).epsilon(1e-10));
}

TEST_CASE("ctc forward DP equals brute-force enumeration over the spec grid") {
  Rng rng(17);
  int cases = 0;
  for (int V1 = 2; V1 <= 4; ++V1) {
    for (int T = 1; T <= 6; ++T) {
      for (int L = 0; L <= 3; ++L) {
        // a few random targets per configuration (labels over V1-1 symbols)
        for (int rep = 0; rep < 3; ++rep) {
          std::vector<int> target;
          for (int i = 0; i < L; ++i) {
            target.push_back(static_cast<int>(rng.uniform_int(0, V1 - 2)));
          }
          auto lp = random_log_probs(T, V1, rng);
          const double dp = ctc_loss_value(lp->value, T, V1, target, V1 - 1);
          const double oracle = brute_force_ctc(lp->value, T, V1, target, V1 - 1);
          if (std::isinf(oracle)) {
            CHECK(std::isinf(dp));
          } else {
            CHECK(std::abs(dp - oracle) < 1e-6);
          }
          ++cases;
          if (L == 0) break;  // the empty target does not vary with rep
        }
      }
    }
  }
  CHECK(cases >= 150);
}

TEST_CASE("ctc gradient matches central finite differences") {
  Rng rng(23);
  auto logits = nn::make_leaf(Shape::of({5, 4}), true);
  for (Eigen::Index i = 0; i < logits->value.size(); ++i) logits->value(i) = rng.normal();
  const std::vector<int> target = {1, 0, 2};

  auto rebuild = [&]() { return ctc_loss(nn::log_softmax_rows(logits), target, 3); };
  Var loss = rebuild();
  logits->grad = Arr::Zero(logits->value.size());
  nn::backward(loss);
  const Arr analytic = logits->grad;
  const Arr numeric =
      nn::finite_difference_grad([&]() { return rebuild()->value(0); }, logits, 1e-5);
  for (Eigen::Index i = 0; i < analytic.size(); ++i) {
    const double denom = std::max({1e-6, std::abs(analytic(i)), std::abs(numeric(i))});
    CHECK(std::abs(analytic(i) - numeric(i)) / denom < 1e-3);
  }
}

TEST_CASE("ctc unalignable target is +inf, not NaN") {
  Rng rng(5);
  auto lp = random_log_probs(2, 3, rng);
  const auto loss = ctc_loss(lp, {0, 0, 1}, 2);  // needs >= 4 frames (repeat gap)
  CHECK(std::isinf(loss->value(0)));
  CHECK_FALSE(std::isnan(loss->value(0)));
}

TEST_CASE("ctc greedy decode collapses repeats and drops blanks") {
  Arr lp(static_cast<Eigen::Index>(5) * 3);
  lp.setConstant(std::log(0.1));
  auto set_best = [&](int t, int v) { lp(static_cast<Eigen::Index>(t) * 3 + v) = std::log(0.8); };
  set_best(0, 0);
  set_best(1, 0);
  set_best(2, 2);  // blank
  set_best(3, 0);
  set_best(4, 1);
  const auto decoded = ctc_greedy_decode(lp, 5, 3, 2);
  CHECK(decoded == std::vector<int>{0, 0, 1});
}

TEST_CASE("cer values and properties") {
  CHECK(cer(u32("abc"), u32("abc")) == 0.0);
  CHECK(cer(u32("ab"), u32("abc")) == doctest::Approx(1.0 / 3.0));
  CHECK(cer(u32(""), u32("abc")) == 1.0);
  CHECK(cer(u32("abc"), u32("")) == 3.0);  // normalized by max(1, |ref|)
  // symmetric numerator
  CHECK(levenshtein(u32("kitten"), u32("sitting")) == 3);
  CHECK(levenshtein(u32("sitting"), u32("kitten")) == 3);
  CHECK(levenshtein(u32("flaw"), u32("lawn")) == 2);
}

TEST_CASE("writer-id model learns a linearly separable two-class toy set") {
  WriterIdConfig cfg;
  cfg.num_fonts = 2;
  cfg.stem_channels = 8;
  cfg.feature_dim = 16;
  WriterIdModel model(cfg, 7);
  nn::AdamW optim(model.params(), {3e-3, 0.9, 0.999, 1e-8, 0.0});

  // class 0: ink on the left half; class 1: ink on the right half
  auto make_image = [&](int cls, Rng& rng) {
    Image img(64, 64, 1, 255);
    for (int k = 0; k < 60; ++k) {
      const int x = static_cast<int>(rng.uniform_int(0, 27)) + (cls == 1 ? 32 : 2);
      const int y = static_cast<int>(rng.uniform_int(4, 59));
      img.at(x, y) = 0;
      img.at(x + 1, y) = 40;
    }
    return img;
  };

  Rng rng(99);
  for (int iter = 0; iter < 60; ++iter) {
    const int batch = 8;
    Arr data(static_cast<Eigen::Index>(batch) * 64 * 64);
    std::vector<int> labels(batch);
    for (int b = 0; b < batch; ++b) {
      const int cls = static_cast<int>(rng.uniform_int(0, 1));
      labels[static_cast<std::size_t>(b)] = cls;
      data.segment(static_cast<Eigen::Index>(b) * 64 * 64, 64 * 64) = image_to_arr(make_image(cls, rng), 1);
    }
    Var x = nn::constant(Shape::of({batch, 1, 64, 64}), data);
    Var loss = nn::cross_entropy_logits(model.logits(x), labels);
    model.params().zero_grad();
    nn::backward(loss);
    optim.step();
  }

  Rng eval_rng(123);
  int correct = 0;
  const int n_eval = 40;
  for (int i = 0; i < n_eval; ++i) {
    const int cls = i % 2;
    if (model.predict(make_image(cls, eval_rng)) == cls) ++correct;
  }
  CHECK(static_cast<double>(correct) / n_eval >= 0.95);
}

TEST_CASE("frozen models give identical outputs on repeated calls") {
  HtrConfig cfg;
  cfg.vocab = 5;
  cfg.d_model = 16;
  cfg.heads = 2;
  cfg.layers = 1;
  cfg.ffn = 32;
  HtrModel model(cfg, 3);
  model.freeze();
  Image img(64, 64, 1, 255);
  img.at(10, 30) = 0;
  const Var a = model.log_probs(image_to_var(img, 1));
  const Var b = model.log_probs(image_to_var(img, 1));
  CHECK((a->value == b->value).all());

  // freezing really blocks parameter updates through training graphs
  const auto hash_before = model.params().value_hash();
  Var loss = nn::mean(nn::square(model.log_probs(image_to_var(img, 1))));
  nn::backward(loss);
  CHECK(model.params().value_hash() == hash_before);
}

TEST_CASE("HTR overfits a single sample to zero CER") {
  // memorization sanity: a tiny model on one fixed image
  HtrConfig cfg;
  cfg.vocab = 4;  // 'a','b','c',' '
  cfg.d_model = 32;
  cfg.heads = 2;
  cfg.layers = 1;
  cfg.ffn = 64;
  HtrModel model(cfg, 11);
  nn::AdamW optim(model.params(), {2e-3, 0.9, 0.999, 1e-8, 0.0});

  const text::CharSet charset(u32("abc "));
  Image img(96, 64, 1, 255);
  // three distinct blobs as stand-ins for three characters
  for (int y = 20; y < 44; ++y) {
    for (int x = 8; x < 22; ++x) img.at(x, y) = 0;        // 'a' region
    for (int x = 40; x < 52; ++x) img.at(x, y) = (y % 2) ? 0 : 128;  // 'b' region
    for (int x = 70; x < 88; ++x) img.at(x, y) = (x % 3) ? 0 : 200;  // 'c' region
  }
  const std::vector<int> target = {0, 1, 2};

  double last = 0;
  for (int iter = 0; iter < 250; ++iter) {
    Var lp = model.log_probs(image_to_var(img, 1));
    Var loss = ctc_loss(lp, target, cfg.vocab);
    last = loss->value(0);
    model.params().zero_grad();
    nn::backward(loss);
    optim.step();
    if (last < 0.01) break;
  }
  CHECK(last < 0.5);
  const auto hyp = model.transcribe(img, charset);
  CHECK(cer(hyp, u32("abc")) == 0.0);
}
