#include "stylus/auxnets.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "stylus/common.hpp"

namespace stylus::auxnets {

using nn::Arr;
using nn::Shape;
using nn::Var;

// ---------------------------------------------------------------------------
// CTC
// ---------------------------------------------------------------------------

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(std::min(a, b) - m));
}

struct CtcTables {
  int T = 0, U = 0;
  std::vector<int> labels;  // extended targets: blank t1 blank t2 ... blank
  std::vector<double> alpha, beta;
  double log_p = kNegInf;
};

// Forward-backward over the extended label sequence. log_probs is row-major
// [T, V+1].
CtcTables ctc_forward_backward(const double* lp, int T, int V1, const std::vector<int>& target, int blank,
                               bool need_beta) {
  CtcTables t;
  t.T = T;
  const int L = static_cast<int>(target.size());
  t.U = 2 * L + 1;
  t.labels.resize(static_cast<std::size_t>(t.U));
  for (int u = 0; u < t.U; ++u) t.labels[static_cast<std::size_t>(u)] = (u % 2) ? target[static_cast<std::size_t>(u / 2)] : blank;
  for (int l : target) {
    if (l < 0 || l >= V1 || l == blank) fail(ErrorClass::training, "ctc_loss: invalid target label");
  }

  auto idx = [&](int ti, int u) { return static_cast<std::size_t>(ti) * t.U + static_cast<std::size_t>(u); };
  t.alpha.assign(static_cast<std::size_t>(T) * t.U, kNegInf);

  t.alpha[idx(0, 0)] = lp[blank];
  if (t.U > 1) t.alpha[idx(0, 1)] = lp[t.labels[1]];
  for (int ti = 1; ti < T; ++ti) {
    const double* row = lp + static_cast<std::size_t>(ti) * V1;
    for (int u = 0; u < t.U; ++u) {
      double acc = t.alpha[idx(ti - 1, u)];
      if (u > 0) acc = log_add(acc, t.alpha[idx(ti - 1, u - 1)]);
      if (u > 1 && t.labels[static_cast<std::size_t>(u)] != blank &&
          t.labels[static_cast<std::size_t>(u)] != t.labels[static_cast<std::size_t>(u - 2)]) {
        acc = log_add(acc, t.alpha[idx(ti - 1, u - 2)]);
      }
      if (acc != kNegInf) t.alpha[idx(ti, u)] = acc + row[t.labels[static_cast<std::size_t>(u)]];
    }
  }
  t.log_p = t.alpha[idx(T - 1, t.U - 1)];
  if (t.U > 1) t.log_p = log_add(t.log_p, t.alpha[idx(T - 1, t.U - 2)]);

  if (need_beta && t.log_p != kNegInf) {
    // beta excludes the emission at its own frame.
    t.beta.assign(static_cast<std::size_t>(T) * t.U, kNegInf);
    t.beta[idx(T - 1, t.U - 1)] = 0.0;
    if (t.U > 1) t.beta[idx(T - 1, t.U - 2)] = 0.0;
    for (int ti = T - 2; ti >= 0; --ti) {
      const double* next_row = lp + static_cast<std::size_t>(ti + 1) * V1;
      for (int u = 0; u < t.U; ++u) {
        double acc = t.beta[idx(ti + 1, u)] == kNegInf
                         ? kNegInf
                         : t.beta[idx(ti + 1, u)] + next_row[t.labels[static_cast<std::size_t>(u)]];
        if (u + 1 < t.U && t.beta[idx(ti + 1, u + 1)] != kNegInf) {
          acc = log_add(acc, t.beta[idx(ti + 1, u + 1)] + next_row[t.labels[static_cast<std::size_t>(u + 1)]]);
        }
        if (u + 2 < t.U && t.labels[static_cast<std::size_t>(u + 2)] != blank &&
            t.labels[static_cast<std::size_t>(u + 2)] != t.labels[static_cast<std::size_t>(u)] &&
            t.beta[idx(ti + 1, u + 2)] != kNegInf) {
          acc = log_add(acc, t.beta[idx(ti + 1, u + 2)] + next_row[t.labels[static_cast<std::size_t>(u + 2)]]);
        }
        t.beta[idx(ti, u)] = acc;
      }
    }
  }
  return t;
}

}  // namespace

Var ctc_loss(const Var& log_probs, const std::vector<int>& target, int blank) {
  if (log_probs->shape.ndim != 2) fail(ErrorClass::training, "ctc_loss: log_probs must be [T, V+1]");
  const int T = log_probs->shape.rows();
  const int V1 = log_probs->shape.cols();
  if (blank < 0 || blank >= V1) fail(ErrorClass::training, "ctc_loss: blank index out of range");

  auto out = nn::make_custom(Shape::of({1}), {log_probs});
  CtcTables tables = ctc_forward_backward(log_probs->value.data(), T, V1, target, blank, log_probs->requires_grad);
  out->value = Arr::Constant(1, tables.log_p == kNegInf ? std::numeric_limits<double>::infinity() : -tables.log_p);

  out->backprop = [log_probs, tables = std::move(tables), T, V1](nn::Node& n) {
    if (!log_probs->requires_grad || tables.log_p == kNegInf) return;
    log_probs->ensure_grad();
    const double g = n.grad(0);
    auto idx = [&](int ti, int u) { return static_cast<std::size_t>(ti) * tables.U + static_cast<std::size_t>(u); };
    for (int ti = 0; ti < T; ++ti) {
      for (int u = 0; u < tables.U; ++u) {
        const double a = tables.alpha[idx(ti, u)];
        const double b = tables.beta[idx(ti, u)];
        if (a == kNegInf || b == kNegInf) continue;
        const double post = std::exp(a + b - tables.log_p);
        log_probs->grad(static_cast<Eigen::Index>(ti) * V1 + tables.labels[static_cast<std::size_t>(u)]) -= g * post;
      }
    }
  };
  return out;
}

double ctc_loss_value(const Arr& log_probs, int frames, int vocab_plus_blank, const std::vector<int>& target,
                      int blank) {
  const CtcTables t = ctc_forward_backward(log_probs.data(), frames, vocab_plus_blank, target, blank, false);
  return t.log_p == kNegInf ? std::numeric_limits<double>::infinity() : -t.log_p;
}

std::vector<int> ctc_greedy_decode(const Arr& log_probs, int frames, int vocab_plus_blank, int blank) {
  std::vector<int> out;
  int prev = -1;
  for (int t = 0; t < frames; ++t) {
    int best = 0;
    double best_v = log_probs(static_cast<Eigen::Index>(t) * vocab_plus_blank);
    for (int v = 1; v < vocab_plus_blank; ++v) {
      const double x = log_probs(static_cast<Eigen::Index>(t) * vocab_plus_blank + v);
      if (x > best_v) {
        best_v = x;
        best = v;
      }
    }
    if (best != blank && best != prev) out.push_back(best);
    prev = best;
  }
  return out;
}

// ---------------------------------------------------------------------------
// CER
// ---------------------------------------------------------------------------

std::size_t levenshtein(const std::u32string& a, const std::u32string& b) {
  const std::size_t n = a.size(), m = b.size();
  std::vector<std::size_t> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = j;
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

double cer(const std::u32string& hypothesis, const std::u32string& reference) {
  return static_cast<double>(levenshtein(hypothesis, reference)) /
         static_cast<double>(std::max<std::size_t>(1, reference.size()));
}

// ---------------------------------------------------------------------------
// Shared image helpers
// ---------------------------------------------------------------------------

Arr image_to_arr(const Image& img, int channels) {
  const Image src = channels == 1 ? img.to_grey() : img.to_rgb();
  Arr out(static_cast<Eigen::Index>(channels) * src.height() * src.width());
  // HWC bytes -> CHW doubles in [0,1]
  for (int c = 0; c < channels; ++c) {
    for (int y = 0; y < src.height(); ++y) {
      for (int x = 0; x < src.width(); ++x) {
        out((static_cast<Eigen::Index>(c) * src.height() + y) * src.width() + x) = src.at(x, y, c) / 255.0;
      }
    }
  }
  return out;
}

Var image_to_var(const Image& img, int channels) {
  return nn::constant(Shape::of({1, channels, img.height(), img.width()}), image_to_arr(img, channels));
}

// ---------------------------------------------------------------------------
// WriterIdModel
// ---------------------------------------------------------------------------

json WriterIdConfig::to_json() const {
  json j;
  j["num_fonts"] = num_fonts;
  j["stem_channels"] = stem_channels;
  j["feature_dim"] = feature_dim;
  return j;
}

WriterIdConfig WriterIdConfig::from_json(const json& j) {
  WriterIdConfig c;
  c.num_fonts = j.at("num_fonts").get<int>();
  c.stem_channels = j.at("stem_channels").get<int>();
  c.feature_dim = j.at("feature_dim").get<int>();
  return c;
}

WriterIdModel::WriterIdModel(const WriterIdConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
  if (cfg.num_fonts < 2) fail(ErrorClass::training, "writer-id model needs at least 2 classes");
  Rng rng(init_seed);
  const int c0 = cfg.stem_channels;
  const int cmax = cfg.feature_dim;
  // channel plan over the 6 residual blocks; stride 2 on every other block
  const int plan[6] = {c0, c0, cmax / 2, cmax / 2, cmax, cmax};
  const int strides[6] = {1, 2, 1, 2, 1, 2};

  stem_ = nn::Conv::create(params_, "stem", 1, c0, 3, 2, 1, rng);
  stem_norm_ = nn::GroupNorm::create(params_, "stem_norm", c0, std::min(8, c0));
  int in_ch = c0;
  for (int b = 0; b < 6; ++b) {
    Block blk;
    const std::string name = "block" + std::to_string(b);
    blk.stride = strides[b];
    blk.conv1 = nn::Conv::create(params_, name + ".conv1", in_ch, plan[b], 3, strides[b], 1, rng);
    blk.norm1 = nn::GroupNorm::create(params_, name + ".norm1", plan[b], std::min(8, plan[b]));
    blk.conv2 = nn::Conv::create(params_, name + ".conv2", plan[b], plan[b], 3, 1, 1, rng);
    blk.norm2 = nn::GroupNorm::create(params_, name + ".norm2", plan[b], std::min(8, plan[b]));
    blk.has_skip = (in_ch != plan[b]) || strides[b] != 1;
    if (blk.has_skip) blk.skip = nn::Conv::create(params_, name + ".skip", in_ch, plan[b], 1, strides[b], 0, rng);
    blocks_.push_back(std::move(blk));
    in_ch = plan[b];
  }
  head_ = nn::Linear::create(params_, "head", cmax, cfg.num_fonts, rng);
}

Var WriterIdModel::features(const Var& x) const {
  Var h = nn::relu(stem_norm_(stem_(x)));
  for (const auto& blk : blocks_) {
    Var y = nn::relu(blk.norm1(blk.conv1(h)));
    y = blk.norm2(blk.conv2(y));
    Var s = blk.has_skip ? blk.skip(h) : h;
    h = nn::relu(nn::add(y, s));
  }
  return nn::global_avg_pool(h);  // [N, feature_dim]
}

Var WriterIdModel::logits(const Var& x) const { return head_(features(x)); }

std::vector<double> WriterIdModel::feature_vector(const Image& grey) const {
  Var f = features(image_to_var(grey, 1));
  return std::vector<double>(f->value.data(), f->value.data() + f->value.size());
}

int WriterIdModel::predict(const Image& grey) const {
  Var l = logits(image_to_var(grey, 1));
  Eigen::Index best = 0;
  l->value.maxCoeff(&best);
  return static_cast<int>(best);
}

void WriterIdModel::freeze() {
  for (auto& [name, p] : params_.entries()) p->requires_grad = false;
}

// ---------------------------------------------------------------------------
// HtrModel
// ---------------------------------------------------------------------------

json HtrConfig::to_json() const {
  json j;
  j["vocab"] = vocab;
  j["d_model"] = d_model;
  j["heads"] = heads;
  j["layers"] = layers;
  j["ffn"] = ffn;
  j["max_frames"] = max_frames;
  return j;
}

HtrConfig HtrConfig::from_json(const json& j) {
  HtrConfig c;
  c.vocab = j.at("vocab").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.heads = j.at("heads").get<int>();
  c.layers = j.at("layers").get<int>();
  c.ffn = j.at("ffn").get<int>();
  c.max_frames = j.at("max_frames").get<int>();
  return c;
}

HtrModel::HtrModel(const HtrConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
  if (cfg.vocab < 2) fail(ErrorClass::training, "HTR model needs a vocabulary");
  Rng rng(init_seed);
  conv1_ = nn::Conv::create(params_, "conv1", 1, 16, 3, 2, 1, rng);
  norm1_ = nn::GroupNorm::create(params_, "norm1", 16, 8);
  conv2_ = nn::Conv::create(params_, "conv2", 16, 32, 3, 2, 1, rng);
  norm2_ = nn::GroupNorm::create(params_, "norm2", 32, 8);
  conv3_ = nn::Conv::create(params_, "conv3", 32, 48, 3, 2, 1, rng);
  norm3_ = nn::GroupNorm::create(params_, "norm3", 48, 8);
  col_proj_ = nn::Linear::create(params_, "col_proj", 48 * 8, cfg.d_model, rng);
  pos_ = params_.add("pos", nn::parameter(Shape::of({cfg.max_frames, cfg.d_model}), rng, 0.02));
  encoder_ = nn::TransformerStack::create(params_, "encoder", cfg.layers, cfg.d_model, cfg.heads, cfg.ffn, false, rng);
  head_ = nn::Linear::create(params_, "head", cfg.d_model, cfg.vocab + 1, rng);
}

Var HtrModel::log_probs(const Var& x) const {
  if (x->shape.ndim != 4 || x->shape.d[0] != 1 || x->shape.d[1] != 1) {
    fail(ErrorClass::training, "HTR expects [1,1,H,W]");
  }
  if (x->shape.d[2] != 64) fail(ErrorClass::training, "HTR expects height 64");
  if (x->shape.d[3] % 8 != 0) fail(ErrorClass::training, "HTR width must be a multiple of 8");
  const int frames = x->shape.d[3] / 8;
  if (frames > cfg_.max_frames) fail(ErrorClass::training, "HTR input longer than max_frames");

  Var h = nn::relu(norm1_(conv1_(x)));   // [1,16,32,W/2]
  h = nn::relu(norm2_(conv2_(h)));       // [1,32,16,W/4]
  h = nn::relu(norm3_(conv3_(h)));       // [1,48,8,W/8]
  // [1,48,8,F] -> [F, 48*8]: gather channel+height into per-frame columns.
  h = nn::reshape(h, Shape::of({48 * 8, frames}));
  h = nn::transpose(h);
  Var seq = col_proj_(h);  // [F, d_model]
  seq = nn::add(seq, nn::slice_rows(pos_, 0, frames));
  seq = encoder_(seq, nullptr, false);
  return nn::log_softmax_rows(head_(seq));  // [F, vocab+1]
}

std::u32string HtrModel::transcribe(const Image& grey, const text::CharSet& charset) const {
  Image padded = grey.to_grey();
  if (padded.width() % 8 != 0) padded = padded.pad_right((padded.width() + 7) / 8 * 8, 255);
  Var lp = log_probs(image_to_var(padded, 1));
  const auto ids = ctc_greedy_decode(lp->value, lp->shape.rows(), lp->shape.cols(), cfg_.vocab);
  std::u32string out;
  for (int id : ids) {
    if (id >= 0 && id < static_cast<int>(charset.size())) out.push_back(charset.at(static_cast<std::size_t>(id)));
  }
  return out;
}

void HtrModel::freeze() {
  for (auto& [name, p] : params_.entries()) p->requires_grad = false;
}

}  // namespace stylus::auxnets
