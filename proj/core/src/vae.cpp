#include "stylus/vae.hpp"

#include <cmath>

#include "stylus/common.hpp"

namespace stylus::vae {

using nn::Arr;
using nn::Shape;
using nn::Var;

// ---------------------------------------------------------------------------
// LatentSequence
// ---------------------------------------------------------------------------

LatentSequence LatentSequence::zeros(int count) {
  LatentSequence s;
  s.count = count;
  s.data.assign(static_cast<std::size_t>(count) * kDim, 0.0);
  return s;
}

void LatentSequence::append(const double* v) {
  data.insert(data.end(), v, v + kDim);
  ++count;
}

LatentSequence LatentSequence::head(int n) const {
  if (n < 0 || n > count) fail(ErrorClass::inference, "LatentSequence::head out of range");
  LatentSequence s;
  s.count = n;
  s.data.assign(data.begin(), data.begin() + static_cast<std::ptrdiff_t>(n) * kDim);
  return s;
}

LatentSequence LatentSequence::tail_trimmed(int n) const {
  if (n < 0 || n > count) fail(ErrorClass::inference, "LatentSequence::tail_trimmed out of range");
  return head(count - n);
}

LatentSequence LatentSequence::concat(const LatentSequence& other) const {
  LatentSequence s = *this;
  s.data.insert(s.data.end(), other.data.begin(), other.data.end());
  s.count += other.count;
  return s;
}

// ---------------------------------------------------------------------------
// VaeConfig
// ---------------------------------------------------------------------------

json VaeConfig::to_json() const {
  json j;
  j["channels"] = channels;
  j["w_mae"] = w_mae;
  j["w_wid"] = w_wid;
  j["w_htr"] = w_htr;
  j["beta"] = beta;
  j["lr"] = lr;
  j["iterations"] = iterations;
  j["batch_size"] = batch_size;
  j["train_canvas"] = train_canvas;
  j["max_train_words"] = max_train_words;
  j["htr_noisy_tf_prob"] = htr_noisy_tf_prob;
  j["init_seed"] = init_seed;
  return j;
}

VaeConfig VaeConfig::from_json(const json& j) {
  VaeConfig c;
  const auto ch = j.at("channels");
  for (std::size_t i = 0; i < 4; ++i) c.channels[i] = ch.at(i).get<int>();
  c.w_mae = j.at("w_mae").get<double>();
  c.w_wid = j.at("w_wid").get<double>();
  c.w_htr = j.at("w_htr").get<double>();
  c.beta = j.at("beta").get<double>();
  c.lr = j.at("lr").get<double>();
  c.iterations = j.at("iterations").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.train_canvas = j.at("train_canvas").get<int>();
  c.max_train_words = j.at("max_train_words").get<int>();
  c.htr_noisy_tf_prob = j.at("htr_noisy_tf_prob").get<double>();
  c.init_seed = j.at("init_seed").get<std::uint64_t>();
  return c;
}

// ---------------------------------------------------------------------------
// Vae
// ---------------------------------------------------------------------------

namespace {
int norm_groups(int channels) { return std::min(8, channels); }
}  // namespace

Vae::Vae(const VaeConfig& cfg) : cfg_(cfg) {
  Rng rng(cfg.init_seed);
  const auto& ch = cfg.channels;

  enc_stem_ = nn::Conv::create(params_, "enc.stem", 3, ch[0], 3, 1, 1, rng);
  enc_stem_norm_ = nn::GroupNorm::create(params_, "enc.stem_norm", ch[0], norm_groups(ch[0]));
  for (int b = 0; b < 4; ++b) {
    const std::string name = "enc.block" + std::to_string(b);
    enc_blocks_[static_cast<std::size_t>(b)] = {
        nn::Conv::create(params_, name + ".conv1", ch[static_cast<std::size_t>(b)], ch[static_cast<std::size_t>(b)], 3, 1, 1, rng),
        nn::Conv::create(params_, name + ".conv2", ch[static_cast<std::size_t>(b)], ch[static_cast<std::size_t>(b)], 3, 1, 1, rng),
        nn::GroupNorm::create(params_, name + ".norm1", ch[static_cast<std::size_t>(b)], norm_groups(ch[static_cast<std::size_t>(b)])),
        nn::GroupNorm::create(params_, name + ".norm2", ch[static_cast<std::size_t>(b)], norm_groups(ch[static_cast<std::size_t>(b)]))};
    if (b < 3) {
      enc_down_[static_cast<std::size_t>(b)] =
          nn::Conv::create(params_, name + ".down", ch[static_cast<std::size_t>(b)], ch[static_cast<std::size_t>(b + 1)], 3, 2, 1, rng);
    }
  }
  enc_head_ = nn::Conv::create(params_, "enc.head", ch[3], 2, 3, 1, 1, rng);

  dec_stem_ = nn::Conv::create(params_, "dec.stem", 1, ch[3], 3, 1, 1, rng);
  dec_stem_norm_ = nn::GroupNorm::create(params_, "dec.stem_norm", ch[3], norm_groups(ch[3]));
  for (int b = 0; b < 4; ++b) {
    const std::string name = "dec.block" + std::to_string(b);
    const int c = ch[static_cast<std::size_t>(3 - b)];
    dec_blocks_[static_cast<std::size_t>(b)] = {nn::Conv::create(params_, name + ".conv1", c, c, 3, 1, 1, rng),
                                                nn::Conv::create(params_, name + ".conv2", c, c, 3, 1, 1, rng),
                                                nn::GroupNorm::create(params_, name + ".norm1", c, norm_groups(c)),
                                                nn::GroupNorm::create(params_, name + ".norm2", c, norm_groups(c))};
    if (b < 3) {
      dec_up_[static_cast<std::size_t>(b)] =
          nn::Conv::create(params_, name + ".up", c, ch[static_cast<std::size_t>(2 - b)], 3, 1, 1, rng);
    }
  }
  dec_head_ = nn::Conv::create(params_, "dec.head", ch[0], 1, 3, 1, 1, rng);
}

Var Vae::block_forward(const ConvBlock& b, Var x) const {
  x = nn::silu(b.norm1(b.conv1(x)));
  x = nn::silu(b.norm2(b.conv2(x)));
  return x;
}

std::pair<Var, Var> Vae::encode_graph(const Var& images) const {
  if (images->shape.ndim != 4 || images->shape.d[1] != 3) fail(ErrorClass::training, "encode expects [N,3,H,W]");
  if (images->shape.d[2] != 64) fail(ErrorClass::training, "encode expects height 64");
  if (images->shape.d[3] % 8 != 0) {
    fail(ErrorClass::training, "encode width " + std::to_string(images->shape.d[3]) + " not a multiple of 8");
  }
  Var h = nn::silu(enc_stem_norm_(enc_stem_(images)));
  for (int b = 0; b < 4; ++b) {
    h = block_forward(enc_blocks_[static_cast<std::size_t>(b)], h);
    if (b < 3) h = nn::silu(enc_down_[static_cast<std::size_t>(b)](h));
  }
  Var out = enc_head_(h);  // [N,2,8,w]
  const int n = out->shape.d[0], hh = out->shape.d[2], w = out->shape.d[3];
  // split channels
  Var flat = nn::reshape(out, Shape::of({n * 2, hh * w}));
  std::vector<Var> mus, logvars;
  for (int i = 0; i < n; ++i) {
    mus.push_back(nn::slice_rows(flat, i * 2, 1));
    logvars.push_back(nn::slice_rows(flat, i * 2 + 1, 1));
  }
  Var mu = nn::reshape(nn::concat_rows(mus), Shape::of({n, 1, hh, w}));
  Var logvar = nn::reshape(nn::concat_rows(logvars), Shape::of({n, 1, hh, w}));
  return {mu, logvar};
}

Var Vae::decode_graph(const Var& latents) const {
  if (latents->shape.ndim != 4 || latents->shape.d[1] != 1 || latents->shape.d[2] != 8) {
    fail(ErrorClass::training, "decode expects [N,1,8,w]");
  }
  Var h = nn::silu(dec_stem_norm_(dec_stem_(latents)));
  for (int b = 0; b < 4; ++b) {
    h = block_forward(dec_blocks_[static_cast<std::size_t>(b)], h);
    if (b < 3) h = nn::silu(dec_up_[static_cast<std::size_t>(b)](nn::upsample_nearest2x(h)));
  }
  return nn::sigmoid(dec_head_(h));  // [N,1,64,8w]
}

GaussianPosterior Vae::encode(const Image& rgb) const {
  if (rgb.width() % 8 != 0) {
    fail(ErrorClass::inference, "encode: width " + std::to_string(rgb.width()) + " not a multiple of 8");
  }
  auto [mu, logvar] = encode_graph(auxnets::image_to_var(rgb, 3));
  GaussianPosterior p;
  p.width = rgb.width() / 8;
  p.mean = mu->value;
  p.logvar = logvar->value;
  return p;
}

LatentSequence Vae::sample_latent(const GaussianPosterior& posterior, std::optional<std::uint64_t> seed) const {
  LatentSequence seq = LatentSequence::zeros(posterior.width);
  const int w = posterior.width;
  if (!seed) {
    for (int j = 0; j < w; ++j) {
      for (int i = 0; i < 8; ++i) seq.slice(j)[i] = posterior.mean(static_cast<Eigen::Index>(i) * w + j);
    }
    return seq;
  }
  Rng rng(*seed);
  // Reparameterization: mean + exp(logvar/2) * eps, drawn in grid order.
  for (int i = 0; i < 8; ++i) {
    for (int j = 0; j < w; ++j) {
      const Eigen::Index k = static_cast<Eigen::Index>(i) * w + j;
      seq.slice(j)[i] = posterior.mean(k) + std::exp(0.5 * posterior.logvar(k)) * rng.normal();
    }
  }
  return seq;
}

LatentSequence Vae::grid_to_slices(const Arr& grid, int width) {
  LatentSequence seq = LatentSequence::zeros(width);
  for (int j = 0; j < width; ++j) {
    for (int i = 0; i < 8; ++i) seq.slice(j)[i] = grid(static_cast<Eigen::Index>(i) * width + j);
  }
  return seq;
}

Arr Vae::slices_to_grid(const LatentSequence& seq) {
  Arr grid(static_cast<Eigen::Index>(8) * seq.count);
  for (int j = 0; j < seq.count; ++j) {
    for (int i = 0; i < 8; ++i) grid(static_cast<Eigen::Index>(i) * seq.count + j) = seq.slice(j)[i];
  }
  return grid;
}

Arr Vae::decode_raw(const LatentSequence& latents) const {
  if (latents.count == 0) fail(ErrorClass::inference, "decode: empty latent sequence");
  Var grid = nn::constant(Shape::of({1, 1, 8, latents.count}), slices_to_grid(latents));
  Var img = decode_graph(grid);
  return img->value;
}

Image Vae::decode(const LatentSequence& latents) const {
  const Arr raw = decode_raw(latents);
  const int w = latents.count * 8;
  Image out(w, 64, 1);
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < w; ++x) {
      out.at(x, y) = static_cast<std::uint8_t>(std::lround(std::clamp(raw(static_cast<Eigen::Index>(y) * w + x), 0.0, 1.0) * 255.0));
    }
  }
  return out;
}

double Vae::kl_loss(const GaussianPosterior& posterior) const {
  return 0.5 * (posterior.mean.square() + posterior.logvar.exp() - 1.0 - posterior.logvar).mean();
}

void Vae::freeze() {
  for (auto& [name, p] : params_.entries()) p->requires_grad = false;
}

// ---------------------------------------------------------------------------
// VaeTrainer
// ---------------------------------------------------------------------------

VaeTrainer::VaeTrainer(Vae& model, const auxnets::WriterIdModel* writer_id, const auxnets::HtrModel* htr,
                       std::uint64_t seed)
    : model_(model),
      writer_id_(writer_id),
      htr_(htr),
      optim_(model.params(), {model.config().lr, 0.9, 0.999, 1e-8, 0.0}),
      rng_(Rng(seed).child("vae_trainer")) {}

LossBreakdown VaeTrainer::step(const VaeBatch& batch) { return run(batch, true); }

LossBreakdown VaeTrainer::evaluate(const VaeBatch& batch) { return run(batch, false); }

// Evaluation is deterministic: no reparameterization noise, no recognizer
// input mixing, no RNG consumption.
LossBreakdown VaeTrainer::run(const VaeBatch& batch, bool update) {
  const std::size_t n = batch.inputs.size();
  if (n == 0 || batch.targets.size() != n) fail(ErrorClass::training, "vae batch malformed");
  const auto& cfg = model_.config();

  // Stack the batch into [N,3,H,W] / [N,1,H,W] tensors (uniform canvas).
  const int H = batch.inputs[0].height(), W = batch.inputs[0].width();
  Arr in_data(static_cast<Eigen::Index>(n) * 3 * H * W);
  Arr tgt_data(static_cast<Eigen::Index>(n) * H * W);
  for (std::size_t i = 0; i < n; ++i) {
    if (batch.inputs[i].width() != W || batch.targets[i].width() != W) {
      fail(ErrorClass::training, "vae batch images must share one canvas width");
    }
    in_data.segment(static_cast<Eigen::Index>(i) * 3 * H * W, static_cast<Eigen::Index>(3) * H * W) =
        auxnets::image_to_arr(batch.inputs[i], 3);
    tgt_data.segment(static_cast<Eigen::Index>(i) * H * W, static_cast<Eigen::Index>(H) * W) =
        auxnets::image_to_arr(batch.targets[i], 1);
  }
  Var images = nn::constant(Shape::of({static_cast<int>(n), 3, H, W}), in_data);
  Var targets = nn::constant(Shape::of({static_cast<int>(n), 1, H, W}), tgt_data);

  auto [mu, logvar] = model_.encode_graph(images);

  // Reparameterized sample (mean only when evaluating).
  Var z = mu;
  if (update) {
    Arr eps(mu->value.size());
    for (Eigen::Index i = 0; i < eps.size(); ++i) eps(i) = rng_.normal();
    z = nn::add(mu, nn::mul(nn::exp_(nn::mul_scalar(logvar, 0.5)), nn::constant(mu->shape, eps)));
  }

  Var decoded = model_.decode_graph(z);  // [N,1,H,W]

  Var mae = nn::l1_mean(decoded, targets);
  Var kl = nn::kl_gaussian_mean(nn::reshape(mu, Shape::of({1, static_cast<int>(mu->value.size())})),
                                nn::reshape(logvar, Shape::of({1, static_cast<int>(logvar->value.size())})));

  Var total = nn::add(nn::mul_scalar(mae, cfg.w_mae), nn::mul_scalar(kl, cfg.beta));

  LossBreakdown out;
  out.mae = mae->value(0);
  out.kl = kl->value(0);

  if (writer_id_ && cfg.w_wid > 0.0) {
    if (static_cast<std::size_t>(batch.font_ids.size()) != n) fail(ErrorClass::training, "vae batch: missing font ids");
    Var logits = writer_id_->logits(decoded);
    Var wid = nn::cross_entropy_logits(logits, batch.font_ids);
    out.wid = wid->value(0);
    total = nn::add(total, nn::mul_scalar(wid, cfg.w_wid));
  }
  if (htr_ && cfg.w_htr > 0.0) {
    if (batch.token_ids.size() != n) fail(ErrorClass::training, "vae batch: missing token ids");
    std::vector<Var> ctcs;
    for (std::size_t i = 0; i < n; ++i) {
      Var sample = nn::reshape(nn::slice_rows(nn::reshape(decoded, Shape::of({static_cast<int>(n), H * W})),
                                              static_cast<int>(i), 1),
                               Shape::of({1, 1, H, W}));
      // Noisy teacher forcing for the recognizer: with probability p the
      // branch input is an even mix of the clean target and the decoder
      // output, otherwise the decoder output alone.
      Var branch_in = sample;
      if (update && rng_.bernoulli(cfg.htr_noisy_tf_prob)) {
        Var tgt_i = nn::reshape(nn::slice_rows(nn::reshape(targets, Shape::of({static_cast<int>(n), H * W})),
                                               static_cast<int>(i), 1),
                                Shape::of({1, 1, H, W}));
        branch_in = nn::add(nn::mul_scalar(sample, 0.5), nn::mul_scalar(tgt_i, 0.5));
      }
      Var lp = htr_->log_probs(branch_in);
      Var loss_i = auxnets::ctc_loss(lp, batch.token_ids[i], htr_->config().vocab);
      if (std::isinf(loss_i->value(0))) continue;  // unalignable target at this canvas
      ctcs.push_back(loss_i);
    }
    if (!ctcs.empty()) {
      Var htr_sum = ctcs[0];
      for (std::size_t i = 1; i < ctcs.size(); ++i) htr_sum = nn::add(htr_sum, ctcs[i]);
      Var htr_mean = nn::mul_scalar(htr_sum, 1.0 / static_cast<double>(ctcs.size()));
      out.htr = htr_mean->value(0);
      total = nn::add(total, nn::mul_scalar(htr_mean, cfg.w_htr));
    }
  }

  out.total = total->value(0);
  if (!std::isfinite(out.total)) {
    fail(ErrorClass::training, "vae loss non-finite: mae=" + std::to_string(out.mae) + " kl=" + std::to_string(out.kl) +
                                   " wid=" + std::to_string(out.wid) + " htr=" + std::to_string(out.htr));
  }
  if (update) {
    model_.params().zero_grad();
    nn::backward(total);
    optim_.step();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Centroids
// ---------------------------------------------------------------------------

void accumulate_centroids(const Vae& vae, const Image& composite, const Image& clean_target,
                          std::uint8_t white_threshold, LatentCentroids& acc) {
  if (composite.width() != clean_target.width()) fail(ErrorClass::training, "centroids: width mismatch");
  const GaussianPosterior post = vae.encode(composite);
  const LatentSequence seq = vae.sample_latent(post, std::nullopt);
  const Image grey = clean_target.to_grey();
  for (int j = 0; j < seq.count; ++j) {
    bool white = true;
    for (int x = j * 8; x < (j + 1) * 8 && white; ++x) {
      for (int y = 0; y < grey.height(); ++y) {
        if (grey.at(x, y) < white_threshold) {
          white = false;
          break;
        }
      }
    }
    if (white) {
      for (int i = 0; i < 8; ++i) acc.padding[static_cast<std::size_t>(i)] += seq.slice(j)[i];
      ++acc.padding_count;
    } else {
      for (int i = 0; i < 8; ++i) acc.character[static_cast<std::size_t>(i)] += seq.slice(j)[i];
      ++acc.character_count;
    }
  }
}

}  // namespace stylus::vae
