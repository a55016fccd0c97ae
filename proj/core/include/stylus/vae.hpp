#pragma once

#include <nlohmann/json.hpp>

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "stylus/auxnets.hpp"
#include "stylus/image.hpp"
#include "stylus/layers.hpp"
#include "stylus/tensor.hpp"

namespace stylus::vae {

using json = nlohmann::ordered_json;

// w-long sequence of 8-dimensional vertical-slice embeddings; the unit the
// autoregressive generator works in.
struct LatentSequence {
  static constexpr int kDim = 8;
  int count = 0;
  std::vector<double> data;  // count x 8, slice-major

  static LatentSequence zeros(int count);
  double* slice(int i) { return data.data() + static_cast<std::size_t>(i) * kDim; }
  const double* slice(int i) const { return data.data() + static_cast<std::size_t>(i) * kDim; }
  int source_width() const { return count * 8; }
  void append(const double* v);
  LatentSequence head(int n) const;       // first n slices
  LatentSequence tail_trimmed(int n) const;  // drop last n slices
  LatentSequence concat(const LatentSequence& other) const;
};

// Diagonal Gaussian over the 1 x 8 x w latent grid.
struct GaussianPosterior {
  int width = 0;           // w
  nn::Arr mean;            // 8*w, grid layout [8][w]
  nn::Arr logvar;          // same layout
};

struct VaeConfig {
  std::array<int, 4> channels{32, 64, 128, 256};
  double w_mae = 1.0;
  double w_wid = 0.005;
  double w_htr = 0.3;
  double beta = 1e-6;
  double lr = 1e-4;
  int iterations = 5000;  // toy default; the full profile restores 60000
  int batch_size = 4;
  int train_canvas = 256;          // training images are fitted to this width
  int max_train_words = 3;         // natural-width samples drawn for training
  double htr_noisy_tf_prob = 0.3;  // mix-in probability for the HTR branch input
  std::uint64_t init_seed = 1;

  json to_json() const;
  static VaeConfig from_json(const json& j);
};

class Vae {
 public:
  explicit Vae(const VaeConfig& cfg);

  // Training-graph entry points. images: [N,3,H,W] in [0,1].
  std::pair<nn::Var, nn::Var> encode_graph(const nn::Var& images) const;  // mu, logvar: [N,1,8,w]
  nn::Var decode_graph(const nn::Var& latents) const;                     // [N,1,8,w] -> [N,1,H,8w] in (0,1)

  // Frozen-model API.
  GaussianPosterior encode(const Image& rgb) const;  // W must be a multiple of 8
  LatentSequence sample_latent(const GaussianPosterior& posterior, std::optional<std::uint64_t> seed) const;
  Image decode(const LatentSequence& latents) const;
  nn::Arr decode_raw(const LatentSequence& latents) const;  // [64 x 8w] pixels in [0,1]

  double kl_loss(const GaussianPosterior& posterior) const;

  const VaeConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  void freeze();

  // Conversions between grid tensors and slice sequences.
  static LatentSequence grid_to_slices(const nn::Arr& grid, int width);
  static nn::Arr slices_to_grid(const LatentSequence& seq);

 private:
  VaeConfig cfg_;
  nn::ParamStore params_;

  struct ConvBlock {
    nn::Conv conv1, conv2;
    nn::GroupNorm norm1, norm2;
  };
  nn::Var block_forward(const ConvBlock& b, nn::Var x) const;

  // encoder
  nn::Conv enc_stem_;
  nn::GroupNorm enc_stem_norm_;
  std::array<ConvBlock, 4> enc_blocks_;
  std::array<nn::Conv, 3> enc_down_;
  nn::Conv enc_head_;  // -> 2 channels (mu, logvar)
  // decoder
  nn::Conv dec_stem_;
  nn::GroupNorm dec_stem_norm_;
  std::array<ConvBlock, 4> dec_blocks_;
  std::array<nn::Conv, 3> dec_up_;
  nn::Conv dec_head_;  // -> 1 channel
};

struct LossBreakdown {
  double mae = 0.0;
  double kl = 0.0;
  double wid = 0.0;
  double htr = 0.0;
  double total = 0.0;
};

// One training batch, already tensorized.
struct VaeBatch {
  std::vector<Image> inputs;    // composite I at canvas width
  std::vector<Image> targets;   // clean I_T at canvas width
  std::vector<int> font_ids;
  std::vector<std::vector<int>> token_ids;
};

class VaeTrainer {
 public:
  VaeTrainer(Vae& model, const auxnets::WriterIdModel* writer_id, const auxnets::HtrModel* htr,
             std::uint64_t seed);

  // Applies one optimizer update. Aux weights are frozen by contract; the
  // freeze invariant is checked in tests via ParamStore::value_hash.
  LossBreakdown step(const VaeBatch& batch);
  // Loss breakdown without an update (held-out evaluation).
  LossBreakdown evaluate(const VaeBatch& batch);

  nn::AdamW& optimizer() { return optim_; }

 private:
  LossBreakdown run(const VaeBatch& batch, bool update);

  Vae& model_;
  const auxnets::WriterIdModel* writer_id_;
  const auxnets::HtrModel* htr_;
  nn::AdamW optim_;
  Rng rng_;
};

// Latent centroids for padding detection: slices labelled by the pixel
// content of their 8-column band in I_T (all pixels >= threshold -> padding).
struct LatentCentroids {
  std::array<double, 8> padding{};
  std::array<double, 8> character{};
  std::int64_t padding_count = 0;
  std::int64_t character_count = 0;
};

// Labels each slice of `img`'s latents using the clean target image and
// accumulates centroid sums.
void accumulate_centroids(const Vae& vae, const Image& composite, const Image& clean_target,
                          std::uint8_t white_threshold, LatentCentroids& acc);

}  // namespace stylus::vae
