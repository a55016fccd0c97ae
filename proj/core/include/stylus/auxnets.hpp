#pragma once

#include <nlohmann/json.hpp>

#include <string>
#include <vector>

#include "stylus/image.hpp"
#include "stylus/layers.hpp"
#include "stylus/tensor.hpp"
#include "stylus/text.hpp"

namespace stylus::auxnets {

using json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// CTC loss
// ---------------------------------------------------------------------------

// log_probs: [T, V+1] per-frame log-probabilities (blank = index V).
// Returns -log P(target | frames), summing over all valid alignments via the
// forward algorithm in log space. Backward pushes the full analytic gradient
// (alpha-beta posteriors) into log_probs. An unalignable target yields +inf
// with zero gradient, distinct from NaN-style numerical failure.
nn::Var ctc_loss(const nn::Var& log_probs, const std::vector<int>& target, int blank);

// Value-only variant for scoring.
double ctc_loss_value(const nn::Arr& log_probs, int frames, int vocab_plus_blank, const std::vector<int>& target,
                      int blank);

// Greedy decoder: argmax per frame, collapse repeats, drop blanks.
std::vector<int> ctc_greedy_decode(const nn::Arr& log_probs, int frames, int vocab_plus_blank, int blank);

// ---------------------------------------------------------------------------
// CER
// ---------------------------------------------------------------------------

std::size_t levenshtein(const std::u32string& a, const std::u32string& b);
// Levenshtein distance / max(1, |reference|).
double cer(const std::u32string& hypothesis, const std::u32string& reference);

// ---------------------------------------------------------------------------
// Writer-identification network (6 residual blocks)
// ---------------------------------------------------------------------------

struct WriterIdConfig {
  int num_fonts = 0;
  int stem_channels = 16;
  int feature_dim = 64;  // channels of the last block == penultimate feature size
  json to_json() const;
  static WriterIdConfig from_json(const json& j);
};

class WriterIdModel {
 public:
  WriterIdModel(const WriterIdConfig& cfg, std::uint64_t init_seed);

  // x: [N,1,H,W] in [0,1]. Penultimate global-average-pooled features.
  nn::Var features(const nn::Var& x) const;
  nn::Var logits(const nn::Var& x) const;

  // Convenience for frozen scoring of one image.
  std::vector<double> feature_vector(const Image& grey) const;
  int predict(const Image& grey) const;

  const WriterIdConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  void freeze();

 private:
  WriterIdConfig cfg_;
  nn::ParamStore params_;
  nn::Conv stem_;
  nn::GroupNorm stem_norm_;
  struct Block {
    nn::Conv conv1, conv2;
    nn::GroupNorm norm1, norm2;
    nn::Conv skip;  // 1x1 when shape changes
    bool has_skip = false;
    int stride = 1;
  };
  std::vector<Block> blocks_;
  nn::Linear head_;
};

// ---------------------------------------------------------------------------
// HTR recognizer: column-feature CNN + transformer encoder + CTC head.
// Frame rate = one frame per 8 pixel columns, matching the latent grid.
// ---------------------------------------------------------------------------

struct HtrConfig {
  int vocab = 0;  // charset size; blank = vocab
  int d_model = 128;
  int heads = 4;
  int layers = 2;
  int ffn = 256;
  int max_frames = 512;
  json to_json() const;
  static HtrConfig from_json(const json& j);
};

class HtrModel {
 public:
  HtrModel(const HtrConfig& cfg, std::uint64_t init_seed);

  // x: [1,1,64,W] in [0,1], W % 8 == 0. Returns [W/8, vocab+1] log-probs.
  nn::Var log_probs(const nn::Var& x) const;

  // Greedy transcription of one image (frozen model).
  std::u32string transcribe(const Image& grey, const text::CharSet& charset) const;

  const HtrConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  void freeze();

 private:
  HtrConfig cfg_;
  nn::ParamStore params_;
  nn::Conv conv1_, conv2_, conv3_;
  nn::GroupNorm norm1_, norm2_, norm3_;
  nn::Linear col_proj_;
  nn::Var pos_;
  nn::TransformerStack encoder_;
  nn::Linear head_;
};

// Image [0,1] tensor helpers shared by the models.
nn::Var image_to_var(const Image& img, int channels);  // [1,C,H,W], constant
nn::Arr image_to_arr(const Image& img, int channels);

}  // namespace stylus::auxnets
