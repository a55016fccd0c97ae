#pragma once

#include <nlohmann/json.hpp>

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "stylus/layers.hpp"
#include "stylus/tensor.hpp"
#include "stylus/text.hpp"
#include "stylus/vae.hpp"

namespace stylus::ar {

using json = nlohmann::ordered_json;

struct ArConfig {
  int d_model = 128;  // full profile: 1024
  int enc_layers = 4;
  int dec_layers = 4;
  int heads = 4;
  int ffn = 512;
  int max_context = 4096;  // decoder positions (SOS + slices)
  int max_text = 512;      // encoder positions
  double noise_std = 0.1;  // stddev of Normal noise summed onto decoder-input latents
  double s1_noisy_tf = 0.1;
  double s2_noisy_tf = 0.0;
  double lr = 1e-4;
  double weight_decay = 1e-2;
  int s1_iterations = 3000;  // full profile: 70000
  int s2_iterations = 250;
  int s1_batch = 8;
  int s2_virtual_batch = 16;  // full profile: 256, reached via accumulation
  int s2_micro_batch = 4;
  int s1_canvas = 448;   // full profile: 768
  int s2_canvas = 768;   // full profile: 2048
  // Supervise padded canvas positions (teaches the stop signal) or only the
  // real-content columns.
  bool supervise_padding = true;
  std::uint64_t init_seed = 2;

  json to_json() const;
  static ArConfig from_json(const json& j);
};

class ArGenerator {
 public:
  ArGenerator(const ArConfig& cfg, int vocab);

  // Character-token encoder: ids -> [k, d_model] memory.
  nn::Var encode_text_graph(const std::vector<int>& token_ids) const;

  // Decoder over latent-slice inputs. `inputs` is [m, 8], or null for an
  // SOS-only context; output is [m+1, 8]: row t predicts slice t+1.
  nn::Var decode_graph(const nn::Var* inputs, const nn::Var& memory) const;

  // Frozen-model single-step prediction with full causal context.
  std::array<double, 8> predict_next(const vae::LatentSequence& context, const std::vector<int>& text_ids) const;

  const ArConfig& config() const { return cfg_; }
  int vocab() const { return vocab_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  void freeze();

 private:
  ArConfig cfg_;
  int vocab_ = 0;
  nn::ParamStore params_;
  nn::Var char_embed_;  // [vocab, d]
  nn::Var enc_pos_;     // [max_text, d]
  nn::TransformerStack encoder_;
  nn::Var sos_;      // [1, d]
  nn::Var dec_pos_;  // [max_context, d]
  nn::Linear adapter_in_;   // 8 -> d
  nn::Linear adapter_out_;  // d -> 8
  nn::TransformerStack decoder_;
};

// One teacher-forcing training example: canvas-length latents plus masks.
struct ArExample {
  vae::LatentSequence latents;       // canvas width / 8 slices
  std::vector<bool> real_cols;       // real-vs-padded indicator
  std::vector<bool> supervised;      // rows of the MSE mask
  std::vector<int> token_ids;        // condition text
};

struct ArStepStats {
  double mse = 0.0;
  int positions = 0;
};

class ArTrainer {
 public:
  ArTrainer(ArGenerator& model, std::uint64_t seed);

  // One optimizer step over `examples` (summed graph, mean loss). noisy_tf
  // replaces decoder inputs per-position with first-pass predictions.
  ArStepStats step(const std::vector<ArExample>& examples, double noisy_tf_prob);

  // Gradient-accumulating variant: call accumulate() for each micro-batch,
  // then flush(). Loss scale 1/num_micro_batches.
  void begin_accumulation();
  ArStepStats accumulate(const std::vector<ArExample>& examples, double noisy_tf_prob, int total_micro_batches);
  void flush();

  // Teacher-forced evaluation MSE (no noise, no update).
  double evaluate(const std::vector<ArExample>& examples) const;

  nn::AdamW& optimizer() { return optim_; }
  void reset_optimizer() { optim_.reset(); }
  void reseed(std::uint64_t seed) { rng_ = Rng(seed).child("ar_trainer"); }

 private:
  nn::Var example_loss(const ArExample& ex, double noisy_tf_prob, bool with_noise);

  ArGenerator& model_;
  nn::AdamW optim_;
  Rng rng_;
};

}  // namespace stylus::ar
