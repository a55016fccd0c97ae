#pragma once

#include <string>
#include <vector>

#include "stylus/tensor.hpp"

namespace stylus::nn {

struct Linear {
  Var weight;  // [in, out]
  Var bias;    // [out]

  static Linear create(ParamStore& store, const std::string& name, int in, int out, Rng& rng);
  Var operator()(const Var& x) const;  // [T, in] -> [T, out]
};

struct Conv {
  Var weight;  // [oc, ic, k, k]
  Var bias;    // [oc]
  int stride = 1;
  int padding = 1;

  static Conv create(ParamStore& store, const std::string& name, int in_ch, int out_ch, int kernel, int stride,
                     int padding, Rng& rng);
  Var operator()(const Var& x) const;
};

struct GroupNorm {
  Var gamma, beta;
  int groups = 1;

  static GroupNorm create(ParamStore& store, const std::string& name, int channels, int groups);
  Var operator()(const Var& x) const;
};

// Pre-norm transformer layer with optional cross-attention, T5-flavoured
// (RMS norms, GELU feed-forward).
struct AttentionBlock {
  Linear q, k, v, o;
  int heads = 1;

  static AttentionBlock create(ParamStore& store, const std::string& name, int dim, int heads, Rng& rng);
  // Self-attention when memory is null; cross-attention otherwise.
  Var operator()(const Var& x, const Var* memory, bool causal) const;
};

struct TransformerLayer {
  Var norm_self;
  AttentionBlock self_attn;
  bool has_cross = false;
  Var norm_cross;
  AttentionBlock cross_attn;
  Var norm_ff;
  Linear ff_in, ff_out;

  static TransformerLayer create(ParamStore& store, const std::string& name, int dim, int heads, int ffn_dim,
                                 bool with_cross, Rng& rng);
  Var operator()(const Var& x, const Var* memory, bool causal) const;
};

struct TransformerStack {
  std::vector<TransformerLayer> layers;
  Var final_norm;

  static TransformerStack create(ParamStore& store, const std::string& name, int n_layers, int dim, int heads,
                                 int ffn_dim, bool with_cross, Rng& rng);
  Var operator()(Var x, const Var* memory, bool causal) const;
};

}  // namespace stylus::nn
