#include "stylus/layers.hpp"

#include <cmath>

#include "stylus/common.hpp"

namespace stylus::nn {

Linear Linear::create(ParamStore& store, const std::string& name, int in, int out, Rng& rng) {
  Linear l;
  const real std = 1.0 / std::sqrt(static_cast<real>(in));
  l.weight = store.add(name + ".weight", parameter(Shape::of({in, out}), rng, std));
  l.bias = store.add(name + ".bias", parameter_zeros(Shape::of({out})));
  return l;
}

Var Linear::operator()(const Var& x) const { return add_rowvec(matmul(x, weight), bias); }

Conv Conv::create(ParamStore& store, const std::string& name, int in_ch, int out_ch, int kernel, int stride,
                  int padding, Rng& rng) {
  Conv c;
  const real std = 1.0 / std::sqrt(static_cast<real>(in_ch * kernel * kernel));
  c.weight = store.add(name + ".weight", parameter(Shape::of({out_ch, in_ch, kernel, kernel}), rng, std));
  c.bias = store.add(name + ".bias", parameter_zeros(Shape::of({out_ch})));
  c.stride = stride;
  c.padding = padding;
  return c;
}

Var Conv::operator()(const Var& x) const { return conv2d(x, weight, bias, stride, padding); }

GroupNorm GroupNorm::create(ParamStore& store, const std::string& name, int channels, int groups) {
  GroupNorm g;
  g.gamma = store.add(name + ".gamma", parameter_consts(Shape::of({channels}), 1.0));
  g.beta = store.add(name + ".beta", parameter_zeros(Shape::of({channels})));
  g.groups = groups;
  return g;
}

Var GroupNorm::operator()(const Var& x) const { return group_norm(x, gamma, beta, groups); }

AttentionBlock AttentionBlock::create(ParamStore& store, const std::string& name, int dim, int heads, Rng& rng) {
  if (dim % heads != 0) fail(ErrorClass::training, "attention dim not divisible by heads");
  AttentionBlock a;
  a.q = Linear::create(store, name + ".q", dim, dim, rng);
  a.k = Linear::create(store, name + ".k", dim, dim, rng);
  a.v = Linear::create(store, name + ".v", dim, dim, rng);
  a.o = Linear::create(store, name + ".o", dim, dim, rng);
  a.heads = heads;
  return a;
}

Var AttentionBlock::operator()(const Var& x, const Var* memory, bool causal) const {
  const Var& kv_src = memory ? *memory : x;
  const int dim = x->shape.cols();
  const int dh = dim / heads;
  const real scale = 1.0 / std::sqrt(static_cast<real>(dh));

  Var Q = q(x);
  Var K = k(kv_src);
  Var V = v(kv_src);

  std::vector<Var> head_outputs;
  head_outputs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Var Qh = slice_cols(Q, h * dh, dh);
    Var Kh = slice_cols(K, h * dh, dh);
    Var Vh = slice_cols(V, h * dh, dh);
    Var scores = mul_scalar(matmul(Qh, transpose(Kh)), scale);
    Var probs = softmax_rows(scores, causal && !memory);
    head_outputs.push_back(matmul(probs, Vh));
  }
  return o(concat_cols(head_outputs));
}

TransformerLayer TransformerLayer::create(ParamStore& store, const std::string& name, int dim, int heads,
                                          int ffn_dim, bool with_cross, Rng& rng) {
  TransformerLayer l;
  l.norm_self = store.add(name + ".norm_self", parameter_consts(Shape::of({dim}), 1.0));
  l.self_attn = AttentionBlock::create(store, name + ".self", dim, heads, rng);
  l.has_cross = with_cross;
  if (with_cross) {
    l.norm_cross = store.add(name + ".norm_cross", parameter_consts(Shape::of({dim}), 1.0));
    l.cross_attn = AttentionBlock::create(store, name + ".cross", dim, heads, rng);
  }
  l.norm_ff = store.add(name + ".norm_ff", parameter_consts(Shape::of({dim}), 1.0));
  l.ff_in = Linear::create(store, name + ".ff_in", dim, ffn_dim, rng);
  l.ff_out = Linear::create(store, name + ".ff_out", ffn_dim, dim, rng);
  return l;
}

Var TransformerLayer::operator()(const Var& x, const Var* memory, bool causal) const {
  Var h = add(x, self_attn(rms_norm(x, norm_self), nullptr, causal));
  if (has_cross) {
    if (!memory) fail(ErrorClass::training, "cross-attention layer needs encoder memory");
    h = add(h, cross_attn(rms_norm(h, norm_cross), memory, false));
  }
  return add(h, ff_out(gelu(ff_in(rms_norm(h, norm_ff)))));
}

TransformerStack TransformerStack::create(ParamStore& store, const std::string& name, int n_layers, int dim,
                                          int heads, int ffn_dim, bool with_cross, Rng& rng) {
  TransformerStack s;
  for (int i = 0; i < n_layers; ++i) {
    s.layers.push_back(TransformerLayer::create(store, name + ".layer" + std::to_string(i), dim, heads, ffn_dim,
                                                with_cross, rng));
  }
  s.final_norm = store.add(name + ".final_norm", parameter_consts(Shape::of({dim}), 1.0));
  return s;
}

Var TransformerStack::operator()(Var x, const Var* memory, bool causal) const {
  for (const auto& layer : layers) x = layer(x, memory, causal);
  return rms_norm(x, final_norm);
}

}  // namespace stylus::nn
