#include "stylus/argen.hpp"

#include <cmath>

#include "stylus/common.hpp"

namespace stylus::ar {

using nn::Arr;
using nn::Shape;
using nn::Var;

json ArConfig::to_json() const {
  json j;
  j["d_model"] = d_model;
  j["enc_layers"] = enc_layers;
  j["dec_layers"] = dec_layers;
  j["heads"] = heads;
  j["ffn"] = ffn;
  j["max_context"] = max_context;
  j["max_text"] = max_text;
  j["noise_std"] = noise_std;
  j["s1_noisy_tf"] = s1_noisy_tf;
  j["s2_noisy_tf"] = s2_noisy_tf;
  j["lr"] = lr;
  j["weight_decay"] = weight_decay;
  j["s1_iterations"] = s1_iterations;
  j["s2_iterations"] = s2_iterations;
  j["s1_batch"] = s1_batch;
  j["s2_virtual_batch"] = s2_virtual_batch;
  j["s2_micro_batch"] = s2_micro_batch;
  j["s1_canvas"] = s1_canvas;
  j["s2_canvas"] = s2_canvas;
  j["supervise_padding"] = supervise_padding;
  j["init_seed"] = init_seed;
  return j;
}

ArConfig ArConfig::from_json(const json& j) {
  ArConfig c;
  c.d_model = j.at("d_model").get<int>();
  c.enc_layers = j.at("enc_layers").get<int>();
  c.dec_layers = j.at("dec_layers").get<int>();
  c.heads = j.at("heads").get<int>();
  c.ffn = j.at("ffn").get<int>();
  c.max_context = j.at("max_context").get<int>();
  c.max_text = j.at("max_text").get<int>();
  c.noise_std = j.at("noise_std").get<double>();
  c.s1_noisy_tf = j.at("s1_noisy_tf").get<double>();
  c.s2_noisy_tf = j.at("s2_noisy_tf").get<double>();
  c.lr = j.at("lr").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.s1_iterations = j.at("s1_iterations").get<int>();
  c.s2_iterations = j.at("s2_iterations").get<int>();
  c.s1_batch = j.at("s1_batch").get<int>();
  c.s2_virtual_batch = j.at("s2_virtual_batch").get<int>();
  c.s2_micro_batch = j.at("s2_micro_batch").get<int>();
  c.s1_canvas = j.at("s1_canvas").get<int>();
  c.s2_canvas = j.at("s2_canvas").get<int>();
  c.supervise_padding = j.at("supervise_padding").get<bool>();
  c.init_seed = j.at("init_seed").get<std::uint64_t>();
  return c;
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

ArGenerator::ArGenerator(const ArConfig& cfg, int vocab) : cfg_(cfg), vocab_(vocab) {
  if (vocab < 2) fail(ErrorClass::training, "generator needs a vocabulary");
  Rng rng(cfg.init_seed);
  char_embed_ = params_.add("char_embed", nn::parameter(Shape::of({vocab, cfg.d_model}), rng, 0.02));
  enc_pos_ = params_.add("enc_pos", nn::parameter(Shape::of({cfg.max_text, cfg.d_model}), rng, 0.02));
  encoder_ = nn::TransformerStack::create(params_, "encoder", cfg.enc_layers, cfg.d_model, cfg.heads, cfg.ffn,
                                          false, rng);
  sos_ = params_.add("sos", nn::parameter(Shape::of({1, cfg.d_model}), rng, 0.02));
  dec_pos_ = params_.add("dec_pos", nn::parameter(Shape::of({cfg.max_context, cfg.d_model}), rng, 0.02));
  adapter_in_ = nn::Linear::create(params_, "adapter_in", 8, cfg.d_model, rng);
  adapter_out_ = nn::Linear::create(params_, "adapter_out", cfg.d_model, 8, rng);
  decoder_ = nn::TransformerStack::create(params_, "decoder", cfg.dec_layers, cfg.d_model, cfg.heads, cfg.ffn,
                                          true, rng);
}

Var ArGenerator::encode_text_graph(const std::vector<int>& token_ids) const {
  if (token_ids.empty()) fail(ErrorClass::inference, "encode_text: empty content is rejected");
  if (static_cast<int>(token_ids.size()) > cfg_.max_text) {
    fail(ErrorClass::inference, "encode_text: " + std::to_string(token_ids.size()) + " tokens exceeds max_text " +
                                    std::to_string(cfg_.max_text));
  }
  for (int id : token_ids) {
    if (id < 0 || id >= vocab_) fail(ErrorClass::inference, "encode_text: token id out of vocabulary");
  }
  Var x = nn::gather_rows(char_embed_, token_ids);
  x = nn::add(x, nn::slice_rows(enc_pos_, 0, static_cast<int>(token_ids.size())));
  return encoder_(x, nullptr, false);
}

Var ArGenerator::decode_graph(const Var* inputs, const Var& memory) const {
  const int m = inputs ? (*inputs)->shape.rows() : 0;
  if (m + 1 > cfg_.max_context) {
    fail(ErrorClass::inference, "decoder context " + std::to_string(m + 1) + " exceeds max_context " +
                                    std::to_string(cfg_.max_context));
  }
  Var seq;
  if (m == 0) {
    seq = sos_;
  } else {
    if ((*inputs)->shape.cols() != 8) fail(ErrorClass::training, "decode_graph: inputs must be [m, 8]");
    seq = nn::concat_rows({sos_, adapter_in_(*inputs)});
  }
  seq = nn::add(seq, nn::slice_rows(dec_pos_, 0, m + 1));
  Var h = decoder_(seq, &memory, true);
  return adapter_out_(h);  // [m+1, 8]
}

std::array<double, 8> ArGenerator::predict_next(const vae::LatentSequence& context,
                                                const std::vector<int>& text_ids) const {
  Var memory = encode_text_graph(text_ids);
  Var out;
  if (context.count == 0) {
    out = decode_graph(nullptr, memory);
  } else {
    Arr flat = Eigen::Map<const Arr>(context.data.data(), static_cast<Eigen::Index>(context.data.size()));
    Var in = nn::constant(Shape::of({context.count, 8}), flat);
    out = decode_graph(&in, memory);
  }
  std::array<double, 8> v{};
  const int last = out->shape.rows() - 1;
  for (int i = 0; i < 8; ++i) v[static_cast<std::size_t>(i)] = out->value(static_cast<Eigen::Index>(last) * 8 + i);
  return v;
}

void ArGenerator::freeze() {
  for (auto& [name, p] : params_.entries()) p->requires_grad = false;
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

ArTrainer::ArTrainer(ArGenerator& model, std::uint64_t seed)
    : model_(model),
      optim_(model.params(), {model.config().lr, 0.9, 0.999, 1e-8, model.config().weight_decay}),
      rng_(Rng(seed).child("ar_trainer")) {}

Var ArTrainer::example_loss(const ArExample& ex, double noisy_tf_prob, bool with_noise) {
  const int w = ex.latents.count;
  if (w < 1) fail(ErrorClass::training, "ar example with no latents");
  if (static_cast<int>(ex.supervised.size()) != w) fail(ErrorClass::training, "ar example mask size mismatch");

  // Targets: v_1..v_w. Inputs: v_1..v_{w-1} (SOS is prepended inside).
  Arr target_flat = Eigen::Map<const Arr>(ex.latents.data.data(), static_cast<Eigen::Index>(w) * 8);
  Var targets = nn::constant(Shape::of({w, 8}), target_flat);

  Arr input_flat = Arr::Zero(static_cast<Eigen::Index>(std::max(0, w - 1)) * 8);
  for (Eigen::Index i = 0; i < input_flat.size(); ++i) {
    input_flat(i) = ex.latents.data[static_cast<std::size_t>(i)];
    if (with_noise && model_.config().noise_std > 0.0) {
      input_flat(i) += rng_.normal() * model_.config().noise_std;
    }
  }

  Var memory = model_.encode_text_graph(ex.token_ids);

  // Noisy teacher forcing: a first pass (no grad) supplies the model's own
  // previous predictions; selected positions of the input are replaced.
  if (noisy_tf_prob > 0.0 && w > 1) {
    std::vector<int> flips;
    for (int t = 0; t < w - 1; ++t) {
      if (rng_.bernoulli(noisy_tf_prob)) flips.push_back(t);
    }
    if (!flips.empty()) {
      Var first_in = nn::constant(Shape::of({w - 1, 8}), input_flat);
      Var first_out = model_.decode_graph(&first_in, memory);  // [w, 8]; row t predicts v_{t+1}
      for (int t : flips) {
        // input position t carries v_{t+1}; the model's own estimate of
        // v_{t+1} is first_out row t.
        for (int i = 0; i < 8; ++i) {
          input_flat(static_cast<Eigen::Index>(t) * 8 + i) = first_out->value(static_cast<Eigen::Index>(t) * 8 + i);
        }
      }
    }
  }

  Var out;
  if (w == 1) {
    out = model_.decode_graph(nullptr, memory);
  } else {
    Var in = nn::constant(Shape::of({w - 1, 8}), input_flat);
    out = model_.decode_graph(&in, memory);
  }
  return nn::mse_masked_rows(out, targets, ex.supervised);
}

ArStepStats ArTrainer::step(const std::vector<ArExample>& examples, double noisy_tf_prob) {
  begin_accumulation();
  ArStepStats stats = accumulate(examples, noisy_tf_prob, 1);
  flush();
  return stats;
}

void ArTrainer::begin_accumulation() { model_.params().zero_grad(); }

ArStepStats ArTrainer::accumulate(const std::vector<ArExample>& examples, double noisy_tf_prob,
                                  int total_micro_batches) {
  if (examples.empty()) fail(ErrorClass::training, "ar step with no examples");
  Var total;
  for (const auto& ex : examples) {
    Var l = example_loss(ex, noisy_tf_prob, true);
    total = total ? nn::add(total, l) : l;
  }
  total = nn::mul_scalar(total, 1.0 / static_cast<double>(examples.size() * total_micro_batches));
  const double value = total->value(0) * total_micro_batches;
  if (!std::isfinite(value)) fail(ErrorClass::training, "ar loss non-finite");
  nn::backward(total);
  ArStepStats stats;
  stats.mse = value;
  stats.positions = 0;
  for (const auto& ex : examples) {
    for (bool b : ex.supervised) stats.positions += b ? 1 : 0;
  }
  return stats;
}

void ArTrainer::flush() { optim_.step(); }

double ArTrainer::evaluate(const std::vector<ArExample>& examples) const {
  if (examples.empty()) fail(ErrorClass::training, "ar evaluate with no examples");
  double acc = 0.0;
  auto* self = const_cast<ArTrainer*>(this);
  for (const auto& ex : examples) {
    Var l = self->example_loss(ex, 0.0, false);
    acc += l->value(0);
  }
  return acc / static_cast<double>(examples.size());
}

}  // namespace stylus::ar
