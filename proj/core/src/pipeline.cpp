#include "stylus/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <unordered_map>

#include "stylus/checkpoint.hpp"
#include "stylus/common.hpp"
#include "stylus/png_io.hpp"

namespace stylus::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using ordered_json = nlohmann::ordered_json;

namespace {

text::CharSet load_charset(const RunConfig& cfg) {
  return text::CharSet::from_file(cfg.corpus().at("charset_file").get<std::string>());
}

raster::FontLibrary load_fonts(const RunConfig& cfg, const text::CharSet& charset) {
  return raster::FontLibrary::load_dir(cfg.raster_section().at("fonts_dir").get<std::string>(), charset,
                                       cfg.raster_section().at("synth_slant").get<double>(),
                                       cfg.raster_section().at("min_fonts_per_category").get<int>());
}

std::vector<std::u32string> load_corpus_documents(const RunConfig& cfg) {
  const std::string dir = cfg.corpus().at("corpus_dir").get<std::string>();
  if (!fs::is_directory(dir)) fail(ErrorClass::corpus, "corpus directory not found: " + dir);
  std::vector<std::string> paths;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".txt" && e.path().filename() != "eval_verses.txt") {
      paths.push_back(e.path().string());
    }
  }
  std::sort(paths.begin(), paths.end());
  if (paths.empty()) fail(ErrorClass::corpus, "no .txt documents in " + dir);
  std::vector<std::u32string> docs;
  for (const auto& p : paths) docs.push_back(utf8_decode(read_text_file(p)));
  return docs;
}

std::vector<std::u32string> load_eval_lines(const RunConfig& cfg) {
  const std::string path = cfg.corpus().at("eval_lines_file").get<std::string>();
  std::vector<std::u32string> lines;
  std::istringstream in(read_text_file(path));
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) lines.push_back(utf8_decode(line));
  }
  if (lines.empty()) fail(ErrorClass::corpus, "no eval lines in " + path);
  return lines;
}

void append_log(const std::string& path, const ordered_json& record) {
  std::ofstream f(path, std::ios::app);
  f << record.dump() << '\n';
}

std::vector<int> tokens_of(const std::u32string& s, const text::CharSet& charset, int max_len) {
  std::vector<int> ids;
  ids.reserve(s.size());
  for (char32_t c : s) {
    if (static_cast<int>(ids.size()) >= max_len) break;
    ids.push_back(charset.index_of(c));
  }
  return ids;
}

}  // namespace

// ---------------------------------------------------------------------------
// build-corpus
// ---------------------------------------------------------------------------

void build_corpus(const RunConfig& cfg) {
  const auto charset = load_charset(cfg);
  const auto docs = load_corpus_documents(cfg);
  const auto tables = text::ingest_corpus(docs, charset);
  const auto lexicon = text::build_lexicon(docs, tables);
  fs::create_directories(cfg.corpus_out_dir());
  tables.to_file(cfg.corpus_out_dir() + "/ngrams.tsv");
  lexicon.to_file(cfg.corpus_out_dir() + "/lexicon.tsv");
  std::cout << "corpus: " << docs.size() << " documents, " << lexicon.entries.size() << " distinct words, "
            << tables.u_counts.size() << " unigrams, " << tables.b_counts.size() << " bigrams\n";
}

// ---------------------------------------------------------------------------
// render-dataset
// ---------------------------------------------------------------------------

data::DatasetManifest render_dataset(const RunConfig& cfg) {
  const auto charset = load_charset(cfg);
  const auto fonts = load_fonts(cfg, charset);
  const auto lexicon = text::WeightedLexicon::from_file(cfg.corpus_out_dir() + "/lexicon.tsv");
  const auto pool = raster::BackgroundPool::load_dir(cfg.raster_section().at("backgrounds_dir").get<std::string>());
  const auto recipe = cfg.transform_recipe();
  const auto render = cfg.render_options();

  const json ds = cfg.datastore();
  struct Slice {
    int count, min_words, max_words;
  };
  const Slice slices[] = {
      {ds.at("n_stage1_range").get<int>(), 4, 7},
      {ds.at("n_short_range").get<int>(), 1, 3},
      {ds.at("n_long_range").get<int>(), 8, 32},
  };

  Rng root(cfg.seed());
  Rng line_rng = root.child("lines");
  Rng font_rng = root.child("font_pick");
  data::DatasetWriter writer(cfg.dataset_root(), charset, cfg.hash(), ds.at("val_fraction").get<double>(),
                             ds.at("test_fraction").get<double>());

  int total = 0;
  for (const auto& slice : slices) {
    for (int i = 0; i < slice.count; ++i) {
      const auto line = text::sample_line(lexicon, slice.min_words, slice.max_words, line_rng);
      const auto& font = fonts.fonts()[static_cast<std::size_t>(
          font_rng.uniform_int(0, static_cast<std::int64_t>(fonts.size()) - 1))];
      const std::uint64_t sample_seed = root.child("sample").child(static_cast<std::uint64_t>(total)).next_u64();
      const auto sample = raster::make_sample(line, font, pool, recipe, sample_seed, render);
      writer.append(sample, std::string(raster::to_string(font.category)));
      ++total;
      if (total % 500 == 0) std::cout << "rendered " << total << " samples\n" << std::flush;
    }
  }
  auto manifest = writer.finish();
  std::cout << "dataset: " << manifest.records.size() << " samples at " << cfg.dataset_root() << "\n";

  const auto eval_manifest =
      data::build_eval_sets(fonts, load_eval_lines(cfg), charset, cfg.eval_root(), cfg.eval_build_config());
  std::cout << "eval set: " << eval_manifest.records.size() << " samples, prompts at " << cfg.eval_root()
            << "/prompts.tsv\n";
  return manifest;
}

// ---------------------------------------------------------------------------
// train-aux
// ---------------------------------------------------------------------------

namespace {

Image load_text_image(const data::DatasetManifest& m, const data::SampleRecord& r) {
  return read_png(m.text_path(r)).to_grey();
}

Image random_window(const Image& grey, int width, Rng& rng) {
  Image padded = grey;
  if (padded.width() < width) padded = padded.pad_right(width, 255);
  const int max_x = padded.width() - width;
  const int x0 = max_x > 0 ? static_cast<int>(rng.uniform_int(0, max_x)) : 0;
  return padded.crop(x0, 0, width, padded.height());
}

}  // namespace

AuxReport train_aux(const RunConfig& cfg) {
  const auto charset = load_charset(cfg);
  const auto fonts = load_fonts(cfg, charset);
  const auto manifest = data::read_dataset(cfg.dataset_root());
  fs::create_directories(cfg.ckpt_dir());
  fs::create_directories(cfg.log_dir());

  AuxReport report;
  const json wcfg = cfg.auxnets_section().at("wid");
  const json hcfg = cfg.auxnets_section().at("htr");

  // ---------------- writer-id ----------------
  {
    auxnets::WriterIdConfig mc;
    mc.num_fonts = static_cast<int>(fonts.size());
    mc.stem_channels = wcfg.at("stem_channels").get<int>();
    mc.feature_dim = wcfg.at("feature_dim").get<int>();
    auxnets::WriterIdModel model(mc, cfg.seed() ^ 0x31Du);
    nn::AdamW optim(model.params(), {wcfg.at("lr").get<double>(), 0.9, 0.999, 1e-8, 0.0});

    const auto train_records = manifest.select(data::Split::train);
    auto val_records = manifest.select(data::Split::val);
    if (train_records.empty() || val_records.empty()) fail(ErrorClass::training, "writer-id: empty split");
    if (val_records.size() > 96) val_records.resize(96);

    const int batch = wcfg.at("batch_size").get<int>();
    const int crop_w = wcfg.at("crop_width").get<int>();
    const int eval_every = wcfg.at("eval_every").get<int>();
    const int max_iter = wcfg.at("max_iterations").get<int>();
    const double gate = wcfg.at("gate_accuracy").get<double>();
    Rng rng = Rng(cfg.seed()).child("wid_train");

    auto holdout_accuracy = [&]() {
      int correct = 0;
      for (const auto* r : val_records) {
        Image img = load_text_image(manifest, *r);
        Rng crop_rng(r->seed);  // fixed eval crops
        const Image window = random_window(img, crop_w, crop_rng);
        if (model.predict(window) == r->font_id) ++correct;
      }
      return static_cast<double>(correct) / static_cast<double>(val_records.size());
    };

    for (int iter = 1; iter <= max_iter; ++iter) {
      // batch tensor [B,1,64,crop_w]
      nn::Arr data(static_cast<Eigen::Index>(batch) * 64 * crop_w);
      std::vector<int> labels(static_cast<std::size_t>(batch));
      for (int b = 0; b < batch; ++b) {
        const auto* r = train_records[static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<std::int64_t>(train_records.size()) - 1))];
        const Image window = random_window(load_text_image(manifest, *r), crop_w, rng);
        data.segment(static_cast<Eigen::Index>(b) * 64 * crop_w, static_cast<Eigen::Index>(64) * crop_w) =
            auxnets::image_to_arr(window, 1);
        labels[static_cast<std::size_t>(b)] = r->font_id;
      }
      nn::Var x = nn::constant(nn::Shape::of({batch, 1, 64, crop_w}), data);
      nn::Var loss = nn::cross_entropy_logits(model.logits(x), labels);
      if (!std::isfinite(loss->value(0))) fail(ErrorClass::training, "writer-id loss non-finite");
      model.params().zero_grad();
      nn::backward(loss);
      optim.step();
      report.wid_iterations = iter;

      if (iter % eval_every == 0 || iter == max_iter) {
        report.wid_accuracy = holdout_accuracy();
        append_log(cfg.log_dir() + "/aux_wid.jsonl",
                   {{"iter", iter}, {"loss", loss->value(0)}, {"holdout_accuracy", report.wid_accuracy}});
        std::cout << "wid iter " << iter << " loss " << loss->value(0) << " acc " << report.wid_accuracy << "\n"
                  << std::flush;
        if (report.wid_accuracy >= gate) break;
      }
    }

    json extras;
    extras["holdout_accuracy"] = report.wid_accuracy;
    extras["num_fonts"] = mc.num_fonts;
    nn::Checkpoint::save(cfg.ckpt_dir() + "/wid.ckpt", "writer_id", mc.to_json(), extras, model.params());
  }

  // ---------------- HTR ----------------
  {
    auxnets::HtrConfig mc;
    mc.vocab = static_cast<int>(charset.size());
    mc.d_model = hcfg.at("d_model").get<int>();
    mc.heads = hcfg.at("heads").get<int>();
    mc.layers = hcfg.at("layers").get<int>();
    mc.ffn = hcfg.at("ffn").get<int>();
    mc.max_frames = 512;
    auxnets::HtrModel model(mc, cfg.seed() ^ 0x417u);
    nn::AdamW optim(model.params(), {hcfg.at("lr").get<double>(), 0.9, 0.999, 1e-8, 0.0});

    const int max_width = hcfg.at("max_width").get<int>();
    auto narrow = [&](const std::vector<const data::SampleRecord*>& rs) {
      std::vector<const data::SampleRecord*> out;
      for (const auto* r : rs) {
        if (r->width_px <= max_width) out.push_back(r);
      }
      return out;
    };
    const auto train_records = narrow(manifest.select(data::Split::train));
    auto val_records = narrow(manifest.select(data::Split::val));
    if (train_records.size() < 32 || val_records.empty()) {
      fail(ErrorClass::training, "HTR: not enough records at width <= " + std::to_string(max_width));
    }
    if (val_records.size() > 48) val_records.resize(48);

    const int batch = hcfg.at("batch_size").get<int>();
    const int eval_every = hcfg.at("eval_every").get<int>();
    const int max_iter = hcfg.at("max_iterations").get<int>();
    const double gate = hcfg.at("gate_cer").get<double>();
    Rng rng = Rng(cfg.seed()).child("htr_train");

    auto holdout_cer = [&]() {
      std::size_t dist = 0, len = 0;
      for (const auto* r : val_records) {
        const Image img = load_text_image(manifest, *r);
        const std::u32string ref = utf8_decode(r->text);
        const std::u32string hyp = model.transcribe(img, charset);
        dist += auxnets::levenshtein(hyp, ref);
        len += ref.size();
      }
      return static_cast<double>(dist) / static_cast<double>(std::max<std::size_t>(1, len));
    };

    for (int iter = 1; iter <= max_iter; ++iter) {
      nn::Var total;
      int used = 0;
      for (int b = 0; b < batch; ++b) {
        const auto* r = train_records[static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<std::int64_t>(train_records.size()) - 1))];
        const Image img = load_text_image(manifest, *r);
        nn::Var lp = model.log_probs(auxnets::image_to_var(img, 1));
        std::vector<int> target;
        for (char32_t c : utf8_decode(r->text)) target.push_back(charset.index_of(c));
        nn::Var l = auxnets::ctc_loss(lp, target, mc.vocab);
        if (std::isinf(l->value(0))) continue;
        total = total ? nn::add(total, l) : l;
        ++used;
      }
      if (!total || used == 0) continue;
      total = nn::mul_scalar(total, 1.0 / used);
      if (!std::isfinite(total->value(0))) fail(ErrorClass::training, "HTR loss non-finite");
      model.params().zero_grad();
      nn::backward(total);
      optim.step();
      report.htr_iterations = iter;

      if (iter % eval_every == 0 || iter == max_iter) {
        report.htr_cer = holdout_cer();
        append_log(cfg.log_dir() + "/aux_htr.jsonl",
                   {{"iter", iter}, {"loss", total->value(0)}, {"holdout_cer", report.htr_cer}});
        std::cout << "htr iter " << iter << " loss " << total->value(0) << " cer " << report.htr_cer << "\n"
                  << std::flush;
        if (report.htr_cer <= gate) break;
      }
    }

    json extras;
    extras["holdout_cer"] = report.htr_cer;
    extras["charset"] = utf8_encode(charset.symbols());
    nn::Checkpoint::save(cfg.ckpt_dir() + "/htr.ckpt", "htr", mc.to_json(), extras, model.params());
  }
  return report;
}

// ---------------------------------------------------------------------------
// train-vae
// ---------------------------------------------------------------------------

namespace {

vae::VaeBatch make_vae_batch(const data::DatasetManifest& manifest,
                             const std::vector<const data::SampleRecord*>& records, const text::CharSet& charset,
                             int canvas, int batch, Rng& rng) {
  vae::VaeBatch out;
  for (int b = 0; b < batch; ++b) {
    const auto* r =
        records[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(records.size()) - 1))];
    Image img = read_png(manifest.image_path(*r)).to_rgb();
    Image tgt = read_png(manifest.text_path(*r)).to_grey();
    Image img_c, tgt_c;
    data::fit_to_canvas(img, tgt, canvas, &img_c, &tgt_c, nullptr);
    out.inputs.push_back(std::move(img_c));
    out.targets.push_back(std::move(tgt_c));
    out.font_ids.push_back(r->font_id);
    std::vector<int> ids;
    for (char32_t c : utf8_decode(r->text)) ids.push_back(charset.index_of(c));
    out.token_ids.push_back(std::move(ids));
  }
  return out;
}

}  // namespace

VaeReport train_vae(const RunConfig& cfg) {
  const auto charset = load_charset(cfg);
  const auto manifest = data::read_dataset(cfg.dataset_root());
  fs::create_directories(cfg.ckpt_dir());
  fs::create_directories(cfg.log_dir());

  // Frozen aux models.
  auxnets::WriterIdConfig wc;
  std::shared_ptr<auxnets::WriterIdModel> wid;
  {
    auto peek = nn::Checkpoint::peek(cfg.ckpt_dir() + "/wid.ckpt");
    wc = auxnets::WriterIdConfig::from_json(peek.config);
    wid = std::make_shared<auxnets::WriterIdModel>(wc, 0);
    nn::Checkpoint::load_into(cfg.ckpt_dir() + "/wid.ckpt", wid->params());
    wid->freeze();
  }
  std::shared_ptr<auxnets::HtrModel> htr;
  {
    auto peek = nn::Checkpoint::peek(cfg.ckpt_dir() + "/htr.ckpt");
    htr = std::make_shared<auxnets::HtrModel>(auxnets::HtrConfig::from_json(peek.config), 0);
    nn::Checkpoint::load_into(cfg.ckpt_dir() + "/htr.ckpt", htr->params());
    htr->freeze();
  }

  vae::VaeConfig vc = cfg.vae_config();
  vae::Vae model(vc);
  vae::VaeTrainer trainer(model, wid.get(), htr.get(), cfg.seed());

  // Training pool: short lines that fit the training canvas.
  auto pool = manifest.select(data::Split::train, 1, vc.max_train_words);
  std::vector<const data::SampleRecord*> train_records;
  for (const auto* r : pool) {
    if (r->width_px <= vc.train_canvas) train_records.push_back(r);
  }
  auto val_pool = manifest.select(data::Split::val, 1, vc.max_train_words);
  std::vector<const data::SampleRecord*> val_records;
  for (const auto* r : val_pool) {
    if (r->width_px <= vc.train_canvas) val_records.push_back(r);
  }
  if (train_records.size() < 64 || val_records.empty()) {
    fail(ErrorClass::training, "vae: not enough short samples (have " + std::to_string(train_records.size()) + ")");
  }

  const int eval_batches = cfg.data().at("vae").at("eval_batches").get<int>();
  const int log_every = cfg.data().at("vae").at("log_every").get<int>();

  auto holdout_mae = [&]() {
    double acc = 0.0;
    for (int i = 0; i < eval_batches; ++i) {
      Rng eval_rng = Rng(cfg.seed()).child("vae_eval").child(static_cast<std::uint64_t>(i));
      const auto batch = make_vae_batch(manifest, val_records, charset, vc.train_canvas, vc.batch_size, eval_rng);
      acc += trainer.evaluate(batch).mae;
    }
    return acc / eval_batches;
  };

  VaeReport report;
  report.holdout_mae_initial = holdout_mae();
  std::cout << "vae holdout mae (iteration 0): " << report.holdout_mae_initial << "\n" << std::flush;

  Rng rng = Rng(cfg.seed()).child("vae_batches");
  for (int iter = 1; iter <= vc.iterations; ++iter) {
    const auto batch = make_vae_batch(manifest, train_records, charset, vc.train_canvas, vc.batch_size, rng);
    const auto losses = trainer.step(batch);
    report.iterations = iter;
    if (iter % log_every == 0 || iter == vc.iterations) {
      append_log(cfg.log_dir() + "/vae.jsonl", {{"iter", iter},
                                                {"mae", losses.mae},
                                                {"kl", losses.kl},
                                                {"wid", losses.wid},
                                                {"htr", losses.htr},
                                                {"total", losses.total}});
      std::cout << "vae iter " << iter << " mae " << losses.mae << " kl " << losses.kl << " wid " << losses.wid
                << " htr " << losses.htr << "\n"
                << std::flush;
    }
  }
  report.holdout_mae_final = holdout_mae();
  std::cout << "vae holdout mae (final): " << report.holdout_mae_final << "\n";

  // Padding / character centroids over a spread of training latents.
  vae::LatentCentroids centroids;
  {
    auto all_train = manifest.select(data::Split::train);
    const std::size_t step = std::max<std::size_t>(1, all_train.size() / 200);
    for (std::size_t i = 0; i < all_train.size(); i += step) {
      const auto* r = all_train[i];
      Image img = read_png(manifest.image_path(*r)).to_rgb();
      Image tgt = read_png(manifest.text_path(*r)).to_grey();
      const int encode_w = std::min(img.width(), cfg.ar_config().s2_canvas);
      vae::accumulate_centroids(model, img.crop(0, 0, encode_w, img.height()),
                                tgt.crop(0, 0, encode_w, tgt.height()),
                                static_cast<std::uint8_t>(cfg.inference().at("white_threshold").get<int>()),
                                centroids);
    }
    if (centroids.padding_count == 0 || centroids.character_count == 0) {
      fail(ErrorClass::training, "vae centroids: degenerate label distribution");
    }
    for (auto& v : centroids.padding) v /= static_cast<double>(centroids.padding_count);
    for (auto& v : centroids.character) v /= static_cast<double>(centroids.character_count);
  }

  // Decoded padding latent should be near-white (stop-logic sanity).
  {
    vae::LatentSequence pad_seq = vae::LatentSequence::zeros(8);
    for (int j = 0; j < 8; ++j) {
      for (int i = 0; i < 8; ++i) pad_seq.slice(j)[i] = centroids.padding[static_cast<std::size_t>(i)];
    }
    report.padding_decode_mean = model.decode_raw(pad_seq).mean();
  }

  json extras;
  extras["padding_centroid"] = centroids.padding;
  extras["character_centroid"] = centroids.character;
  extras["padding_count"] = centroids.padding_count;
  extras["character_count"] = centroids.character_count;
  extras["holdout_mae_initial"] = report.holdout_mae_initial;
  extras["holdout_mae_final"] = report.holdout_mae_final;
  extras["padding_decode_mean"] = report.padding_decode_mean;
  nn::Checkpoint::save(cfg.ckpt_dir() + "/vae.ckpt", "vae", vc.to_json(), extras, model.params());
  return report;
}

// ---------------------------------------------------------------------------
// train-ar
// ---------------------------------------------------------------------------

namespace {

// Natural-width latent cache over the frozen VAE (deterministic mean).
class LatentCache {
 public:
  LatentCache(const vae::Vae& model, const data::DatasetManifest& manifest, int max_width)
      : model_(model), manifest_(manifest), max_width_(max_width) {}

  const vae::LatentSequence& get(const data::SampleRecord& r) {
    auto it = cache_.find(r.id);
    if (it != cache_.end()) return it->second;
    Image img = read_png(manifest_.image_path(r)).to_rgb();
    if (img.width() > max_width_) img = img.crop(0, 0, max_width_, img.height());
    const auto posterior = model_.encode(img);
    auto [pos, inserted] = cache_.emplace(r.id, model_.sample_latent(posterior, std::nullopt));
    return pos->second;
  }

 private:
  const vae::Vae& model_;
  const data::DatasetManifest& manifest_;
  int max_width_;
  std::unordered_map<int, vae::LatentSequence> cache_;
};

ar::ArExample make_ar_example(const vae::LatentSequence& natural, const std::vector<int>& tokens, int canvas,
                              const std::array<double, 8>& padding_centroid, bool supervise_padding) {
  ar::ArExample ex;
  const int w_c = canvas / 8;
  ex.token_ids = tokens;
  ex.real_cols.assign(static_cast<std::size_t>(w_c), false);
  if (natural.count >= w_c) {
    ex.latents = natural.head(w_c);
    std::fill(ex.real_cols.begin(), ex.real_cols.end(), true);
  } else {
    ex.latents = natural;
    for (int j = natural.count; j < w_c; ++j) ex.latents.append(padding_centroid.data());
    std::fill(ex.real_cols.begin(), ex.real_cols.begin() + natural.count, true);
  }
  if (supervise_padding) {
    ex.supervised.assign(static_cast<std::size_t>(w_c), true);
  } else {
    ex.supervised = ex.real_cols;
  }
  return ex;
}

struct VaeHandles {
  std::shared_ptr<vae::Vae> model;
  std::array<double, 8> padding_centroid{};
  std::array<double, 8> character_centroid{};
};

VaeHandles load_vae(const RunConfig& cfg) {
  VaeHandles h;
  const std::string path = cfg.ckpt_dir() + "/vae.ckpt";
  auto peek = nn::Checkpoint::peek(path);
  if (peek.kind != "vae") fail(ErrorClass::checkpoint, path + " is not a vae checkpoint");
  h.model = std::make_shared<vae::Vae>(vae::VaeConfig::from_json(peek.config));
  auto loaded = nn::Checkpoint::load_into(path, h.model->params());
  h.model->freeze();
  for (std::size_t i = 0; i < 8; ++i) {
    h.padding_centroid[i] = loaded.extras.at("padding_centroid").at(i).get<double>();
    h.character_centroid[i] = loaded.extras.at("character_centroid").at(i).get<double>();
  }
  return h;
}

}  // namespace

ArReport train_ar(const RunConfig& cfg, const std::string& resume_stage1_from) {
  const auto charset = load_charset(cfg);
  const auto manifest = data::read_dataset(cfg.dataset_root());
  fs::create_directories(cfg.ckpt_dir());
  fs::create_directories(cfg.log_dir());

  VaeHandles vh = load_vae(cfg);
  ar::ArConfig ac = cfg.ar_config();
  ar::ArGenerator model(ac, static_cast<int>(charset.size()));
  ar::ArTrainer trainer(model, cfg.seed());
  LatentCache cache(*vh.model, manifest, ac.s2_canvas);

  ArReport report;
  const int log_every = cfg.data().at("argen").at("log_every").get<int>();

  auto batch_examples = [&](const std::vector<const data::SampleRecord*>& records, int canvas, int count, Rng& rng) {
    std::vector<ar::ArExample> out;
    for (int i = 0; i < count; ++i) {
      const auto* r =
          records[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(records.size()) - 1))];
      out.push_back(make_ar_example(cache.get(*r), tokens_of(utf8_decode(r->text), charset, ac.max_text), canvas,
                                    vh.padding_centroid, ac.supervise_padding));
    }
    return out;
  };

  // ---- stage 1 ----
  if (resume_stage1_from.empty()) {
    const auto s1_records = manifest.select(data::Split::train, 4, 7);
    if (static_cast<int>(s1_records.size()) < ac.s1_batch) fail(ErrorClass::training, "stage 1: not enough records");
    Rng rng = Rng(cfg.seed()).child("ar_stage1");
    for (int iter = 1; iter <= ac.s1_iterations; ++iter) {
      const auto examples = batch_examples(s1_records, ac.s1_canvas, ac.s1_batch, rng);
      const auto stats = trainer.step(examples, ac.s1_noisy_tf);
      report.s1_final_mse = stats.mse;
      report.s1_iterations = iter;
      if (iter % log_every == 0 || iter == ac.s1_iterations) {
        append_log(cfg.log_dir() + "/ar.jsonl", {{"stage", 1}, {"iter", iter}, {"mse", stats.mse}});
        std::cout << "ar stage1 iter " << iter << " mse " << stats.mse << "\n" << std::flush;
      }
    }
    json extras;
    extras["stage"] = "stage1";
    extras["vocab"] = static_cast<int>(charset.size());
    extras["charset"] = utf8_encode(charset.symbols());
    extras["s1_iterations"] = report.s1_iterations;
    nn::Checkpoint::save(cfg.ckpt_dir() + "/ar_stage1.ckpt", "argen", ac.to_json(), extras, model.params());
  } else {
    auto peek = nn::Checkpoint::peek(resume_stage1_from);
    if (peek.kind != "argen") fail(ErrorClass::checkpoint, resume_stage1_from + " is not a generator checkpoint");
    nn::Checkpoint::load_into(resume_stage1_from, model.params());
    report.s1_iterations = 0;
  }

  // ---- stage 2: fresh optimizer state and RNG stream, so a run resumed from
  // the stage-1 checkpoint reproduces the continuous run bit for bit ----
  trainer.reset_optimizer();
  trainer.reseed(cfg.seed() ^ 0x57A6E2ull);
  {
    const auto s2_records = manifest.select(data::Split::train, 1, 32);
    if (static_cast<int>(s2_records.size()) < ac.s2_micro_batch) fail(ErrorClass::training, "stage 2: not enough records");
    Rng rng = Rng(cfg.seed()).child("ar_stage2");
    const int micro_per_step = std::max(1, ac.s2_virtual_batch / ac.s2_micro_batch);
    for (int iter = 1; iter <= ac.s2_iterations; ++iter) {
      trainer.begin_accumulation();
      double mse_acc = 0.0;
      for (int m = 0; m < micro_per_step; ++m) {
        const auto examples = batch_examples(s2_records, ac.s2_canvas, ac.s2_micro_batch, rng);
        mse_acc += trainer.accumulate(examples, ac.s2_noisy_tf, micro_per_step).mse;
      }
      trainer.flush();
      report.s2_final_mse = mse_acc / micro_per_step;
      report.s2_iterations = iter;
      if (iter % 25 == 0 || iter == ac.s2_iterations) {
        append_log(cfg.log_dir() + "/ar.jsonl", {{"stage", 2}, {"iter", iter}, {"mse", report.s2_final_mse}});
        std::cout << "ar stage2 iter " << iter << " mse " << report.s2_final_mse << "\n" << std::flush;
      }
    }
  }

  // held-out teacher-forced MSE at the stage-2 canvas
  {
    const auto val_records = manifest.select(data::Split::val, 1, 32);
    if (!val_records.empty()) {
      Rng rng = Rng(cfg.seed()).child("ar_holdout");
      const auto examples = batch_examples(val_records, ac.s2_canvas, std::min<int>(32, static_cast<int>(val_records.size())), rng);
      report.holdout_mse = trainer.evaluate(examples);
    }
  }

  json extras;
  extras["stage"] = "stage2";
  extras["vocab"] = static_cast<int>(charset.size());
  extras["charset"] = utf8_encode(charset.symbols());
  extras["s1_iterations"] = report.s1_iterations;
  extras["s2_iterations"] = report.s2_iterations;
  extras["holdout_mse"] = report.holdout_mse;
  nn::Checkpoint::save(cfg.ckpt_dir() + "/ar.ckpt", "argen", ac.to_json(), extras, model.params());
  return report;
}

// ---------------------------------------------------------------------------
// Model loading / RealBundle
// ---------------------------------------------------------------------------

RealBundle::RealBundle(std::shared_ptr<const vae::Vae> vae_model, std::shared_ptr<const ar::ArGenerator> generator,
                       std::shared_ptr<const infer::PaddingDetector> detector, text::CharSet charset)
    : vae_(std::move(vae_model)), generator_(std::move(generator)), detector_(std::move(detector)),
      charset_(std::move(charset)) {}

vae::LatentSequence RealBundle::encode_style(const Image& rgb) const {
  return vae_->sample_latent(vae_->encode(rgb), std::nullopt);
}

std::array<double, 8> RealBundle::predict_next(const vae::LatentSequence& context,
                                               const std::u32string& condition_text) const {
  std::vector<int> ids;
  ids.reserve(condition_text.size());
  for (char32_t c : condition_text) {
    if (static_cast<int>(ids.size()) >= generator_->config().max_text) break;
    ids.push_back(charset_.index_of(c));
  }
  return generator_->predict_next(context, ids);
}

Image RealBundle::decode(const vae::LatentSequence& latents) const { return vae_->decode(latents); }

TrainedModels load_models(const RunConfig& cfg, bool need_vae, bool need_aux, bool need_ar,
                          const std::string& ar_ckpt_override) {
  TrainedModels out;
  out.charset = load_charset(cfg);
  if (need_vae) {
    VaeHandles vh = load_vae(cfg);
    out.vae_model = vh.model;
    out.detector = std::make_shared<infer::PaddingDetector>(vh.padding_centroid, vh.character_centroid);
  }
  if (need_aux) {
    {
      const std::string path = cfg.ckpt_dir() + "/wid.ckpt";
      auto peek = nn::Checkpoint::peek(path);
      out.writer_id = std::make_shared<auxnets::WriterIdModel>(auxnets::WriterIdConfig::from_json(peek.config), 0);
      nn::Checkpoint::load_into(path, out.writer_id->params());
      out.writer_id->freeze();
      out.wid_provenance = "wid-lite:" + hex64(out.writer_id->params().value_hash());
    }
    {
      const std::string path = cfg.ckpt_dir() + "/htr.ckpt";
      auto peek = nn::Checkpoint::peek(path);
      out.htr = std::make_shared<auxnets::HtrModel>(auxnets::HtrConfig::from_json(peek.config), 0);
      nn::Checkpoint::load_into(path, out.htr->params());
      out.htr->freeze();
    }
  }
  if (need_ar) {
    const std::string path = ar_ckpt_override.empty() ? cfg.ckpt_dir() + "/ar.ckpt" : ar_ckpt_override;
    auto peek = nn::Checkpoint::peek(path);
    if (peek.kind != "argen") fail(ErrorClass::checkpoint, path + " is not a generator checkpoint");
    const int vocab = nn::Checkpoint::peek(path).extras.at("vocab").get<int>();
    out.generator = std::make_shared<ar::ArGenerator>(ar::ArConfig::from_json(peek.config), vocab);
    nn::Checkpoint::load_into(path, out.generator->params());
    out.generator->freeze();
  }
  return out;
}

// ---------------------------------------------------------------------------
// evaluate / sweep / stats
// ---------------------------------------------------------------------------

metrics::MetricReport evaluate(const RunConfig& cfg, bool self_comparison, const std::string& report_path) {
  const auto models = load_models(cfg, !self_comparison, true, !self_comparison);
  const auto eval_manifest = data::read_dataset(cfg.eval_root());
  const auto prompts = data::read_prompts(cfg.eval_root() + "/prompts.tsv");

  metrics::FeatureEmbedder embedder(models.writer_id, models.wid_provenance);
  std::unique_ptr<RealBundle> bundle;
  metrics::ProtocolModels pm;
  if (!self_comparison) {
    bundle = std::make_unique<RealBundle>(models.vae_model, models.generator, models.detector, models.charset);
    pm.bundle = bundle.get();
  }
  pm.embedder = &embedder;
  pm.recognizer = models.htr.get();
  pm.charset = &models.charset;
  pm.stop_patience = cfg.inference().at("stop_patience").get<int>();
  pm.max_slices = cfg.inference().at("eval_max_slices").get<int>();

  auto report = metrics::run_protocol(pm, eval_manifest, prompts);
  if (!report_path.empty()) {
    report.save(report_path);
    write_text_file(report_path + ".txt", report.table());
  }
  return report;
}

metrics::SweepTables sweep(const RunConfig& cfg) {
  const auto models = load_models(cfg, true, true, true);
  const auto eval_manifest = data::read_dataset(cfg.eval_root());
  const auto prompts = data::read_prompts(cfg.eval_root() + "/prompts.tsv");

  metrics::FeatureEmbedder embedder(models.writer_id, models.wid_provenance);
  RealBundle bundle(models.vae_model, models.generator, models.detector, models.charset);
  metrics::ProtocolModels pm;
  pm.bundle = &bundle;
  pm.embedder = &embedder;
  pm.recognizer = models.htr.get();
  pm.charset = &models.charset;
  pm.stop_patience = cfg.inference().at("stop_patience").get<int>();
  pm.max_slices = cfg.inference().at("eval_max_slices").get<int>();

  metrics::SweepConfig sc;
  sc.output_char_counts.clear();
  for (const auto& v : cfg.evalsuite().at("sweep_output_chars")) sc.output_char_counts.push_back(v.get<int>());
  sc.prompts_per_bucket = cfg.evalsuite().at("sweep_prompts_per_bucket").get<int>();
  sc.min_bucket_size = cfg.evalsuite().at("sweep_min_bucket").get<int>();

  auto tables = metrics::run_sweeps(pm, eval_manifest, prompts, sc);
  fs::create_directories(cfg.out_dir());
  tables.save(cfg.out_dir() + "/sweep_input.tsv", cfg.out_dir() + "/sweep_output.tsv");
  return tables;
}

StopStats stop_statistics(const RunConfig& cfg, const TrainedModels& models, int max_prompts) {
  const auto eval_manifest = data::read_dataset(cfg.eval_root());
  const auto prompts = data::read_prompts(cfg.eval_root() + "/prompts.tsv");
  RealBundle bundle(models.vae_model, models.generator, models.detector, models.charset);

  StopStats stats;
  for (const auto& p : prompts) {
    if (stats.prompts >= max_prompts) break;
    infer::GenerationRequest req;
    req.style_image = read_png(cfg.eval_root() + "/" + p.style_image).to_rgb();
    req.style_text = p.style_text;
    req.out_text = p.out_text;
    req.stop_patience = cfg.inference().at("stop_patience").get<int>();
    req.max_slices = cfg.inference().at("eval_max_slices").get<int>();
    try {
      const auto result = infer::generate(req, bundle);
      ++stats.prompts;
      if (result.stopped_naturally) ++stats.natural_stops;
      stats.mean_content_slices += result.content.count;
    } catch (const Error&) {
      ++stats.prompts;  // zero-content generations count as failures
    }
  }
  if (stats.prompts > 0) {
    stats.natural_rate = static_cast<double>(stats.natural_stops) / stats.prompts;
    stats.mean_content_slices /= stats.prompts;
  }
  return stats;
}

double detector_accuracy(const RunConfig& cfg, const TrainedModels& models, int max_records) {
  const auto manifest = data::read_dataset(cfg.dataset_root());
  const auto records = manifest.select(data::Split::val);
  if (records.empty()) fail(ErrorClass::metric, "detector_accuracy: empty val split");
  const auto threshold = static_cast<std::uint8_t>(cfg.inference().at("white_threshold").get<int>());
  const int canvas = cfg.ar_config().s2_canvas;

  std::int64_t correct = 0, total = 0;
  int used = 0;
  for (const auto* r : records) {
    if (used >= max_records) break;
    ++used;
    Image img = read_png(manifest.image_path(*r)).to_rgb();
    Image tgt = read_png(manifest.text_path(*r)).to_grey();
    Image img_c, tgt_c;
    data::fit_to_canvas(img, tgt, canvas, &img_c, &tgt_c, nullptr);
    const auto latents = models.vae_model->sample_latent(models.vae_model->encode(img_c), std::nullopt);
    for (int j = 0; j < latents.count; ++j) {
      bool white = true;
      for (int x = j * 8; x < (j + 1) * 8 && white; ++x) {
        for (int y = 0; y < tgt_c.height(); ++y) {
          if (tgt_c.at(x, y) < threshold) {
            white = false;
            break;
          }
        }
      }
      const bool predicted = models.detector->is_padding(latents.slice(j));
      if (predicted == white) ++correct;
      ++total;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(std::max<std::int64_t>(1, total));
}

double ar_holdout_mse(const RunConfig& cfg, const TrainedModels& models, int max_examples) {
  const auto charset = models.charset;
  const auto manifest = data::read_dataset(cfg.dataset_root());
  ar::ArConfig ac = cfg.ar_config();
  VaeHandles vh;
  vh.model = models.vae_model;
  // centroids from the detector
  for (std::size_t i = 0; i < 8; ++i) {
    vh.padding_centroid[i] = models.detector->padding_centroid()[i];
  }
  LatentCache cache(*models.vae_model, manifest, ac.s2_canvas);

  const auto val_records = manifest.select(data::Split::val, 1, 32);
  if (val_records.empty()) fail(ErrorClass::metric, "ar_holdout_mse: empty val split");
  Rng rng = Rng(cfg.seed()).child("ar_holdout");
  std::vector<ar::ArExample> examples;
  const int count = std::min<int>(max_examples, static_cast<int>(val_records.size()));
  for (int i = 0; i < count; ++i) {
    const auto* r = val_records[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(val_records.size()) - 1))];
    examples.push_back(make_ar_example(cache.get(*r), tokens_of(utf8_decode(r->text), charset, ac.max_text),
                                       ac.s2_canvas, vh.padding_centroid, ac.supervise_padding));
  }
  ar::ArGenerator& model = const_cast<ar::ArGenerator&>(*models.generator);
  ar::ArTrainer scorer(model, cfg.seed());
  return scorer.evaluate(examples);
}

}  // namespace stylus::pipeline
