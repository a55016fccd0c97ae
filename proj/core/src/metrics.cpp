#include "stylus/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "stylus/common.hpp"
#include "stylus/png_io.hpp"

namespace stylus::metrics {

// ---------------------------------------------------------------------------
// FeatureEmbedder
// ---------------------------------------------------------------------------

FeatureEmbedder::FeatureEmbedder(std::shared_ptr<const auxnets::WriterIdModel> model, std::string provenance)
    : model_(std::move(model)), provenance_(std::move(provenance)) {
  if (!model_) fail(ErrorClass::metric, "feature embedder needs a model");
}

Eigen::VectorXd FeatureEmbedder::embed(const Image& img) const {
  const auto f = model_->feature_vector(img.to_grey());
  Eigen::VectorXd v(static_cast<Eigen::Index>(f.size()));
  for (std::size_t i = 0; i < f.size(); ++i) v(static_cast<Eigen::Index>(i)) = f[i];
  return v;
}

FeatureMatrix FeatureEmbedder::embed_all(const std::vector<Image>& images) const {
  if (images.empty()) fail(ErrorClass::metric, "embed_all: empty image set");
  FeatureMatrix m(static_cast<Eigen::Index>(images.size()), dim());
  for (std::size_t i = 0; i < images.size(); ++i) {
    m.row(static_cast<Eigen::Index>(i)) = embed(images[i]).transpose();
  }
  return m;
}

// ---------------------------------------------------------------------------
// Crops
// ---------------------------------------------------------------------------

std::vector<Image> extract_crops(const Image& img) {
  std::vector<Image> crops;
  if (img.width() < 64) {
    crops.push_back(img.pad_right(64, 255));
    return crops;
  }
  const int n = img.width() / 64;
  crops.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) crops.push_back(img.crop(i * 64, 0, 64, img.height()));
  return crops;
}

// ---------------------------------------------------------------------------
// Frechet / kernel distances
// ---------------------------------------------------------------------------

namespace {

void mean_cov(const FeatureMatrix& x, Eigen::VectorXd& mu, Eigen::MatrixXd& cov) {
  const Eigen::Index n = x.rows();
  mu = x.colwise().mean();
  const Eigen::MatrixXd centered = x.rowwise() - mu.transpose();
  cov = centered.transpose() * centered / static_cast<double>(n - 1);
}

}  // namespace

double frechet_distance(const FeatureMatrix& a, const FeatureMatrix& b) {
  if (a.cols() != b.cols()) fail(ErrorClass::metric, "frechet_distance: feature dims differ");
  const Eigen::Index d = a.cols();
  if (a.rows() < d + 1) {
    fail(ErrorClass::metric, "frechet_distance: first set has " + std::to_string(a.rows()) +
                                 " samples, needs at least " + std::to_string(d + 1));
  }
  if (b.rows() < d + 1) {
    fail(ErrorClass::metric, "frechet_distance: second set has " + std::to_string(b.rows()) +
                                 " samples, needs at least " + std::to_string(d + 1));
  }
  Eigen::VectorXd mu_a, mu_b;
  Eigen::MatrixXd cov_a, cov_b;
  mean_cov(a, mu_a, cov_a);
  mean_cov(b, mu_b, cov_b);

  // tr((Sa Sb)^{1/2}) = tr((sqrt(Sa) Sb sqrt(Sa))^{1/2}): the inner matrix is
  // symmetric PSD, so a self-adjoint eigendecomposition suffices.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_a(cov_a);
  Eigen::VectorXd root_eigs = es_a.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Eigen::MatrixXd sqrt_a = es_a.eigenvectors() * root_eigs.asDiagonal() * es_a.eigenvectors().transpose();
  Eigen::MatrixXd inner = sqrt_a * cov_b * sqrt_a;
  inner = 0.5 * (inner + inner.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_inner(inner);
  double tr_sqrt = 0.0;
  for (Eigen::Index i = 0; i < d; ++i) {
    const double lambda = es_inner.eigenvalues()(i);
    if (lambda < -1e-8) fail(ErrorClass::metric, "frechet_distance: matrix square root went negative");
    tr_sqrt += std::sqrt(std::max(0.0, lambda));
  }
  const double value = (mu_a - mu_b).squaredNorm() + cov_a.trace() + cov_b.trace() - 2.0 * tr_sqrt;
  return std::max(0.0, value);
}

double kernel_distance(const FeatureMatrix& a, const FeatureMatrix& b) {
  if (a.cols() != b.cols()) fail(ErrorClass::metric, "kernel_distance: feature dims differ");
  const Eigen::Index m = a.rows(), n = b.rows();
  if (m < 2 || n < 2) fail(ErrorClass::metric, "kernel_distance: sets need at least 2 samples");
  const double d = static_cast<double>(a.cols());
  auto kernel = [&](const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) -> Eigen::MatrixXd {
    return ((x * y.transpose()) / d).array().unaryExpr([](double v) {
      const double u = v + 1.0;
      return u * u * u;
    });
  };
  const Eigen::MatrixXd kaa = kernel(a, a);
  const Eigen::MatrixXd kbb = kernel(b, b);
  const Eigen::MatrixXd kab = kernel(a, b);

  const double sum_aa = kaa.sum() - kaa.trace();
  const double sum_bb = kbb.sum() - kbb.trace();
  if (m == n) {
    // Full U-statistic: exactly zero when b duplicates a.
    const double sum_ab = kab.sum() - kab.trace();
    return (sum_aa + sum_bb - 2.0 * sum_ab) / (static_cast<double>(m) * (m - 1));
  }
  return sum_aa / (static_cast<double>(m) * (m - 1)) + sum_bb / (static_cast<double>(n) * (n - 1)) -
         2.0 * kab.sum() / (static_cast<double>(m) * n);
}

// ---------------------------------------------------------------------------
// Binarization
// ---------------------------------------------------------------------------

int otsu_threshold(const Image& grey) {
  const Image g = grey.to_grey();
  std::array<std::int64_t, 256> hist{};
  for (std::uint8_t v : g.data()) ++hist[v];
  const std::int64_t total = static_cast<std::int64_t>(g.data().size());

  std::int64_t sum_all = 0;
  for (int v = 0; v < 256; ++v) sum_all += static_cast<std::int64_t>(v) * hist[static_cast<std::size_t>(v)];

  // Maximize between-class variance over thresholds t: background = values <= t.
  double best_var = -1.0;
  int best_t = 255;
  std::int64_t w0 = 0, sum0 = 0;
  for (int t = 0; t < 256; ++t) {
    w0 += hist[static_cast<std::size_t>(t)];
    sum0 += static_cast<std::int64_t>(t) * hist[static_cast<std::size_t>(t)];
    const std::int64_t w1 = total - w0;
    if (w0 == 0 || w1 == 0) continue;
    const double mu0 = static_cast<double>(sum0) / w0;
    const double mu1 = static_cast<double>(sum_all - sum0) / w1;
    const double var = static_cast<double>(w0) * w1 * (mu0 - mu1) * (mu0 - mu1);
    if (var > best_var) {
      best_var = var;
      best_t = t;
    }
  }
  return best_t;  // constant image: stays 255 -> everything background
}

Image binarize(const Image& img) {
  const Image g = img.to_grey();
  const int t = otsu_threshold(g);
  Image out(g.width(), g.height(), 1);
  if (t == 255) {
    // constant image: all background by convention
    std::fill(out.data().begin(), out.data().end(), 255);
    return out;
  }
  for (std::size_t i = 0; i < g.data().size(); ++i) {
    out.data()[i] = g.data()[i] <= t ? 0 : 255;
  }
  return out;
}

// ---------------------------------------------------------------------------
// CER metrics
// ---------------------------------------------------------------------------

double set_cer(const std::vector<Image>& images, const std::vector<std::u32string>& transcripts,
               const auxnets::HtrModel& recognizer, const text::CharSet& charset) {
  if (images.empty() || images.size() != transcripts.size()) {
    fail(ErrorClass::metric, "set_cer: image/transcript count mismatch");
  }
  std::size_t distance = 0, length = 0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const std::u32string hyp = recognizer.transcribe(images[i], charset);
    distance += auxnets::levenshtein(hyp, transcripts[i]);
    length += transcripts[i].size();
  }
  return static_cast<double>(distance) / static_cast<double>(std::max<std::size_t>(1, length));
}

double delta_cer(const std::vector<Image>& real_set, const std::vector<std::u32string>& real_texts,
                 const std::vector<Image>& generated_set, const std::vector<std::u32string>& generated_texts,
                 const auxnets::HtrModel& recognizer, const text::CharSet& charset) {
  if (real_set.empty() || generated_set.empty()) fail(ErrorClass::metric, "delta_cer: empty set");
  return std::abs(set_cer(real_set, real_texts, recognizer, charset) -
                  set_cer(generated_set, generated_texts, recognizer, charset));
}

// ---------------------------------------------------------------------------
// Intra-image perceptual spread / HWD-lite
// ---------------------------------------------------------------------------

double intra_crop_distance(const Image& img, const FeatureEmbedder& embedder) {
  const auto crops = extract_crops(img);
  if (crops.size() < 2) {
    fail(ErrorClass::metric, "intra_crop_distance: image yields " + std::to_string(crops.size()) +
                                 " crops, needs at least 2");
  }
  const FeatureMatrix f = embedder.embed_all(crops);
  double acc = 0.0;
  int pairs = 0;
  for (Eigen::Index i = 0; i < f.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < f.rows(); ++j) {
      acc += (f.row(i) - f.row(j)).norm();
      ++pairs;
    }
  }
  return acc / pairs;
}

double delta_i_lpips_lite(const Image& real_image, const Image& generated_image, const FeatureEmbedder& embedder) {
  return std::abs(intra_crop_distance(real_image, embedder) - intra_crop_distance(generated_image, embedder));
}

double hwd_lite(const std::vector<Image>& real_set, const std::vector<Image>& generated_set,
                const FeatureEmbedder& style_embedder) {
  if (real_set.empty() || generated_set.empty()) fail(ErrorClass::metric, "hwd_lite: empty set");
  const FeatureMatrix fa = style_embedder.embed_all(real_set);
  const FeatureMatrix fb = style_embedder.embed_all(generated_set);
  const Eigen::VectorXd ma = fa.colwise().mean();
  const Eigen::VectorXd mb = fb.colwise().mean();
  return (ma - mb).norm();
}

// ---------------------------------------------------------------------------
// MetricReport
// ---------------------------------------------------------------------------

json MetricReport::to_json() const {
  json j;
  j["values"] = values;
  j["real_crops"] = real_crops;
  j["generated_crops"] = generated_crops;
  j["embedder_provenance"] = embedder_provenance;
  j["recognizer_provenance"] = recognizer_provenance;
  j["prompt_hash"] = prompt_hash;
  j["wall_seconds"] = wall_seconds;
  return j;
}

MetricReport MetricReport::from_json(const json& j) {
  MetricReport r;
  for (const auto& [k, v] : j.at("values").items()) r.values[k] = v.get<double>();
  r.real_crops = j.at("real_crops").get<int>();
  r.generated_crops = j.at("generated_crops").get<int>();
  r.embedder_provenance = j.at("embedder_provenance").get<std::string>();
  r.recognizer_provenance = j.at("recognizer_provenance").get<std::string>();
  r.prompt_hash = j.at("prompt_hash").get<std::string>();
  r.wall_seconds = j.at("wall_seconds").get<double>();
  return r;
}

void MetricReport::save(const std::string& path) const {
  std::ostringstream out;
  json meta = to_json();
  meta.erase("values");
  out << json{{"meta", meta}}.dump() << '\n';
  // nlohmann emits shortest round-trip doubles, so write->read->write is
  // byte-stable.
  for (const auto& [k, v] : values) {
    out << json{{"metric", k}, {"value", v}}.dump() << '\n';
  }
  write_text_file(path, out.str());
}

MetricReport MetricReport::load(const std::string& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  MetricReport r;
  bool have_meta = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    if (j.contains("meta")) {
      const json& m = j["meta"];
      r.real_crops = m.at("real_crops").get<int>();
      r.generated_crops = m.at("generated_crops").get<int>();
      r.embedder_provenance = m.at("embedder_provenance").get<std::string>();
      r.recognizer_provenance = m.at("recognizer_provenance").get<std::string>();
      r.prompt_hash = m.at("prompt_hash").get<std::string>();
      r.wall_seconds = m.at("wall_seconds").get<double>();
      have_meta = true;
    } else {
      r.values[j.at("metric").get<std::string>()] = j.at("value").get<double>();
    }
  }
  if (!have_meta) fail(ErrorClass::metric, "report missing meta record: " + path);
  return r;
}

std::string MetricReport::table() const {
  std::ostringstream out;
  out << "metric            value\n";
  out << "-----------------------\n";
  char buf[64];
  for (const auto& [k, v] : values) {
    const bool scaled = (k == "kid" || k == "bkid" || k == "delta_i_lpips");
    std::snprintf(buf, sizeof(buf), "%-14s %10.4f%s\n", (k + (scaled ? " x1e3" : "")).c_str(),
                  scaled ? v * 1e3 : v, "");
    out << buf;
  }
  out << "(embedder: " << embedder_provenance << ", recognizer: " << recognizer_provenance << ")\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// score_sets / run_protocol
// ---------------------------------------------------------------------------

MetricReport score_sets(const std::vector<Image>& real_images, const std::vector<std::u32string>& real_texts,
                        const std::vector<Image>& generated_images,
                        const std::vector<std::u32string>& generated_texts, const FeatureEmbedder& embedder,
                        const auxnets::HtrModel& recognizer, const text::CharSet& charset) {
  if (real_images.empty() || generated_images.empty()) fail(ErrorClass::metric, "score_sets: empty set");
  const auto t0 = std::chrono::steady_clock::now();

  std::vector<Image> real_crops, gen_crops;
  std::vector<Image> real_bin_crops, gen_bin_crops;
  for (const auto& img : real_images) {
    for (auto& c : extract_crops(img)) {
      real_bin_crops.push_back(binarize(c));
      real_crops.push_back(std::move(c));
    }
  }
  for (const auto& img : generated_images) {
    for (auto& c : extract_crops(img)) {
      gen_bin_crops.push_back(binarize(c));
      gen_crops.push_back(std::move(c));
    }
  }

  MetricReport report;
  report.real_crops = static_cast<int>(real_crops.size());
  report.generated_crops = static_cast<int>(gen_crops.size());
  report.embedder_provenance = embedder.provenance();
  report.recognizer_provenance = "htr-lite";

  const FeatureMatrix fr = embedder.embed_all(real_crops);
  const FeatureMatrix fg = embedder.embed_all(gen_crops);
  report.values["fid"] = frechet_distance(fr, fg);
  report.values["kid"] = kernel_distance(fr, fg);
  const FeatureMatrix fbr = embedder.embed_all(real_bin_crops);
  const FeatureMatrix fbg = embedder.embed_all(gen_bin_crops);
  report.values["bfid"] = frechet_distance(fbr, fbg);
  report.values["bkid"] = kernel_distance(fbr, fbg);
  report.values["delta_cer"] =
      delta_cer(real_images, real_texts, generated_images, generated_texts, recognizer, charset);
  report.values["hwd_lite"] = hwd_lite(real_images, generated_images, embedder);

  // Intra-image spread needs >= 2 crops; images too narrow are skipped.
  double intra_real = 0.0, intra_gen = 0.0;
  int n_real = 0, n_gen = 0;
  for (const auto& img : real_images) {
    if (img.width() >= 128) {
      intra_real += intra_crop_distance(img, embedder);
      ++n_real;
    }
  }
  for (const auto& img : generated_images) {
    if (img.width() >= 128) {
      intra_gen += intra_crop_distance(img, embedder);
      ++n_gen;
    }
  }
  if (n_real > 0 && n_gen > 0) {
    report.values["delta_i_lpips"] = std::abs(intra_real / n_real - intra_gen / n_gen);
  }

  const auto t1 = std::chrono::steady_clock::now();
  report.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
  return report;
}

MetricReport run_protocol(const ProtocolModels& models, const data::DatasetManifest& eval_manifest,
                          const std::vector<data::PromptTriple>& prompts) {
  if (!models.embedder || !models.recognizer || !models.charset) {
    fail(ErrorClass::metric, "run_protocol: models incomplete");
  }
  if (prompts.empty()) fail(ErrorClass::metric, "run_protocol: no prompts");
  if (eval_manifest.records.empty()) fail(ErrorClass::metric, "run_protocol: empty eval set");

  std::vector<Image> real_images;
  std::vector<std::u32string> real_texts;
  for (const auto& r : eval_manifest.records) {
    real_images.push_back(read_png(eval_manifest.image_path(r)));
    real_texts.push_back(utf8_decode(r.text));
  }

  std::vector<Image> gen_images;
  std::vector<std::u32string> gen_texts;
  if (models.bundle == nullptr) {
    // Self-comparison: the generated set is the real set, byte for byte.
    gen_images = real_images;
    gen_texts = real_texts;
  } else {
    for (const auto& p : prompts) {
      infer::GenerationRequest req;
      req.style_image = read_png(eval_manifest.root + "/" + p.style_image).to_rgb();
      req.style_text = p.style_text;
      req.out_text = p.out_text;
      req.stop_patience = models.stop_patience;
      req.max_slices = models.max_slices;
      const auto result = infer::generate(req, *models.bundle);
      gen_images.push_back(result.image);
      gen_texts.push_back(utf8_decode(p.out_text));
    }
  }

  MetricReport report =
      score_sets(real_images, real_texts, gen_images, gen_texts, *models.embedder, *models.recognizer, *models.charset);
  std::string prompt_blob;
  for (const auto& p : prompts) prompt_blob += p.style_image + "\t" + p.style_text + "\t" + p.out_text + "\n";
  report.prompt_hash = hex64(fnv1a(prompt_blob));
  return report;
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

std::vector<int> input_bucket_centers() {
  std::vector<int> centers;
  for (int c = 125; c <= 1025; c += 50) centers.push_back(c);
  return centers;
}

bool bucket_contains(int center, int width_px, int half_width) {
  return std::abs(width_px - center) <= half_width;
}

void SweepTables::save(const std::string& input_path, const std::string& output_path) const {
  std::ostringstream a;
  for (const auto& row : by_input_width) a << row.center << '\t' << row.fid << '\n';
  write_text_file(input_path, a.str());
  std::ostringstream b;
  for (const auto& row : by_output_chars) b << row.char_count << '\t' << row.fid << '\t' << row.cer << '\n';
  write_text_file(output_path, b.str());
}

SweepTables run_sweeps(const ProtocolModels& models, const data::DatasetManifest& eval_manifest,
                       const std::vector<data::PromptTriple>& prompts, const SweepConfig& cfg) {
  if (!models.bundle || !models.embedder || !models.recognizer || !models.charset) {
    fail(ErrorClass::metric, "run_sweeps: models incomplete");
  }
  if (prompts.empty()) fail(ErrorClass::metric, "run_sweeps: missing prompts");

  // Real crop features once.
  std::vector<Image> real_images;
  for (const auto& r : eval_manifest.records) real_images.push_back(read_png(eval_manifest.image_path(r)));
  std::vector<Image> real_crops;
  for (const auto& img : real_images) {
    for (auto& c : extract_crops(img)) real_crops.push_back(std::move(c));
  }
  const FeatureMatrix fr = models.embedder->embed_all(real_crops);

  auto generate_one = [&](const data::PromptTriple& p, const std::string& out_text) {
    infer::GenerationRequest req;
    req.style_image = read_png(eval_manifest.root + "/" + p.style_image).to_rgb();
    req.style_text = p.style_text;
    req.out_text = out_text;
    req.stop_patience = models.stop_patience;
    req.max_slices = models.max_slices;
    return infer::generate(req, *models.bundle);
  };

  SweepTables tables;

  // ---- input-width sweep: bucket prompts by style image width ----
  for (int center : input_bucket_centers()) {
    std::vector<Image> gen_images;
    int used = 0;
    for (const auto& p : prompts) {
      if (used >= cfg.prompts_per_bucket) break;
      const Image style = read_png(eval_manifest.root + "/" + p.style_image);
      if (!bucket_contains(center, style.width())) continue;
      gen_images.push_back(generate_one(p, p.out_text).image);
      ++used;
    }
    if (static_cast<int>(gen_images.size()) < cfg.min_bucket_size) continue;
    std::vector<Image> gen_crops;
    for (const auto& img : gen_images) {
      for (auto& c : extract_crops(img)) gen_crops.push_back(std::move(c));
    }
    const FeatureMatrix fg = models.embedder->embed_all(gen_crops);
    if (fg.rows() < fg.cols() + 1) continue;  // covariance rank guard
    InputSweepRow row;
    row.center = center;
    row.count = static_cast<int>(gen_images.size());
    row.fid = frechet_distance(fr, fg);
    tables.by_input_width.push_back(row);
  }

  // ---- output-length sweep: rebuild T_out at the requested char count ----
  // Word pool from the prompt texts themselves.
  std::vector<std::u32string> word_pool;
  for (const auto& p : prompts) {
    for (auto& w : split_words(utf8_decode(p.out_text))) word_pool.push_back(std::move(w));
  }
  if (word_pool.empty()) fail(ErrorClass::metric, "run_sweeps: prompts contain no words");

  for (int chars : cfg.output_char_counts) {
    std::vector<Image> gen_images;
    std::vector<std::u32string> gen_texts;
    Rng rng(fnv1a("output_sweep") ^ static_cast<std::uint64_t>(chars));
    for (int i = 0; i < cfg.prompts_per_bucket && i < static_cast<int>(prompts.size()); ++i) {
      // Build a text of exactly `chars` characters from pool words.
      std::u32string text;
      while (static_cast<int>(text.size()) < chars) {
        if (!text.empty()) text.push_back(U' ');
        text += word_pool[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(word_pool.size()) - 1))];
      }
      text.resize(static_cast<std::size_t>(chars));
      if (text.back() == U' ') text.back() = U'a';
      const auto& p = prompts[static_cast<std::size_t>(i)];
      auto result = generate_one(p, utf8_encode(text));
      gen_images.push_back(result.image);
      gen_texts.push_back(text);
    }
    if (static_cast<int>(gen_images.size()) < cfg.min_bucket_size) continue;
    std::vector<Image> gen_crops;
    for (const auto& img : gen_images) {
      for (auto& c : extract_crops(img)) gen_crops.push_back(std::move(c));
    }
    const FeatureMatrix fg = models.embedder->embed_all(gen_crops);
    if (fg.rows() < fg.cols() + 1) continue;
    OutputSweepRow row;
    row.char_count = chars;
    row.count = static_cast<int>(gen_images.size());
    row.fid = frechet_distance(fr, fg);
    row.cer = set_cer(gen_images, gen_texts, *models.recognizer, *models.charset);
    tables.by_output_chars.push_back(row);
  }
  return tables;
}

}  // namespace stylus::metrics
