#include "stylus/dataset.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "stylus/common.hpp"
#include "stylus/png_io.hpp"

namespace stylus::data {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

Split split_from_string(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  fail(ErrorClass::dataset, "unknown split label: " + std::string(s));
}

std::vector<const SampleRecord*> DatasetManifest::select(std::optional<Split> split, int min_words,
                                                         int max_words) const {
  std::vector<const SampleRecord*> out;
  for (const auto& r : records) {
    if (split && r.split != *split) continue;
    if (r.word_count < min_words || r.word_count > max_words) continue;
    out.push_back(&r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// write / read
// ---------------------------------------------------------------------------

namespace {

Split assign_split(int id, double val_fraction, double test_fraction) {
  // id-hash based, stable under appends
  const std::uint64_t h = fnv1a(&id, sizeof(id));
  const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
  if (u < test_fraction) return Split::test;
  if (u < test_fraction + val_fraction) return Split::val;
  return Split::train;
}

json record_to_json(const SampleRecord& r) {
  json j;
  j["id"] = r.id;
  j["image"] = r.image_file;
  j["text_image"] = r.text_file;
  j["text"] = r.text;
  j["font_id"] = r.font_id;
  j["font_category"] = r.font_category;
  j["word_count"] = r.word_count;
  j["width_px"] = r.width_px;
  j["seed"] = r.seed;
  j["split"] = std::string(to_string(r.split));
  j["image_hash"] = hex64(r.image_hash);
  j["text_hash"] = hex64(r.text_hash);
  return j;
}

SampleRecord record_from_json(const json& j) {
  SampleRecord r;
  r.id = j.at("id").get<int>();
  r.image_file = j.at("image").get<std::string>();
  r.text_file = j.at("text_image").get<std::string>();
  r.text = j.at("text").get<std::string>();
  r.font_id = j.at("font_id").get<int>();
  r.font_category = j.at("font_category").get<std::string>();
  r.word_count = j.at("word_count").get<int>();
  r.width_px = j.at("width_px").get<int>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.split = split_from_string(j.at("split").get<std::string>());
  r.image_hash = std::stoull(j.at("image_hash").get<std::string>(), nullptr, 16);
  r.text_hash = std::stoull(j.at("text_hash").get<std::string>(), nullptr, 16);
  return r;
}

void write_manifest_file(const DatasetManifest& m) {
  std::ostringstream out;
  json header;
  header["version"] = m.version;
  header["charset"] = m.charset_utf8;
  header["config_hash"] = m.config_hash;
  header["count"] = m.records.size();
  out << header.dump() << '\n';
  for (const auto& r : m.records) out << record_to_json(r).dump() << '\n';
  write_text_file(m.root + "/manifest.jsonl", out.str());
}

std::uint64_t file_hash(const std::string& path) {
  const auto bytes = read_binary_file(path);
  return fnv1a(bytes.data(), bytes.size());
}

}  // namespace

DatasetWriter::DatasetWriter(std::string root, const text::CharSet& charset, std::string config_hash,
                             double val_fraction, double test_fraction)
    : val_fraction_(val_fraction), test_fraction_(test_fraction) {
  manifest_.root = std::move(root);
  manifest_.charset_utf8 = utf8_encode(charset.symbols());
  manifest_.config_hash = std::move(config_hash);
  fs::create_directories(manifest_.root + "/images");
}

void DatasetWriter::append(const raster::Sample& sample, const std::string& font_category) {
  SampleRecord r;
  r.id = static_cast<int>(manifest_.records.size());
  r.image_file = "images/" + std::to_string(r.id) + "_I.png";
  r.text_file = "images/" + std::to_string(r.id) + "_T.png";
  r.text = utf8_encode(sample.line.rendered);
  r.font_id = sample.font_id;
  r.font_category = font_category;
  r.word_count = sample.line.word_count;
  r.width_px = sample.composite_rgb.width();
  r.seed = sample.seed;
  r.split = assign_split(r.id, val_fraction_, test_fraction_);

  write_png(manifest_.image_path(r), sample.composite_rgb);
  write_png(manifest_.text_path(r), sample.text_grey);
  r.image_hash = file_hash(manifest_.image_path(r));
  r.text_hash = file_hash(manifest_.text_path(r));
  manifest_.records.push_back(std::move(r));
}

DatasetManifest DatasetWriter::finish() {
  write_manifest_file(manifest_);
  return manifest_;
}

DatasetManifest write_dataset(const std::vector<raster::Sample>& samples, const std::string& root,
                              const text::CharSet& charset, const std::string& config_hash, double val_fraction,
                              double test_fraction) {
  DatasetWriter writer(root, charset, config_hash, val_fraction, test_fraction);
  for (const auto& s : samples) writer.append(s, "");
  return writer.finish();
}

DatasetManifest read_dataset(const std::string& root) {
  const std::string manifest_path = root + "/manifest.jsonl";
  if (!fs::exists(manifest_path)) fail(ErrorClass::dataset, "no manifest at " + manifest_path);
  std::istringstream in(read_text_file(manifest_path));
  std::string line;
  if (!std::getline(in, line)) fail(ErrorClass::dataset, "empty manifest: " + manifest_path);
  json header = json::parse(line, nullptr, false);
  if (header.is_discarded()) fail(ErrorClass::dataset, "corrupt manifest header: " + manifest_path);

  DatasetManifest m;
  m.root = root;
  m.version = header.at("version").get<int>();
  m.charset_utf8 = header.at("charset").get<std::string>();
  m.config_hash = header.at("config_hash").get<std::string>();
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) fail(ErrorClass::dataset, "corrupt manifest record at line " + std::to_string(lineno));
    m.records.push_back(record_from_json(j));
  }
  if (m.records.size() != header.at("count").get<std::size_t>()) {
    fail(ErrorClass::dataset, "manifest count mismatch in " + manifest_path);
  }

  // Integrity pass: files exist and hashes match.
  for (const auto& r : m.records) {
    for (const auto& [path, expected] :
         {std::pair{m.image_path(r), r.image_hash}, std::pair{m.text_path(r), r.text_hash}}) {
      if (!fs::exists(path)) {
        fail(ErrorClass::dataset, "record " + std::to_string(r.id) + ": missing file " + path);
      }
      if (file_hash(path) != expected) {
        fail(ErrorClass::dataset, "record " + std::to_string(r.id) + ": checksum mismatch for " + path);
      }
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

BatchSpec BatchSpec::stage1(int canvas_width, int batch_size) {
  BatchSpec s;
  s.stage = 1;
  s.min_words = 4;
  s.max_words = 7;
  s.canvas_width = canvas_width;
  s.batch_size = batch_size;
  s.validate();
  return s;
}

BatchSpec BatchSpec::stage2(int canvas_width, int batch_size) {
  BatchSpec s;
  s.stage = 2;
  s.min_words = 1;
  s.max_words = 32;
  s.canvas_width = canvas_width;
  s.batch_size = batch_size;
  s.validate();
  return s;
}

void BatchSpec::validate() const {
  if (stage != 1 && stage != 2) fail(ErrorClass::dataset, "batch stage must be 1 or 2");
  if (canvas_width % 8 != 0) fail(ErrorClass::dataset, "canvas width must be a multiple of 8 for latent alignment");
  if (batch_size < 1) fail(ErrorClass::dataset, "batch size must be positive");
  if (min_words < 1 || min_words > max_words || max_words > 32) fail(ErrorClass::dataset, "invalid word-count range");
}

void fit_to_canvas(const Image& image, const Image& target, int canvas_width, Image* image_out, Image* target_out,
                   std::vector<bool>* valid_cols) {
  if (image.width() != target.width() || image.height() != target.height()) {
    fail(ErrorClass::dataset, "image/target dimension mismatch");
  }
  const int w = image.width();
  if (w >= canvas_width) {
    // keep the leftmost columns: the line prefix carries the most signal
    if (image_out) *image_out = image.crop(0, 0, canvas_width, image.height());
    if (target_out) *target_out = target.crop(0, 0, canvas_width, target.height());
    if (valid_cols) valid_cols->assign(static_cast<std::size_t>(canvas_width / 8), true);
    return;
  }
  if (image_out) *image_out = image.pad_right(canvas_width, 255);
  if (target_out) *target_out = target.pad_right(canvas_width, 255);
  if (valid_cols) {
    valid_cols->assign(static_cast<std::size_t>(canvas_width / 8), false);
    for (int c = 0; c < w / 8; ++c) (*valid_cols)[static_cast<std::size_t>(c)] = true;
  }
}

Batch make_batch(const DatasetManifest& manifest, const BatchSpec& spec, const text::CharSet& charset,
                 std::uint64_t seed, std::optional<Split> split) {
  spec.validate();
  const auto eligible = manifest.select(split, spec.min_words, spec.max_words);
  if (static_cast<int>(eligible.size()) < spec.batch_size) {
    fail(ErrorClass::dataset, "stage " + std::to_string(spec.stage) + " needs " + std::to_string(spec.batch_size) +
                                  " records in range [" + std::to_string(spec.min_words) + "," +
                                  std::to_string(spec.max_words) + "], have " + std::to_string(eligible.size()));
  }
  Rng rng(seed);
  Batch batch;
  for (int i = 0; i < spec.batch_size; ++i) {
    const SampleRecord& r = *eligible[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(eligible.size()) - 1))];
    Image img = read_png(manifest.image_path(r)).to_rgb();
    Image tgt = read_png(manifest.text_path(r)).to_grey();
    Image img_c, tgt_c;
    std::vector<bool> valid;
    fit_to_canvas(img, tgt, spec.canvas_width, &img_c, &tgt_c, &valid);
    batch.images.push_back(std::move(img_c));
    batch.targets.push_back(std::move(tgt_c));
    batch.valid_cols.push_back(std::move(valid));
    std::vector<int> ids;
    ids.reserve(r.text.size());
    for (char32_t c : utf8_decode(r.text)) ids.push_back(charset.index_of(c));
    batch.token_ids.push_back(std::move(ids));
    batch.record_ids.push_back(r.id);
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Prompts & eval sets
// ---------------------------------------------------------------------------

void write_prompts(const std::string& path, const std::vector<PromptTriple>& prompts) {
  std::ostringstream out;
  for (const auto& p : prompts) {
    if (p.style_image.find('\t') != std::string::npos || p.style_text.find('\t') != std::string::npos) {
      fail(ErrorClass::dataset, "prompt fields cannot contain tabs");
    }
    out << p.style_image << '\t' << p.style_text << '\t' << p.out_text << '\n';
  }
  write_text_file(path, out.str());
}

std::vector<PromptTriple> read_prompts(const std::string& path) {
  std::vector<PromptTriple> prompts;
  std::istringstream in(read_text_file(path));
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) {
      fail(ErrorClass::dataset, "malformed prompt at line " + std::to_string(lineno) + " of " + path);
    }
    prompts.push_back({line.substr(0, t1), line.substr(t1 + 1, t2 - t1 - 1), line.substr(t2 + 1)});
  }
  return prompts;
}

DatasetManifest build_eval_sets(const raster::FontLibrary& fonts, const std::vector<std::u32string>& lyric_lines,
                                const text::CharSet& charset, const std::string& root, const EvalBuildConfig& cfg) {
  if (lyric_lines.empty()) fail(ErrorClass::dataset, "build_eval_sets: no lyric lines");
  for (auto cat : {raster::FontCategory::calligraphy, raster::FontCategory::typewritten}) {
    if (fonts.by_category(cat).empty()) {
      fail(ErrorClass::dataset, std::string("build_eval_sets: no fonts in category ") + std::string(raster::to_string(cat)));
    }
  }

  // Pre-tokenize lyric lines into words for line construction.
  std::vector<std::vector<std::u32string>> line_words;
  for (const auto& l : lyric_lines) {
    auto words = split_words(l);
    if (!words.empty()) line_words.push_back(std::move(words));
  }

  Rng rng(cfg.seed);
  DatasetWriter writer(root, charset, "eval", 0.0, 0.0);
  auto build_line = [&](int min_w, int max_w) {
    const auto& words = line_words[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(line_words.size()) - 1))];
    const int want = static_cast<int>(rng.uniform_int(min_w, std::min<std::int64_t>(max_w, 32)));
    std::vector<std::u32string> chosen;
    const int start = words.size() > static_cast<std::size_t>(want)
                          ? static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(words.size()) - want))
                          : 0;
    for (int k = 0; k < want && start + k < static_cast<int>(words.size()); ++k) {
      chosen.push_back(words[static_cast<std::size_t>(start + k)]);
    }
    return text::TextLine::from_words(std::move(chosen));
  };

  for (const auto& font : fonts.fonts()) {
    for (int i = 0; i < cfg.lines_per_font; ++i) {
      const auto line = build_line(cfg.min_words, cfg.max_words);
      raster::Sample s;
      s.line = line;
      s.font_id = font.font_id;
      s.seed = rng.next_u64();
      s.text_grey = raster::render_text(line, font, cfg.render);
      s.background_rgb = Image(s.text_grey.width(), s.text_grey.height(), 3, 255);
      s.composite_rgb = s.text_grey.to_rgb();
      s.alpha = 1.0;
      writer.append(s, std::string(raster::to_string(font.category)));
    }
  }
  DatasetManifest manifest = writer.finish();

  // Fixed prompt triples: style image from the eval set, style text = its
  // transcription, output text = a fresh lyric line.
  std::vector<PromptTriple> prompts;
  Rng prompt_rng = Rng(cfg.seed).child("prompts");
  for (int i = 0; i < cfg.prompt_count; ++i) {
    const SampleRecord& r = manifest.records[static_cast<std::size_t>(
        prompt_rng.uniform_int(0, static_cast<std::int64_t>(manifest.records.size()) - 1))];
    const auto out_line = [&] {
      Rng line_rng = prompt_rng.child(static_cast<std::uint64_t>(i));
      const auto& words = line_words[static_cast<std::size_t>(
          line_rng.uniform_int(0, static_cast<std::int64_t>(line_words.size()) - 1))];
      const int want = static_cast<int>(line_rng.uniform_int(cfg.prompt_style_words_min, cfg.prompt_style_words_max));
      std::vector<std::u32string> chosen;
      for (int k = 0; k < want && k < static_cast<int>(words.size()); ++k) chosen.push_back(words[static_cast<std::size_t>(k)]);
      return text::TextLine::from_words(std::move(chosen));
    }();
    prompts.push_back({r.image_file, r.text, utf8_encode(out_line.rendered)});
  }
  write_prompts(root + "/prompts.tsv", prompts);
  return manifest;
}

}  // namespace stylus::data
