#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "stylus/image.hpp"
#include "stylus/raster.hpp"
#include "stylus/rng.hpp"
#include "stylus/text.hpp"

namespace stylus::data {

enum class Split { train, val, test };
std::string_view to_string(Split s);
Split split_from_string(std::string_view s);

struct SampleRecord {
  int id = -1;
  std::string image_file;  // composite I, relative to root
  std::string text_file;   // clean I_T, relative to root
  std::string text;        // UTF-8 rendered line
  int font_id = -1;
  std::string font_category;
  int word_count = 0;
  int width_px = 0;
  std::uint64_t seed = 0;
  Split split = Split::train;
  std::uint64_t image_hash = 0;  // FNV over PNG bytes
  std::uint64_t text_hash = 0;
};

struct DatasetManifest {
  int version = 1;
  std::string root;
  std::string charset_utf8;
  std::string config_hash;
  std::vector<SampleRecord> records;

  std::string image_path(const SampleRecord& r) const { return root + "/" + r.image_file; }
  std::string text_path(const SampleRecord& r) const { return root + "/" + r.text_file; }
  std::vector<const SampleRecord*> select(std::optional<Split> split, int min_words = 1, int max_words = 32) const;
};

// Writes images/{id}_I.png + images/{id}_T.png and manifest.jsonl; splits are
// assigned by hashing the record id (90/5/5 by default).
DatasetManifest write_dataset(const std::vector<raster::Sample>& samples, const std::string& root,
                              const text::CharSet& charset, const std::string& config_hash,
                              double val_fraction = 0.05, double test_fraction = 0.05);

// Incremental writer with identical layout, for corpora too large to hold in
// memory at once.
class DatasetWriter {
 public:
  DatasetWriter(std::string root, const text::CharSet& charset, std::string config_hash, double val_fraction = 0.05,
                double test_fraction = 0.05);
  void append(const raster::Sample& sample, const std::string& font_category);
  DatasetManifest finish();

 private:
  DatasetManifest manifest_;
  double val_fraction_, test_fraction_;
};

// Verifies every record's files exist and hash-match; errors name the record.
DatasetManifest read_dataset(const std::string& root);

struct BatchSpec {
  int stage = 1;  // 1 | 2
  int min_words = 4;
  int max_words = 7;
  int canvas_width = 768;
  int batch_size = 8;

  static BatchSpec stage1(int canvas_width = 768, int batch_size = 8);
  static BatchSpec stage2(int canvas_width = 2048, int batch_size = 8);
  void validate() const;
};

struct Batch {
  std::vector<Image> images;                // I at canvas width (RGB)
  std::vector<Image> targets;               // I_T at canvas width (grey)
  std::vector<std::vector<int>> token_ids;  // charset ordinals of the text
  std::vector<std::vector<bool>> valid_cols;  // real-vs-padded, canvas/8 long
  std::vector<int> record_ids;
};

// Pads (white, right) or crops (keep leftmost) each drawn sample to the
// canvas. Deterministic for a given seed.
Batch make_batch(const DatasetManifest& manifest, const BatchSpec& spec, const text::CharSet& charset,
                 std::uint64_t seed, std::optional<Split> split = Split::train);

// Applies the same canvas policy to one already-loaded image pair.
void fit_to_canvas(const Image& image, const Image& target, int canvas_width, Image* image_out, Image* target_out,
                   std::vector<bool>* valid_cols);

struct PromptTriple {
  std::string style_image;  // path relative to the eval root
  std::string style_text;
  std::string out_text;
};

void write_prompts(const std::string& path, const std::vector<PromptTriple>& prompts);
std::vector<PromptTriple> read_prompts(const std::string& path);

struct EvalBuildConfig {
  int lines_per_font = 20;
  int min_words = 3;
  int max_words = 8;
  int prompt_count = 100;
  int prompt_style_words_min = 2;
  int prompt_style_words_max = 5;
  raster::RenderOptions render;
  std::uint64_t seed = 7;
};

// Karaoke-style eval set: lyric-like lines rendered clean on white, one font
// per sample, both categories covered; also emits prompts.tsv with fixed
// (style image, style text, output text) triples.
DatasetManifest build_eval_sets(const raster::FontLibrary& fonts, const std::vector<std::u32string>& lyric_lines,
                                const text::CharSet& charset, const std::string& root, const EvalBuildConfig& cfg);

}  // namespace stylus::data
