#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "helpers.hpp"

#include <fstream>

#include "stylus/dataset.hpp"
#include "stylus/png_io.hpp"

using namespace stylus;
using namespace stylus::data;
using testutil::u32;

namespace {

text::CharSet ascii_charset() {
  std::u32string syms;
  for (char32_t c = 0x20; c < 0x7F; ++c) syms.push_back(c);
  return text::CharSet(syms);
}

const raster::FontLibrary& fonts() {
  static raster::FontLibrary lib =
      raster::FontLibrary::load_dir(testutil::assets_dir() + "/fonts", ascii_charset(), 0.25, 10);
  return lib;
}

std::vector<raster::Sample> make_samples(int count, int min_words, int max_words, std::uint64_t seed) {
  const auto pool = raster::BackgroundPool::load_dir(testutil::assets_dir() + "/backgrounds");
  raster::TransformRecipe recipe;
  text::WeightedLexicon lex;
  for (const char* w : {"pen", "ink", "line", "quill", "paper", "verse", "margin", "story"}) {
    lex.entries.push_back({u32(w), 1.0});
    lex.normalization += 1.0;
  }
  Rng rng(seed);
  std::vector<raster::Sample> out;
  for (int i = 0; i < count; ++i) {
    const auto line = text::sample_line(lex, min_words, max_words, rng);
    const auto& font = fonts().by_id(static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(fonts().size()) - 1)));
    out.push_back(raster::make_sample(line, font, pool, recipe, rng.next_u64()));
  }
  return out;
}

}  // namespace

TEST_CASE("write-then-read round trip is bit-exact") {
  testutil::TempDir tmp("roundtrip");
  const auto samples = make_samples(10, 1, 4, 11);
  const auto m1 = write_dataset(samples, tmp.sub("ds"), ascii_charset(), "cfg123");
  const auto m2 = read_dataset(tmp.sub("ds"));

  REQUIRE(m2.records.size() == m1.records.size());
  CHECK(m2.charset_utf8 == m1.charset_utf8);
  CHECK(m2.config_hash == "cfg123");
  for (std::size_t i = 0; i < m1.records.size(); ++i) {
    const auto& a = m1.records[i];
    const auto& b = m2.records[i];
    CHECK(a.id == b.id);
    CHECK(a.text == b.text);
    CHECK(a.font_id == b.font_id);
    CHECK(a.width_px == b.width_px);
    CHECK(a.image_hash == b.image_hash);
    // image bytes identical through the round trip
    CHECK(read_binary_file(m1.image_path(a)) == read_binary_file(m2.image_path(b)));
  }
  // manifest file itself is byte-stable when rewritten
  const auto bytes1 = read_text_file(tmp.sub("ds") + "/manifest.jsonl");
  const auto m3 = write_dataset(samples, tmp.sub("ds2"), ascii_charset(), "cfg123");
  static_cast<void>(m3);
  const auto bytes2 = read_text_file(tmp.sub("ds2") + "/manifest.jsonl");
  CHECK(bytes1 == bytes2);
}

TEST_CASE("corrupting an image file is an integrity error naming the record") {
  testutil::TempDir tmp("corrupt");
  const auto samples = make_samples(4, 1, 2, 17);
  const auto m = write_dataset(samples, tmp.sub("ds"), ascii_charset(), "h");
  {
    std::ofstream f(m.image_path(m.records[2]), std::ios::binary | std::ios::trunc);
    f << "not a png";
  }
  try {
    static_cast<void>(read_dataset(tmp.sub("ds")));
    FAIL("expected integrity error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("record 2") != std::string::npos);
  }
}

TEST_CASE("empty sample list still round-trips") {
  testutil::TempDir tmp("empty");
  const auto m = write_dataset({}, tmp.sub("ds"), ascii_charset(), "h");
  CHECK(m.records.empty());
  const auto m2 = read_dataset(tmp.sub("ds"));
  CHECK(m2.records.empty());
}

TEST_CASE("canvas fitting pads narrow images and crops wide ones from the left") {
  SUBCASE("width 760 pads to 768 with a 95-of-96 mask") {
    Image img(760, 64, 3, 10);
    Image tgt(760, 64, 1, 10);
    Image img_c, tgt_c;
    std::vector<bool> mask;
    fit_to_canvas(img, tgt, 768, &img_c, &tgt_c, &mask);
    CHECK(img_c.width() == 768);
    CHECK(tgt_c.width() == 768);
    REQUIRE(mask.size() == 96);
    int real = 0;
    for (bool b : mask) real += b;
    CHECK(real == 95);
    CHECK(mask[94]);
    CHECK_FALSE(mask[95]);
    // padded columns are white
    CHECK(img_c.at(767, 10, 0) == 255);
    CHECK(tgt_c.at(767, 10) == 255);
    // mask column count x 8 equals the unpadded width exactly
    CHECK(real * 8 == 760);
  }
  SUBCASE("width equal to the canvas is untouched, mask all true") {
    Image img(768, 64, 3, 99);
    Image tgt(768, 64, 1, 99);
    Image img_c, tgt_c;
    std::vector<bool> mask;
    fit_to_canvas(img, tgt, 768, &img_c, &tgt_c, &mask);
    CHECK(img_c == img);
    CHECK(tgt_c == tgt);
    for (bool b : mask) CHECK(b);
  }
  SUBCASE("wider images keep the leftmost canvas columns") {
    Image img(900, 64, 3, 255);
    img.at(0, 0, 0) = 1;    // left marker survives
    img.at(800, 0, 0) = 2;  // right marker is cropped away
    Image tgt(900, 64, 1, 255);
    Image img_c, tgt_c;
    std::vector<bool> mask;
    fit_to_canvas(img, tgt, 768, &img_c, &tgt_c, &mask);
    CHECK(img_c.width() == 768);
    CHECK(img_c.at(0, 0, 0) == 1);
    for (bool b : mask) CHECK(b);
  }
}

TEST_CASE("make_batch respects the stage word-count range and is deterministic") {
  testutil::TempDir tmp("batch");
  auto samples = make_samples(24, 1, 3, 23);
  auto more = make_samples(24, 4, 7, 24);
  samples.insert(samples.end(), more.begin(), more.end());
  const auto m = write_dataset(samples, tmp.sub("ds"), ascii_charset(), "h", 0.0, 0.0);

  const auto spec = BatchSpec::stage1(768, 6);
  const auto batch = make_batch(m, spec, ascii_charset(), 99);
  REQUIRE(batch.record_ids.size() == 6);
  for (int id : batch.record_ids) {
    CHECK(m.records[static_cast<std::size_t>(id)].word_count >= 4);
    CHECK(m.records[static_cast<std::size_t>(id)].word_count <= 7);
  }
  for (const auto& img : batch.images) CHECK(img.width() == 768);
  for (const auto& mask : batch.valid_cols) CHECK(mask.size() == 96);

  const auto batch2 = make_batch(m, spec, ascii_charset(), 99);
  CHECK(batch.record_ids == batch2.record_ids);
  CHECK(batch.images[0] == batch2.images[0]);

  // insufficient records in range
  BatchSpec wide = BatchSpec::stage2(768, 64);
  CHECK_THROWS_AS(static_cast<void>(make_batch(m, wide, ascii_charset(), 1)), Error);
}

TEST_CASE("batch spec validation") {
  BatchSpec s = BatchSpec::stage1();
  s.canvas_width = 770;  // not divisible by 8
  CHECK_THROWS_AS(s.validate(), Error);
  CHECK(BatchSpec::stage1().min_words == 4);
  CHECK(BatchSpec::stage1().max_words == 7);
  CHECK(BatchSpec::stage2().min_words == 1);
  CHECK(BatchSpec::stage2().max_words == 32);
  CHECK(BatchSpec::stage2().canvas_width == 2048);
}

TEST_CASE("prompt files round-trip bit-exactly") {
  testutil::TempDir tmp("prompts");
  const std::vector<PromptTriple> prompts = {
      {"images/0_I.png", "the quick brown", "lazy dogs everywhere"},
      {"images/7_I.png", "ink and paper", "a margin of verse"},
  };
  write_prompts(tmp.sub("p.tsv"), prompts);
  const auto loaded = read_prompts(tmp.sub("p.tsv"));
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[1].style_image == "images/7_I.png");
  CHECK(loaded[1].style_text == "ink and paper");
  CHECK(loaded[1].out_text == "a margin of verse");
  write_prompts(tmp.sub("p2.tsv"), loaded);
  CHECK(read_text_file(tmp.sub("p.tsv")) == read_text_file(tmp.sub("p2.tsv")));
}

TEST_CASE("eval set construction renders white-background lines for both categories") {
  testutil::TempDir tmp("eval");
  std::vector<std::u32string> lyrics = {
      u32("the kettle hums a tin roof tune"),
      u32("rain writes letters on the lane"),
      u32("count the swallows one by one"),
  };
  EvalBuildConfig cfg;
  cfg.lines_per_font = 1;
  cfg.prompt_count = 8;
  const auto m = build_eval_sets(fonts(), lyrics, ascii_charset(), tmp.sub("eval"), cfg);
  CHECK(m.records.size() == fonts().size());

  bool saw_calligraphy = false, saw_typewritten = false;
  for (const auto& r : m.records) {
    const auto img = read_png(m.image_path(r));
    CHECK(img.height() == 64);
    // white background: the corner pixel is pure white
    CHECK(img.at(img.width() - 1, 0, 0) == 255);
    if (r.font_category == "calligraphy") saw_calligraphy = true;
    if (r.font_category == "typewritten") saw_typewritten = true;
  }
  CHECK(saw_calligraphy);
  CHECK(saw_typewritten);

  const auto prompts = read_prompts(tmp.sub("eval") + "/prompts.tsv");
  CHECK(prompts.size() == 8);
  for (const auto& p : prompts) {
    CHECK_FALSE(p.style_image.empty());
    CHECK_FALSE(p.out_text.empty());
  }
}
