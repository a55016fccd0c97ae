#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "helpers.hpp"

#include <cmath>

#include "stylus/png_io.hpp"
#include "stylus/raster.hpp"

using namespace stylus;
using namespace stylus::raster;
using testutil::u32;

namespace {

text::CharSet ascii_charset() {
  std::u32string syms;
  for (char32_t c = 0x20; c < 0x7F; ++c) syms.push_back(c);
  return text::CharSet(syms);
}

const FontLibrary& fonts() {
  static FontLibrary lib = FontLibrary::load_dir(testutil::assets_dir() + "/fonts", ascii_charset(), 0.25, 10);
  return lib;
}

const FontSpec& mono_font() {
  for (const auto& f : fonts().fonts()) {
    if (f.name == "DejaVuSansMono") return f;
  }
  FAIL("DejaVuSansMono not found");
  return fonts().fonts()[0];
}

text::TextLine line_of(const char* s) { return text::TextLine::from_words(split_words(u32(s))); }

int ink_extent(const Image& img) {
  int first = -1, last = -1;
  for (int x = 0; x < img.width(); ++x) {
    for (int y = 0; y < img.height(); ++y) {
      if (img.at(x, y) < 250) {
        if (first < 0) first = x;
        last = x;
        break;
      }
    }
  }
  return first < 0 ? 0 : last - first + 1;
}

}  // namespace

TEST_CASE("font library loads, covers the charset, and fills both categories") {
  const auto& lib = fonts();
  CHECK(lib.size() >= 10);
  CHECK(lib.by_category(FontCategory::calligraphy).size() >= 10);
  CHECK(lib.by_category(FontCategory::typewritten).size() >= 10);
  // ids are dense and unique
  for (std::size_t i = 0; i < lib.size(); ++i) {
    CHECK(lib.by_id(static_cast<int>(i)).font_id == static_cast<int>(i));
  }
  CHECK_THROWS_AS(lib.by_id(-1), Error);
}

TEST_CASE("render_text produces a 64-high image with ink") {
  const auto img = render_text(line_of("a"), fonts().by_id(0));
  CHECK(img.height() == 64);
  CHECK(img.width() > 0);
  CHECK(img.width() % 8 == 0);
  CHECK(ink_extent(img) > 0);
}

TEST_CASE("render_text is deterministic") {
  const auto a = render_text(line_of("deterministic render"), fonts().by_id(2));
  const auto b = render_text(line_of("deterministic render"), fonts().by_id(2));
  CHECK(a == b);
}

TEST_CASE("monospace advance width scales linearly with repeated characters") {
  // margin 0 and align 1 expose the raw advance-sum width
  RenderOptions opts;
  opts.margin = 0;
  opts.align = 1;
  const auto one = render_text(line_of("a"), mono_font(), opts);
  const auto two = render_text(line_of("aa"), mono_font(), opts);
  CHECK(std::abs(two.width() - 2 * one.width()) <= 1);
}

TEST_CASE("render_text errors name the missing character and the font") {
  text::TextLine line;
  line.words = {std::u32string(1, char32_t(0x0001))};
  line.word_count = 1;
  line.rendered = line.words[0];
  try {
    static_cast<void>(render_text(line, fonts().by_id(0)));
    FAIL("expected missing-glyph error");
  } catch (const Error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("missing glyph") != std::string::npos);
    CHECK(msg.find("font 0") != std::string::npos);
  }
}

TEST_CASE("identity recipe leaves the image bit-identical") {
  TransformRecipe recipe;
  recipe.p_rotation = recipe.p_warp = recipe.p_blur = recipe.p_dilation = recipe.p_jitter = 0.0;
  const auto img = render_text(line_of("identity"), fonts().by_id(1));
  const auto out = apply_text_transforms(img, recipe, 1234);
  CHECK(out == img);
}

TEST_CASE("text transforms are deterministic per seed") {
  TransformRecipe recipe;  // defaults
  const auto img = render_text(line_of("seeded twice"), fonts().by_id(3));
  const auto a = apply_text_transforms(img, recipe, 77);
  const auto b = apply_text_transforms(img, recipe, 77);
  CHECK(a == b);
  const auto c = apply_text_transforms(img, recipe, 78);
  CHECK(a != c);
}

TEST_CASE("transform firing rates track the recipe probabilities") {
  TransformRecipe recipe;  // paper probabilities
  const auto img = render_text(line_of("rate"), fonts().by_id(0));
  const int n = 2000;
  int rot = 0, warp = 0, blur = 0, dil = 0, jit = 0, bg_dil = 0, bg_jit = 0, bg_inv = 0;
  Image bg(img.width(), img.height(), 3, 200);
  for (int s = 0; s < n; ++s) {
    AppliedTransforms applied;
    static_cast<void>(apply_text_transforms(img, recipe, static_cast<std::uint64_t>(s), &applied));
    static_cast<void>(apply_background_transforms(bg, recipe, static_cast<std::uint64_t>(s), &applied));
    rot += applied.rotation;
    warp += applied.warp;
    blur += applied.blur;
    dil += applied.dilation;
    jit += applied.jitter;
    bg_dil += applied.bg_dilation;
    bg_jit += applied.bg_jitter;
    bg_inv += applied.bg_invert;
  }
  auto within = [&](int count, double p) {
    const double sigma = std::sqrt(n * p * (1 - p));
    return std::abs(count - n * p) <= 3.0 * sigma + 1e-9;
  };
  CHECK(warp == n);  // probability 1.0 fires always
  CHECK(within(rot, 0.5));
  CHECK(within(blur, 0.5));
  CHECK(within(dil, 0.1));
  CHECK(within(jit, 0.5));
  CHECK(within(bg_dil, 0.1));
  CHECK(within(bg_jit, 0.5));
  CHECK(within(bg_inv, 0.2));
}

TEST_CASE("composite obeys the linear blend") {
  SUBCASE("all-white text is the identity on the background") {
    Image text(64, 64, 1, 255);
    Image bg(64, 64, 3, 123);
    CHECK(composite(text, bg, 0.7) == bg);
  }
  SUBCASE("alpha 1 black ink lands fully black") {
    Image text(8, 64, 1, 0);
    Image bg(8, 64, 3, 200);
    const auto out = composite(text, bg, 1.0);
    CHECK(out.at(3, 3, 0) == 0);
    CHECK(out.at(3, 3, 2) == 0);
  }
  SUBCASE("alpha 0.5 over value 200 gives 100") {
    Image text(8, 8, 1, 0);
    Image bg(8, 8, 3, 200);
    const auto out = composite(text, bg, 0.5);
    CHECK(out.at(0, 0, 0) == 100);
    CHECK(out.at(0, 0, 1) == 100);
    CHECK(out.at(0, 0, 2) == 100);
  }
  SUBCASE("dimension mismatch is an error") {
    Image text(8, 8, 1, 255);
    Image bg(16, 8, 3, 255);
    CHECK_THROWS_AS(static_cast<void>(composite(text, bg, 0.8)), Error);
  }
}

TEST_CASE("make_sample is deterministic and keeps dimensions aligned") {
  const auto pool = BackgroundPool::load_dir(testutil::assets_dir() + "/backgrounds");
  TransformRecipe recipe;
  const auto line = line_of("three identical runs");
  const auto& font = fonts().by_id(4);
  const auto a = make_sample(line, font, pool, recipe, 991);
  const auto b = make_sample(line, font, pool, recipe, 991);
  CHECK(a.composite_rgb == b.composite_rgb);
  CHECK(a.text_grey == b.text_grey);
  CHECK(a.background_rgb == b.background_rgb);
  CHECK(a.alpha == b.alpha);

  CHECK(a.composite_rgb.height() == 64);
  CHECK(a.composite_rgb.width() == a.text_grey.width());
  CHECK(a.composite_rgb.width() == a.background_rgb.width());
  CHECK(a.composite_rgb.width() % 8 == 0);

  const auto c = make_sample(line, font, pool, recipe, 992);
  CHECK(a.composite_rgb != c.composite_rgb);
}

TEST_CASE("alpha is uniform on [0.5, 1] by KS test") {
  Image solid(128, 160, 3, 180);
  const auto pool = BackgroundPool::from_images({solid});
  TransformRecipe recipe;
  const auto line = line_of("ks");
  const auto& font = fonts().by_id(0);
  std::vector<double> alphas;
  const int n = 1000;
  for (int s = 0; s < n; ++s) {
    alphas.push_back(make_sample(line, font, pool, recipe, 5000 + static_cast<std::uint64_t>(s)).alpha);
  }
  std::sort(alphas.begin(), alphas.end());
  double ks = 0.0;
  for (int i = 0; i < n; ++i) {
    const double cdf = (alphas[static_cast<std::size_t>(i)] - 0.5) / 0.5;
    ks = std::max(ks, std::max(std::abs(cdf - static_cast<double>(i) / n), std::abs(cdf - static_cast<double>(i + 1) / n)));
  }
  // critical value at alpha=0.01: 1.63 / sqrt(n)
  CHECK(ks < 1.63 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("a single solid background makes every crop that color") {
  Image solid(300, 100, 3, 0);
  for (int y = 0; y < solid.height(); ++y) {
    for (int x = 0; x < solid.width(); ++x) {
      solid.at(x, y, 0) = 10;
      solid.at(x, y, 1) = 160;
      solid.at(x, y, 2) = 90;
    }
  }
  const auto pool = BackgroundPool::from_images({solid});
  Rng rng(6);
  const auto crop = pool.random_crop(480, 64, rng);  // wider than the texture: tiling
  for (int x : {0, 120, 310, 479}) {
    CHECK(crop.at(x, 20, 0) == 10);
    CHECK(crop.at(x, 20, 1) == 160);
    CHECK(crop.at(x, 20, 2) == 90);
  }
}

TEST_CASE("synthetic slant variants render differently than their base face") {
  const auto& lib = fonts();
  const FontSpec* base = nullptr;
  const FontSpec* slanted = nullptr;
  for (const auto& f : lib.fonts()) {
    if (f.slant != 0.0) {
      slanted = &f;
      for (const auto& g : lib.fonts()) {
        if (g.slant == 0.0 && g.face == f.face) base = &g;
      }
      break;
    }
  }
  REQUIRE(slanted != nullptr);
  REQUIRE(base != nullptr);
  const auto a = render_text(line_of("slant"), *base);
  const auto b = render_text(line_of("slant"), *slanted);
  CHECK(a != b);
}
