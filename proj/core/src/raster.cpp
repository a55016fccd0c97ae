#include "stylus/raster.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "stylus/common.hpp"
#include "stylus/png_io.hpp"

namespace stylus::raster {

namespace fs = std::filesystem;

std::string_view to_string(FontCategory c) {
  return c == FontCategory::calligraphy ? "calligraphy" : "typewritten";
}

// ---------------------------------------------------------------------------
// FontLibrary
// ---------------------------------------------------------------------------

namespace {

bool looks_italic(const std::string& stem) {
  const auto lower = [&] {
    std::string s = stem;
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
  }();
  return lower.find("italic") != std::string::npos || lower.find("oblique") != std::string::npos ||
         (lower.size() >= 3 && lower.compare(lower.size() - 3, 3, "ita") == 0);
}

bool covers_charset(const tt::TrueTypeFont& face, const text::CharSet& charset, std::string* missing) {
  for (std::size_t i = 0; i < charset.size(); ++i) {
    if (!face.covers(charset.at(i))) {
      if (missing) *missing = utf8_encode(charset.at(i));
      return false;
    }
  }
  return true;
}

}  // namespace

FontLibrary FontLibrary::load_dir(const std::string& dir, const text::CharSet& charset, double synth_slant,
                                  int min_per_category) {
  std::vector<std::string> paths;
  if (!fs::is_directory(dir)) fail(ErrorClass::font, "font directory not found: " + dir);
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".ttf") {
      paths.push_back(entry.path().string());
    }
  }
  std::sort(paths.begin(), paths.end());
  if (paths.empty()) fail(ErrorClass::font, "no .ttf files in " + dir);

  FontLibrary lib;
  std::vector<const FontSpec*> uprights;
  for (const auto& path : paths) {
    auto face = tt::TrueTypeFont::load(path);
    std::string missing;
    if (!covers_charset(*face, charset, &missing)) {
      fail(ErrorClass::font, "font " + path + " lacks glyph for '" + missing + "'");
    }
    FontSpec spec;
    spec.font_id = static_cast<int>(lib.fonts_.size());
    spec.face = face;
    spec.name = fs::path(path).stem().string();
    spec.category = looks_italic(spec.name) ? FontCategory::calligraphy : FontCategory::typewritten;
    lib.fonts_.push_back(std::move(spec));
  }

  // Synthetic oblique variants of upright faces fill up the calligraphy
  // category when the directory alone cannot.
  if (min_per_category > 0 && synth_slant != 0.0) {
    const std::size_t base_count = lib.fonts_.size();
    auto count = [&](FontCategory c) {
      std::size_t n = 0;
      for (const auto& f : lib.fonts_) {
        if (f.category == c) ++n;
      }
      return n;
    };
    for (std::size_t i = 0; i < base_count && count(FontCategory::calligraphy) < static_cast<std::size_t>(min_per_category); ++i) {
      if (lib.fonts_[i].category != FontCategory::typewritten) continue;
      FontSpec variant = lib.fonts_[i];
      variant.font_id = static_cast<int>(lib.fonts_.size());
      variant.slant = synth_slant;
      variant.category = FontCategory::calligraphy;
      variant.name += "-SynthSlant";
      lib.fonts_.push_back(std::move(variant));
    }
    if (count(FontCategory::typewritten) < static_cast<std::size_t>(min_per_category) ||
        count(FontCategory::calligraphy) < static_cast<std::size_t>(min_per_category)) {
      fail(ErrorClass::font, "cannot reach " + std::to_string(min_per_category) + " fonts per category from " + dir);
    }
  }
  return lib;
}

const FontSpec& FontLibrary::by_id(int font_id) const {
  if (font_id < 0 || font_id >= static_cast<int>(fonts_.size())) {
    fail(ErrorClass::font, "unknown font id " + std::to_string(font_id));
  }
  return fonts_[static_cast<std::size_t>(font_id)];
}

std::vector<const FontSpec*> FontLibrary::by_category(FontCategory c) const {
  std::vector<const FontSpec*> out;
  for (const auto& f : fonts_) {
    if (f.category == c) out.push_back(&f);
  }
  return out;
}

// ---------------------------------------------------------------------------
// render_text
// ---------------------------------------------------------------------------

Image render_text(const text::TextLine& line, const FontSpec& font, const RenderOptions& opts) {
  if (line.rendered.empty()) fail(ErrorClass::font, "render_text: empty line");
  if (!font.face) fail(ErrorClass::font, "render_text: font has no face");
  const auto& face = *font.face;
  const double scale = static_cast<double>(opts.em_px) / face.units_per_em();

  // Glyph lookup first so missing glyphs fail before any drawing.
  std::vector<std::uint16_t> glyph_ids;
  glyph_ids.reserve(line.rendered.size());
  double advance_px = 0.0;
  for (char32_t c : line.rendered) {
    const std::uint16_t gid = face.glyph_index(c);
    if (gid == 0) {
      fail(ErrorClass::font,
           "missing glyph for '" + utf8_encode(c) + "' in font " + std::to_string(font.font_id) + " (" + font.name + ")");
    }
    glyph_ids.push_back(gid);
    advance_px += face.advance_width(gid) * scale;
  }

  const double slant_extent = std::abs(font.slant) * face.ascender() * scale;
  int width = static_cast<int>(std::ceil(advance_px + slant_extent)) + 2 * opts.margin;
  width = std::max(width, 8);
  width = (width + opts.align - 1) / opts.align * opts.align;

  Image canvas(width, opts.height, 1, 255);
  // Center the ascender..descender band vertically.
  const double asc = face.ascender() * scale;
  const double desc = -face.descender() * scale;  // positive
  const double baseline = (opts.height - (asc + desc)) / 2.0 + asc;

  tt::Placement place;
  place.scale = scale;
  place.slant = font.slant;
  place.baseline_y = baseline;
  place.origin_x = opts.margin;
  for (std::size_t i = 0; i < glyph_ids.size(); ++i) {
    const auto outline = face.outline(glyph_ids[i]);
    tt::rasterize_outline(outline, place, canvas);
    place.origin_x += outline.advance * scale;
  }
  return canvas;
}

// ---------------------------------------------------------------------------
// Transforms
// ---------------------------------------------------------------------------

void TransformRecipe::validate() const {
  const double ps[] = {p_rotation, p_warp, p_blur, p_dilation, p_jitter, p_bg_dilation, p_bg_jitter, p_bg_invert};
  for (double p : ps) {
    if (p < 0.0 || p > 1.0) fail(ErrorClass::config, "transform probability outside [0,1]");
  }
  if (!(0.5 <= alpha_min && alpha_min <= alpha_max && alpha_max <= 1.0)) {
    fail(ErrorClass::config, "alpha range must sit inside [0.5, 1]");
  }
}

namespace {

double sample_bilinear(const Image& img, double x, double y, int c, double fill) {
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const double fx = x - x0, fy = y - y0;
  auto px = [&](int xi, int yi) -> double {
    if (xi < 0 || yi < 0 || xi >= img.width() || yi >= img.height()) return fill;
    return img.at(xi, yi, c);
  };
  const double top = px(x0, y0) * (1 - fx) + px(x0 + 1, y0) * fx;
  const double bot = px(x0, y0 + 1) * (1 - fx) + px(x0 + 1, y0 + 1) * fx;
  return top * (1 - fy) + bot * fy;
}

Image rotate_about_center(const Image& img, double degrees, double fill) {
  const double rad = degrees * 3.14159265358979323846 / 180.0;
  const double ca = std::cos(rad), sa = std::sin(rad);
  const double cx = (img.width() - 1) / 2.0, cy = (img.height() - 1) / 2.0;
  Image out(img.width(), img.height(), img.channels());
  for (int y = 0; y < out.height(); ++y) {
    for (int x = 0; x < out.width(); ++x) {
      // inverse map: rotate destination back into source
      const double dx = x - cx, dy = y - cy;
      const double sx = ca * dx + sa * dy + cx;
      const double sy = -sa * dx + ca * dy + cy;
      for (int c = 0; c < img.channels(); ++c) {
        out.at(x, y, c) = static_cast<std::uint8_t>(std::lround(std::clamp(sample_bilinear(img, sx, sy, c, fill), 0.0, 255.0)));
      }
    }
  }
  return out;
}

// 4-corner jitter implemented as the homography mapping jittered corners back
// onto the originals.
Image warp_corners(const Image& img, const double jx[4], const double jy[4], double fill) {
  const double w = img.width() - 1.0, h = img.height() - 1.0;
  // destination corners (jittered)
  const double dst[4][2] = {{0 + jx[0], 0 + jy[0]}, {w + jx[1], 0 + jy[1]}, {w + jx[2], h + jy[2]}, {0 + jx[3], h + jy[3]}};
  const double src[4][2] = {{0, 0}, {w, 0}, {w, h}, {0, h}};

  // Solve the 8-dof homography dst -> src with Gaussian elimination.
  double a[8][9] = {};
  for (int i = 0; i < 4; ++i) {
    const double X = dst[i][0], Y = dst[i][1], x = src[i][0], y = src[i][1];
    double* r1 = a[2 * i];
    double* r2 = a[2 * i + 1];
    r1[0] = X; r1[1] = Y; r1[2] = 1; r1[6] = -X * x; r1[7] = -Y * x; r1[8] = x;
    r2[3] = X; r2[4] = Y; r2[5] = 1; r2[6] = -X * y; r2[7] = -Y * y; r2[8] = y;
  }
  for (int col = 0; col < 8; ++col) {
    int piv = col;
    for (int r = col + 1; r < 8; ++r) {
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    }
    std::swap(a[col], a[piv]);
    if (std::abs(a[col][col]) < 1e-12) fail(ErrorClass::image, "degenerate warp");
    for (int r = 0; r < 8; ++r) {
      if (r == col) continue;
      const double f = a[r][col] / a[col][col];
      for (int k = col; k < 9; ++k) a[r][k] -= f * a[col][k];
    }
  }
  double hm[9];
  for (int i = 0; i < 8; ++i) hm[i] = a[i][8] / a[i][i];
  hm[8] = 1.0;

  Image out(img.width(), img.height(), img.channels());
  for (int y = 0; y < out.height(); ++y) {
    for (int x = 0; x < out.width(); ++x) {
      const double d = hm[6] * x + hm[7] * y + hm[8];
      const double sx = (hm[0] * x + hm[1] * y + hm[2]) / d;
      const double sy = (hm[3] * x + hm[4] * y + hm[5]) / d;
      for (int c = 0; c < img.channels(); ++c) {
        out.at(x, y, c) = static_cast<std::uint8_t>(std::lround(std::clamp(sample_bilinear(img, sx, sy, c, fill), 0.0, 255.0)));
      }
    }
  }
  return out;
}

Image gaussian_blur(const Image& img, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
    kernel[static_cast<std::size_t>(i + radius)] = v;
    sum += v;
  }
  for (auto& v : kernel) v /= sum;

  const int w = img.width(), h = img.height(), ch = img.channels();
  std::vector<double> tmp(static_cast<std::size_t>(w) * h * ch);
  // horizontal pass (clamped borders)
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < ch; ++c) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) {
          const int xi = std::clamp(x + k, 0, w - 1);
          acc += kernel[static_cast<std::size_t>(k + radius)] * img.at(xi, y, c);
        }
        tmp[(static_cast<std::size_t>(y) * w + x) * ch + c] = acc;
      }
    }
  }
  Image out(w, h, ch);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < ch; ++c) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) {
          const int yi = std::clamp(y + k, 0, h - 1);
          acc += kernel[static_cast<std::size_t>(k + radius)] * tmp[(static_cast<std::size_t>(yi) * w + x) * ch + c];
        }
        out.at(x, y, c) = static_cast<std::uint8_t>(std::lround(std::clamp(acc, 0.0, 255.0)));
      }
    }
  }
  return out;
}

// 2x2 minimum filter: thickens dark strokes.
Image dilate_ink(const Image& img) {
  Image out(img.width(), img.height(), img.channels());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      for (int c = 0; c < img.channels(); ++c) {
        std::uint8_t v = img.at(x, y, c);
        if (x + 1 < img.width()) v = std::min(v, img.at(x + 1, y, c));
        if (y + 1 < img.height()) v = std::min(v, img.at(x, y + 1, c));
        if (x + 1 < img.width() && y + 1 < img.height()) v = std::min(v, img.at(x + 1, y + 1, c));
        out.at(x, y, c) = v;
      }
    }
  }
  return out;
}

// Ink-anchored value jitter: white stays white, stroke darkness scales.
Image jitter_ink(const Image& img, double contrast, double brightness) {
  Image out(img.width(), img.height(), img.channels());
  for (std::size_t i = 0; i < img.data().size(); ++i) {
    const double ink = 255.0 - img.data()[i];
    const double v = 255.0 - std::clamp(ink * contrast + brightness * 255.0 * (ink > 0.0 ? 1.0 : 0.0), 0.0, 255.0);
    out.data()[i] = static_cast<std::uint8_t>(std::lround(v));
  }
  return out;
}

// Plain brightness/contrast jitter for background textures.
Image jitter_plain(const Image& img, double contrast, double brightness) {
  Image out(img.width(), img.height(), img.channels());
  for (std::size_t i = 0; i < img.data().size(); ++i) {
    const double v = (img.data()[i] - 128.0) * contrast + 128.0 + brightness * 255.0;
    out.data()[i] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
  }
  return out;
}

Image invert(const Image& img) {
  Image out(img.width(), img.height(), img.channels());
  for (std::size_t i = 0; i < img.data().size(); ++i) out.data()[i] = static_cast<std::uint8_t>(255 - img.data()[i]);
  return out;
}

// Crops to ink columns plus margin and re-aligns the width.
Image recrop_to_content(const Image& grey, int margin, int align) {
  int first = -1, last = -1;
  for (int x = 0; x < grey.width(); ++x) {
    bool ink = false;
    for (int y = 0; y < grey.height(); ++y) {
      if (grey.at(x, y) < 250) {
        ink = true;
        break;
      }
    }
    if (ink) {
      if (first < 0) first = x;
      last = x;
    }
  }
  if (first < 0) return grey;  // blank image, nothing to recrop
  const int x0 = std::max(0, first - margin);
  const int x1 = std::min(grey.width(), last + 1 + margin);
  Image cropped = grey.crop(x0, 0, x1 - x0, grey.height());
  int width = std::max(8, cropped.width());
  width = (width + align - 1) / align * align;
  return cropped.pad_right(width);
}

}  // namespace

Image apply_text_transforms(const Image& grey, const TransformRecipe& recipe, std::uint64_t seed,
                            AppliedTransforms* applied) {
  recipe.validate();
  if (grey.channels() != 1) fail(ErrorClass::image, "apply_text_transforms expects greyscale input");
  Rng rng = Rng(seed).child("text_tf");
  Image img = grey;
  bool geometry_changed = false;

  if (rng.bernoulli(recipe.p_rotation)) {
    if (applied) applied->rotation = true;
    img = rotate_about_center(img, rng.uniform(-recipe.max_rotation_deg, recipe.max_rotation_deg), 255.0);
    geometry_changed = true;
  } else {
    rng.uniform();  // keep the draw count fixed regardless of firing
  }
  if (rng.bernoulli(recipe.p_warp)) {
    if (applied) applied->warp = true;
    double jx[4], jy[4];
    for (int i = 0; i < 4; ++i) {
      jx[i] = rng.uniform(-recipe.max_warp_px, recipe.max_warp_px);
      jy[i] = rng.uniform(-recipe.max_warp_px, recipe.max_warp_px);
    }
    img = warp_corners(img, jx, jy, 255.0);
    geometry_changed = true;
  } else {
    for (int i = 0; i < 8; ++i) rng.uniform();
  }
  if (rng.bernoulli(recipe.p_blur)) {
    if (applied) applied->blur = true;
    img = gaussian_blur(img, rng.uniform(recipe.blur_sigma_min, recipe.blur_sigma_max));
  } else {
    rng.uniform();
  }
  if (rng.bernoulli(recipe.p_dilation)) {
    if (applied) applied->dilation = true;
    img = dilate_ink(img);
  }
  if (rng.bernoulli(recipe.p_jitter)) {
    if (applied) applied->jitter = true;
    const double contrast = rng.uniform(1.0 - recipe.jitter_strength, 1.0 + recipe.jitter_strength);
    const double brightness = rng.uniform(-recipe.jitter_strength, recipe.jitter_strength);
    img = jitter_ink(img, contrast, brightness);
  } else {
    rng.uniform();
    rng.uniform();
  }

  if (geometry_changed) img = recrop_to_content(img, 6, 8);
  return img;
}

Image apply_background_transforms(const Image& rgb, const TransformRecipe& recipe, std::uint64_t seed,
                                  AppliedTransforms* applied) {
  recipe.validate();
  Rng rng = Rng(seed).child("bg_tf");
  Image img = rgb;
  if (rng.bernoulli(recipe.p_bg_dilation)) {
    if (applied) applied->bg_dilation = true;
    img = dilate_ink(img);
  }
  if (rng.bernoulli(recipe.p_bg_jitter)) {
    if (applied) applied->bg_jitter = true;
    const double contrast = rng.uniform(1.0 - recipe.jitter_strength, 1.0 + recipe.jitter_strength);
    const double brightness = rng.uniform(-recipe.jitter_strength, recipe.jitter_strength);
    img = jitter_plain(img, contrast, brightness);
  } else {
    rng.uniform();
    rng.uniform();
  }
  if (rng.bernoulli(recipe.p_bg_invert)) {
    if (applied) applied->bg_invert = true;
    img = invert(img);
  }
  return img;
}

Image composite(const Image& text_grey, const Image& background_rgb, double alpha) {
  if (text_grey.channels() != 1 || background_rgb.channels() != 3) {
    fail(ErrorClass::image, "composite expects greyscale text over RGB background");
  }
  if (text_grey.width() != background_rgb.width() || text_grey.height() != background_rgb.height()) {
    fail(ErrorClass::image, "composite: dimension mismatch " + std::to_string(text_grey.width()) + "x" +
                                std::to_string(text_grey.height()) + " vs " + std::to_string(background_rgb.width()) +
                                "x" + std::to_string(background_rgb.height()));
  }
  if (alpha < 0.5 || alpha > 1.0) fail(ErrorClass::image, "composite: alpha outside [0.5, 1]");
  Image out(text_grey.width(), text_grey.height(), 3);
  for (int y = 0; y < out.height(); ++y) {
    for (int x = 0; x < out.width(); ++x) {
      const double mask = (255.0 - text_grey.at(x, y)) / 255.0;
      const double keep = 1.0 - alpha * mask;
      for (int c = 0; c < 3; ++c) {
        out.at(x, y, c) = static_cast<std::uint8_t>(std::lround(background_rgb.at(x, y, c) * keep));
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// BackgroundPool
// ---------------------------------------------------------------------------

BackgroundPool BackgroundPool::load_dir(const std::string& dir) {
  if (!fs::is_directory(dir)) fail(ErrorClass::image, "background directory not found: " + dir);
  std::vector<std::string> paths;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") paths.push_back(entry.path().string());
  }
  std::sort(paths.begin(), paths.end());
  if (paths.empty()) fail(ErrorClass::image, "no .png backgrounds in " + dir);
  BackgroundPool pool;
  for (const auto& p : paths) pool.textures_.push_back(read_png(p).to_rgb());
  return pool;
}

BackgroundPool BackgroundPool::from_images(std::vector<Image> images) {
  if (images.empty()) fail(ErrorClass::image, "background pool cannot be empty");
  BackgroundPool pool;
  for (auto& img : images) pool.textures_.push_back(img.to_rgb());
  return pool;
}

Image BackgroundPool::random_crop(int width, int height, Rng& rng) const {
  const Image& tex = textures_[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(textures_.size()) - 1))];
  const int x0 = static_cast<int>(rng.uniform_int(0, tex.width() - 1));
  const int y0 = static_cast<int>(rng.uniform_int(0, std::max(0, tex.height() - height)));
  Image out(width, height, 3);
  for (int y = 0; y < height; ++y) {
    const int sy = std::min(y0 + y, tex.height() - 1);
    for (int x = 0; x < width; ++x) {
      const int sx = (x0 + x) % tex.width();  // tile horizontally
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = tex.at(sx, sy, c);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// make_sample
// ---------------------------------------------------------------------------

Sample make_sample(const text::TextLine& line, const FontSpec& font, const BackgroundPool& pool,
                   const TransformRecipe& recipe, std::uint64_t seed, const RenderOptions& opts,
                   AppliedTransforms* applied) {
  recipe.validate();
  if (pool.size() == 0) fail(ErrorClass::image, "make_sample: empty background pool");

  Sample s;
  s.line = line;
  s.font_id = font.font_id;
  s.seed = seed;

  Image rendered = render_text(line, font, opts);
  s.text_grey = apply_text_transforms(rendered, recipe, seed, applied);

  Rng rng = Rng(seed).child("bg_pick");
  Image bg = pool.random_crop(s.text_grey.width(), s.text_grey.height(), rng);
  s.background_rgb = apply_background_transforms(bg, recipe, seed, applied);

  Rng alpha_rng = Rng(seed).child("alpha");
  s.alpha = alpha_rng.uniform(recipe.alpha_min, recipe.alpha_max);
  s.composite_rgb = composite(s.text_grey, s.background_rgb, s.alpha);
  return s;
}

// ---------------------------------------------------------------------------
// Procedural textures
// ---------------------------------------------------------------------------

namespace {

// Smooth value noise on a coarse lattice.
double value_noise(double x, double y, int cell, const Rng& base) {
  auto lattice = [&](int xi, int yi) {
    Rng r = base.child((static_cast<std::uint64_t>(static_cast<std::uint32_t>(xi)) << 32) |
                       static_cast<std::uint32_t>(yi));
    return r.uniform();
  };
  const double gx = x / cell, gy = y / cell;
  const int x0 = static_cast<int>(std::floor(gx)), y0 = static_cast<int>(std::floor(gy));
  const double fx = gx - x0, fy = gy - y0;
  const double sx = fx * fx * (3 - 2 * fx), sy = fy * fy * (3 - 2 * fy);
  const double top = lattice(x0, y0) * (1 - sx) + lattice(x0 + 1, y0) * sx;
  const double bot = lattice(x0, y0 + 1) * (1 - sx) + lattice(x0 + 1, y0 + 1) * sx;
  return top * (1 - sy) + bot * sy;
}

}  // namespace

Image make_texture(int width, int height, int kind, std::uint64_t seed) {
  Rng base(seed);
  Image out(width, height, 3);
  // base palettes: paper, wood, wall
  struct Palette {
    double r, g, b;
  };
  const Palette palettes[] = {
      {232, 226, 205},  // aged paper
      {182, 140, 95},   // wood
      {210, 208, 200},  // plaster wall
      {240, 238, 228},  // bright paper
  };
  const Palette base_color = palettes[kind % 4];
  const int variant = kind % 4;

  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double shade = 0.0;
      if (variant == 1) {
        // wood: horizontal grain bands warped by noise
        const double n = value_noise(x, y, 48, base);
        shade = 0.22 * std::sin(y * 0.35 + n * 9.0) + 0.18 * (value_noise(x, y, 14, base.child(1)) - 0.5);
      } else if (variant == 2) {
        // plaster: two octaves of blotches
        shade = 0.30 * (value_noise(x, y, 26, base) - 0.5) + 0.14 * (value_noise(x, y, 7, base.child(1)) - 0.5);
      } else {
        // paper: gentle mottling plus fine fiber grain
        shade = 0.16 * (value_noise(x, y, 32, base) - 0.5) + 0.08 * (value_noise(x, y, 5, base.child(1)) - 0.5);
      }
      const double f = std::clamp(1.0 + shade, 0.0, 2.0);
      out.at(x, y, 0) = static_cast<std::uint8_t>(std::clamp(base_color.r * f, 0.0, 255.0));
      out.at(x, y, 1) = static_cast<std::uint8_t>(std::clamp(base_color.g * f, 0.0, 255.0));
      out.at(x, y, 2) = static_cast<std::uint8_t>(std::clamp(base_color.b * f, 0.0, 255.0));
    }
  }
  return out;
}

}  // namespace stylus::raster
