#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "stylus/image.hpp"
#include "stylus/rng.hpp"
#include "stylus/text.hpp"
#include "stylus/truetype.hpp"

namespace stylus::raster {

enum class FontCategory { calligraphy, typewritten };

std::string_view to_string(FontCategory c);

struct FontSpec {
  int font_id = -1;
  std::shared_ptr<const tt::TrueTypeFont> face;
  FontCategory category = FontCategory::typewritten;
  double slant = 0.0;  // synthetic shear; italic faces keep 0
  std::string name;
};

// Loads every *.ttf in a directory (sorted by name), verifies charset
// coverage, and optionally adds sheared variants of upright faces so both
// categories reach `min_per_category`.
class FontLibrary {
 public:
  static FontLibrary load_dir(const std::string& dir, const text::CharSet& charset,
                              double synth_slant = 0.25, int min_per_category = 0);

  const std::vector<FontSpec>& fonts() const { return fonts_; }
  const FontSpec& by_id(int font_id) const;
  std::vector<const FontSpec*> by_category(FontCategory c) const;
  std::size_t size() const { return fonts_.size(); }

 private:
  std::vector<FontSpec> fonts_;
};

struct RenderOptions {
  int height = 64;    // canvas height, fixed by the sample contract
  int em_px = 24;     // nominal glyph size inside the canvas
  int margin = 6;     // horizontal padding on both ends
  int align = 8;      // width rounded up to a multiple of this
};

// Renders a line as dark ink on a pure-white greyscale canvas. Width follows
// the summed glyph advances (minimum 8 px), rounded up to `align`.
Image render_text(const text::TextLine& line, const FontSpec& font, const RenderOptions& opts = {});

// The randomized recipe: per-transform firing probabilities plus fixed
// parameter ranges. Probabilities are tested against firing statistics, so
// they live in data rather than code.
struct TransformRecipe {
  // text image transforms
  double p_rotation = 0.5;
  double p_warp = 1.0;
  double p_blur = 0.5;
  double p_dilation = 0.1;
  double p_jitter = 0.5;
  // background transforms
  double p_bg_dilation = 0.1;
  double p_bg_jitter = 0.5;
  double p_bg_invert = 0.2;
  // parameter ranges
  double max_rotation_deg = 3.0;
  double max_warp_px = 4.0;
  double blur_sigma_min = 0.3;
  double blur_sigma_max = 1.2;
  double jitter_strength = 0.15;
  double alpha_min = 0.5;
  double alpha_max = 1.0;

  void validate() const;
};

// Which text transforms fired for one seed; used by the calibration tests.
struct AppliedTransforms {
  bool rotation = false, warp = false, blur = false, dilation = false, jitter = false;
  bool bg_dilation = false, bg_jitter = false, bg_invert = false;
};

// Applies the text-image transforms in recipe order (rotation, warp, blur,
// dilation, jitter). Output height is unchanged; width is re-cropped to ink
// content plus margin and re-aligned.
Image apply_text_transforms(const Image& grey, const TransformRecipe& recipe, std::uint64_t seed,
                            AppliedTransforms* applied = nullptr);

Image apply_background_transforms(const Image& rgb, const TransformRecipe& recipe, std::uint64_t seed,
                                  AppliedTransforms* applied = nullptr);

// Linear blend: out = I_B * (1 - alpha * mask) with mask = (255 - I_T)/255.
// Pure-white text pixels leave the background untouched.
Image composite(const Image& text_grey, const Image& background_rgb, double alpha);

// Read-only pool of background textures, randomly cropped (with horizontal
// tiling) to the requested size.
class BackgroundPool {
 public:
  static BackgroundPool load_dir(const std::string& dir);
  static BackgroundPool from_images(std::vector<Image> images);
  Image random_crop(int width, int height, Rng& rng) const;
  std::size_t size() const { return textures_.size(); }

 private:
  std::vector<Image> textures_;
};

struct Sample {
  Image composite_rgb;   // I
  Image text_grey;       // I_T
  Image background_rgb;  // I_B
  text::TextLine line;
  int font_id = -1;
  std::uint64_t seed = 0;
  double alpha = 1.0;
};

Sample make_sample(const text::TextLine& line, const FontSpec& font, const BackgroundPool& pool,
                   const TransformRecipe& recipe, std::uint64_t seed, const RenderOptions& opts = {},
                   AppliedTransforms* applied = nullptr);

// Procedural paper / wood / wall textures for the in-repo background set.
Image make_texture(int width, int height, int kind, std::uint64_t seed);

}  // namespace stylus::raster
