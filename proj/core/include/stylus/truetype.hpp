#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "stylus/image.hpp"

namespace stylus::tt {

// Raw glyph outline in font units, quadratic segments unflattened.
struct OutlinePoint {
  double x;
  double y;
  bool on_curve;
};

struct GlyphOutline {
  std::vector<std::vector<OutlinePoint>> contours;
  double advance = 0.0;  // font units
};

// Minimal TrueType (glyf) reader: cmap formats 4/12, simple and composite
// glyphs, horizontal metrics. Covers the DejaVu / STIX style fonts shipped
// with the project; CFF-flavoured OpenType is rejected at load.
class TrueTypeFont {
 public:
  static std::shared_ptr<const TrueTypeFont> load(const std::string& path);

  const std::string& path() const { return path_; }
  int units_per_em() const { return units_per_em_; }
  double ascender() const { return ascender_; }
  double descender() const { return descender_; }  // negative, font units

  // 0 means "no glyph for this codepoint".
  std::uint16_t glyph_index(char32_t cp) const;
  bool covers(char32_t cp) const { return glyph_index(cp) != 0; }

  GlyphOutline outline(std::uint16_t glyph_id) const;
  double advance_width(std::uint16_t glyph_id) const;  // font units

 private:
  TrueTypeFont() = default;
  void parse();
  const std::uint8_t* table(const char tag[4], std::size_t* length = nullptr) const;
  void append_glyph(std::uint16_t glyph_id, GlyphOutline& out, double dx, double dy, double a, double b,
                    double c, double d, int depth) const;

  std::string path_;
  std::vector<std::uint8_t> bytes_;
  int units_per_em_ = 0;
  double ascender_ = 0.0;
  double descender_ = 0.0;
  bool long_loca_ = false;
  std::uint16_t num_glyphs_ = 0;
  std::uint16_t num_hmetrics_ = 0;
  const std::uint8_t* glyf_ = nullptr;
  std::size_t glyf_len_ = 0;
  const std::uint8_t* loca_ = nullptr;
  const std::uint8_t* hmtx_ = nullptr;
  const std::uint8_t* cmap_sub_ = nullptr;  // selected cmap subtable
  std::uint16_t cmap_format_ = 0;
};

// Affine placement of an outline on a canvas: pixel = origin + M * (font units
// scaled). `slant` shears x by y for synthetic oblique faces.
struct Placement {
  double scale = 1.0;     // font units -> px
  double slant = 0.0;     // x += slant * y (font space, y up)
  double origin_x = 0.0;  // pen position, px
  double baseline_y = 0.0;
};

// Draws black-on-white coverage into `canvas` (greyscale, min-blend). The
// outline is flattened and scan-filled with the nonzero winding rule at 2x
// supersampling, then box-downsampled.
void rasterize_outline(const GlyphOutline& outline, const Placement& place, Image& canvas);

}  // namespace stylus::tt
