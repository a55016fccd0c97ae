#include "stylus/truetype.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "stylus/common.hpp"

namespace stylus::tt {

namespace {

std::uint8_t u8(const std::uint8_t* p) { return p[0]; }
std::uint16_t u16(const std::uint8_t* p) { return static_cast<std::uint16_t>((p[0] << 8) | p[1]); }
std::int16_t i16(const std::uint8_t* p) { return static_cast<std::int16_t>(u16(p)); }
std::uint32_t u32(const std::uint8_t* p) {
  return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
         (static_cast<std::uint32_t>(p[2]) << 8) | p[3];
}
double f2dot14(const std::uint8_t* p) { return static_cast<double>(i16(p)) / 16384.0; }

}  // namespace

std::shared_ptr<const TrueTypeFont> TrueTypeFont::load(const std::string& path) {
  auto font = std::shared_ptr<TrueTypeFont>(new TrueTypeFont());
  font->path_ = path;
  font->bytes_ = read_binary_file(path);
  font->parse();
  return font;
}

const std::uint8_t* TrueTypeFont::table(const char tag[4], std::size_t* length) const {
  const std::uint8_t* p = bytes_.data();
  const std::uint16_t num_tables = u16(p + 4);
  for (std::uint16_t i = 0; i < num_tables; ++i) {
    const std::uint8_t* rec = p + 12 + 16 * i;
    if (std::memcmp(rec, tag, 4) == 0) {
      const std::uint32_t off = u32(rec + 8);
      const std::uint32_t len = u32(rec + 12);
      if (off + len > bytes_.size()) fail(ErrorClass::font, "table out of bounds in " + path_);
      if (length) *length = len;
      return p + off;
    }
  }
  return nullptr;
}

void TrueTypeFont::parse() {
  if (bytes_.size() < 12) fail(ErrorClass::font, "not a font file: " + path_);
  const std::uint32_t version = u32(bytes_.data());
  if (version != 0x00010000 && version != 0x74727565 /* 'true' */) {
    fail(ErrorClass::font, "unsupported font flavour (need TrueType glyf outlines): " + path_);
  }

  const std::uint8_t* head = table("head");
  const std::uint8_t* maxp = table("maxp");
  const std::uint8_t* hhea = table("hhea");
  const std::uint8_t* hmtx = table("hmtx");
  const std::uint8_t* cmap = table("cmap");
  std::size_t glyf_len = 0, loca_len = 0;
  const std::uint8_t* glyf = table("glyf", &glyf_len);
  const std::uint8_t* loca = table("loca", &loca_len);
  if (!head || !maxp || !hhea || !hmtx || !cmap || !glyf || !loca) {
    fail(ErrorClass::font, "missing required table in " + path_);
  }

  units_per_em_ = u16(head + 18);
  long_loca_ = i16(head + 50) != 0;
  num_glyphs_ = u16(maxp + 4);
  ascender_ = i16(hhea + 4);
  descender_ = i16(hhea + 6);
  num_hmetrics_ = u16(hhea + 34);
  glyf_ = glyf;
  glyf_len_ = glyf_len;
  loca_ = loca;
  hmtx_ = hmtx;

  // Pick a Unicode cmap subtable: prefer (3,10) fmt 12, then (3,1) fmt 4,
  // then any platform-0 subtable.
  const std::uint16_t n_sub = u16(cmap + 2);
  const std::uint8_t* best = nullptr;
  int best_rank = -1;
  for (std::uint16_t i = 0; i < n_sub; ++i) {
    const std::uint8_t* rec = cmap + 4 + 8 * i;
    const std::uint16_t platform = u16(rec);
    const std::uint16_t encoding = u16(rec + 2);
    const std::uint8_t* sub = cmap + u32(rec + 4);
    const std::uint16_t format = u16(sub);
    int rank = -1;
    if (platform == 3 && encoding == 10 && format == 12) rank = 3;
    else if (platform == 3 && encoding == 1 && format == 4) rank = 2;
    else if (platform == 0 && (format == 4 || format == 12)) rank = 1;
    if (rank > best_rank) {
      best_rank = rank;
      best = sub;
    }
  }
  if (!best) fail(ErrorClass::font, "no usable Unicode cmap in " + path_);
  cmap_sub_ = best;
  cmap_format_ = u16(best);
}

std::uint16_t TrueTypeFont::glyph_index(char32_t cp) const {
  const std::uint8_t* sub = cmap_sub_;
  if (cmap_format_ == 4) {
    if (cp > 0xFFFF) return 0;
    const std::uint16_t seg_count = u16(sub + 6) / 2;
    const std::uint8_t* end_codes = sub + 14;
    const std::uint8_t* start_codes = end_codes + seg_count * 2 + 2;
    const std::uint8_t* id_deltas = start_codes + seg_count * 2;
    const std::uint8_t* id_range_offsets = id_deltas + seg_count * 2;
    for (std::uint16_t s = 0; s < seg_count; ++s) {
      if (cp <= u16(end_codes + 2 * s)) {
        const std::uint16_t start = u16(start_codes + 2 * s);
        if (cp < start) return 0;
        const std::uint16_t range_offset = u16(id_range_offsets + 2 * s);
        if (range_offset == 0) {
          return static_cast<std::uint16_t>((cp + u16(id_deltas + 2 * s)) & 0xFFFF);
        }
        const std::uint8_t* addr = id_range_offsets + 2 * s + range_offset + 2 * (cp - start);
        const std::uint16_t g = u16(addr);
        if (g == 0) return 0;
        return static_cast<std::uint16_t>((g + u16(id_deltas + 2 * s)) & 0xFFFF);
      }
    }
    return 0;
  }
  if (cmap_format_ == 12) {
    const std::uint32_t n_groups = u32(sub + 12);
    std::uint32_t lo = 0, hi = n_groups;
    while (lo < hi) {
      const std::uint32_t mid = (lo + hi) / 2;
      const std::uint8_t* g = sub + 16 + 12 * mid;
      const std::uint32_t start = u32(g), end = u32(g + 4);
      if (cp < start) {
        hi = mid;
      } else if (cp > end) {
        lo = mid + 1;
      } else {
        return static_cast<std::uint16_t>(u32(g + 8) + (cp - start));
      }
    }
    return 0;
  }
  return 0;
}

double TrueTypeFont::advance_width(std::uint16_t glyph_id) const {
  const std::uint16_t i = std::min<std::uint16_t>(glyph_id, static_cast<std::uint16_t>(num_hmetrics_ - 1));
  return u16(hmtx_ + 4 * i);
}

void TrueTypeFont::append_glyph(std::uint16_t glyph_id, GlyphOutline& out, double dx, double dy, double a,
                                double b, double c, double d, int depth) const {
  if (depth > 5) fail(ErrorClass::font, "composite glyph nesting too deep in " + path_);
  if (glyph_id >= num_glyphs_) fail(ErrorClass::font, "glyph id out of range in " + path_);

  std::size_t off, next;
  if (long_loca_) {
    off = u32(loca_ + 4 * glyph_id);
    next = u32(loca_ + 4 * glyph_id + 4);
  } else {
    off = 2u * u16(loca_ + 2 * glyph_id);
    next = 2u * u16(loca_ + 2 * glyph_id + 2);
  }
  if (off == next) return;  // empty glyph (e.g. space)
  if (next > glyf_len_) fail(ErrorClass::font, "glyf offset out of range in " + path_);

  const std::uint8_t* g = glyf_ + off;
  const std::int16_t n_contours = i16(g);

  if (n_contours >= 0) {
    const std::uint8_t* p = g + 10;
    std::vector<std::uint16_t> end_pts(static_cast<std::size_t>(n_contours));
    for (int k = 0; k < n_contours; ++k) {
      end_pts[static_cast<std::size_t>(k)] = u16(p);
      p += 2;
    }
    const std::uint16_t n_points = n_contours ? end_pts.back() + 1 : 0;
    const std::uint16_t instr_len = u16(p);
    p += 2 + instr_len;

    std::vector<std::uint8_t> flags;
    flags.reserve(n_points);
    while (flags.size() < n_points) {
      const std::uint8_t f = u8(p++);
      flags.push_back(f);
      if (f & 0x08) {  // repeat
        std::uint8_t reps = u8(p++);
        while (reps-- && flags.size() < n_points) flags.push_back(f);
      }
    }

    std::vector<double> xs(n_points), ys(n_points);
    double v = 0;
    for (std::uint16_t i = 0; i < n_points; ++i) {
      const std::uint8_t f = flags[i];
      if (f & 0x02) {
        const double delta = u8(p++);
        v += (f & 0x10) ? delta : -delta;
      } else if (!(f & 0x10)) {
        v += i16(p);
        p += 2;
      }
      xs[i] = v;
    }
    v = 0;
    for (std::uint16_t i = 0; i < n_points; ++i) {
      const std::uint8_t f = flags[i];
      if (f & 0x04) {
        const double delta = u8(p++);
        v += (f & 0x20) ? delta : -delta;
      } else if (!(f & 0x20)) {
        v += i16(p);
        p += 2;
      }
      ys[i] = v;
    }

    std::uint16_t start = 0;
    for (int k = 0; k < n_contours; ++k) {
      const std::uint16_t end = end_pts[static_cast<std::size_t>(k)];
      std::vector<OutlinePoint> contour;
      contour.reserve(end - start + 1u);
      for (std::uint16_t i = start; i <= end; ++i) {
        const double x = xs[i], y = ys[i];
        contour.push_back({a * x + c * y + dx, b * x + d * y + dy, (flags[i] & 0x01) != 0});
      }
      out.contours.push_back(std::move(contour));
      start = end + 1;
    }
    return;
  }

  // Composite glyph.
  const std::uint8_t* p = g + 10;
  bool more = true;
  while (more) {
    const std::uint16_t flags = u16(p);
    const std::uint16_t component = u16(p + 2);
    p += 4;
    double arg1 = 0, arg2 = 0;
    if (flags & 0x0001) {  // words
      arg1 = i16(p);
      arg2 = i16(p + 2);
      p += 4;
    } else {
      arg1 = static_cast<std::int8_t>(p[0]);
      arg2 = static_cast<std::int8_t>(p[1]);
      p += 2;
    }
    double ca = 1, cb = 0, cc = 0, cd = 1;
    if (flags & 0x0008) {
      ca = cd = f2dot14(p);
      p += 2;
    } else if (flags & 0x0040) {
      ca = f2dot14(p);
      cd = f2dot14(p + 2);
      p += 4;
    } else if (flags & 0x0080) {
      ca = f2dot14(p);
      cb = f2dot14(p + 2);
      cc = f2dot14(p + 4);
      cd = f2dot14(p + 6);
      p += 8;
    }
    double cdx = 0, cdy = 0;
    if (flags & 0x0002) {  // args are xy offsets; point-matching components are ignored
      cdx = arg1;
      cdy = arg2;
    }
    // Compose child transform with the running one.
    append_glyph(component, out, a * cdx + c * cdy + dx, b * cdx + d * cdy + dy, a * ca + c * cb,
                 b * ca + d * cb, a * cc + c * cd, b * cc + d * cd, depth + 1);
    more = (flags & 0x0020) != 0;
  }
}

GlyphOutline TrueTypeFont::outline(std::uint16_t glyph_id) const {
  GlyphOutline out;
  out.advance = advance_width(glyph_id);
  append_glyph(glyph_id, out, 0, 0, 1, 0, 0, 1, 0);
  return out;
}

// ---------------------------------------------------------------------------
// Rasterization
// ---------------------------------------------------------------------------

namespace {

struct Edge {
  double x0, y0, x1, y1;  // y0 < y1, winding +-1
  int winding;
};

void add_edge(std::vector<Edge>& edges, double x0, double y0, double x1, double y1) {
  if (y0 == y1) return;
  if (y0 < y1) {
    edges.push_back({x0, y0, x1, y1, +1});
  } else {
    edges.push_back({x1, y1, x0, y0, -1});
  }
}

// Flattens one quadratic segment into line segments; tolerance in px.
void flatten_quad(std::vector<Edge>& edges, double x0, double y0, double cx, double cy, double x1, double y1) {
  const double dev = std::max(std::abs(x0 + x1 - 2 * cx), std::abs(y0 + y1 - 2 * cy));
  int n = 1 + static_cast<int>(std::sqrt(dev * 2.0));
  n = std::min(n, 24);
  double px = x0, py = y0;
  for (int i = 1; i <= n; ++i) {
    const double t = static_cast<double>(i) / n;
    const double mt = 1.0 - t;
    const double qx = mt * mt * x0 + 2 * mt * t * cx + t * t * x1;
    const double qy = mt * mt * y0 + 2 * mt * t * cy + t * t * y1;
    add_edge(edges, px, py, qx, qy);
    px = qx;
    py = qy;
  }
}

}  // namespace

void rasterize_outline(const GlyphOutline& outline, const Placement& place, Image& canvas) {
  if (canvas.channels() != 1) fail(ErrorClass::image, "rasterize_outline needs a greyscale canvas");
  constexpr int kSS = 2;  // supersampling factor

  // Transform to supersampled pixel space (y grows downward).
  auto to_px = [&](const OutlinePoint& p, double& x, double& y) {
    const double fx = p.x + place.slant * p.y;
    x = (place.origin_x + fx * place.scale) * kSS;
    y = (place.baseline_y - p.y * place.scale) * kSS;
  };

  std::vector<Edge> edges;
  for (const auto& contour : outline.contours) {
    const std::size_t n = contour.size();
    if (n < 2) continue;

    // Re-anchor so the walk starts on an on-curve point (synthesize one from
    // the midpoint of two neighbouring off-curve points if needed).
    std::vector<OutlinePoint> pts(contour.begin(), contour.end());
    std::size_t start = 0;
    while (start < n && !pts[start].on_curve) ++start;
    double sx, sy;
    if (start == n) {
      OutlinePoint mid{(pts[0].x + pts[1].x) / 2, (pts[0].y + pts[1].y) / 2, true};
      to_px(mid, sx, sy);
      start = 0;  // treat every original point as control
    } else {
      to_px(pts[start], sx, sy);
    }

    double curx = sx, cury = sy;
    bool have_ctrl = false;
    double ctrlx = 0, ctrly = 0;
    for (std::size_t k = 1; k <= n; ++k) {
      const OutlinePoint& p = pts[(start + k) % n];
      double px, py;
      to_px(p, px, py);
      if (p.on_curve) {
        if (have_ctrl) {
          flatten_quad(edges, curx, cury, ctrlx, ctrly, px, py);
          have_ctrl = false;
        } else {
          add_edge(edges, curx, cury, px, py);
        }
        curx = px;
        cury = py;
      } else {
        if (have_ctrl) {
          // Two consecutive off-curve points: implied on-curve midpoint.
          const double mx = (ctrlx + px) / 2, my = (ctrly + py) / 2;
          flatten_quad(edges, curx, cury, ctrlx, ctrly, mx, my);
          curx = mx;
          cury = my;
        }
        ctrlx = px;
        ctrly = py;
        have_ctrl = true;
      }
    }
    if (have_ctrl) {
      flatten_quad(edges, curx, cury, ctrlx, ctrly, sx, sy);
    } else {
      add_edge(edges, curx, cury, sx, sy);
    }
  }
  if (edges.empty()) return;

  const int ssw = canvas.width() * kSS;
  const int ssh = canvas.height() * kSS;
  double min_y = 1e30, max_y = -1e30;
  for (const auto& e : edges) {
    min_y = std::min(min_y, e.y0);
    max_y = std::max(max_y, e.y1);
  }
  const int row0 = std::max(0, static_cast<int>(std::floor(min_y)));
  const int row1 = std::min(ssh - 1, static_cast<int>(std::ceil(max_y)));
  if (row0 > row1) return;

  // Fractional x-coverage per supersampled cell, nonzero winding rule.
  std::vector<double> cover(static_cast<std::size_t>(ssw) * canvas.height() * kSS, 0.0);
  std::vector<std::pair<double, int>> crossings;
  for (int row = row0; row <= row1; ++row) {
    const double yc = row + 0.5;
    crossings.clear();
    for (const auto& e : edges) {
      if (e.y0 <= yc && yc < e.y1) {
        const double t = (yc - e.y0) / (e.y1 - e.y0);
        crossings.emplace_back(e.x0 + t * (e.x1 - e.x0), e.winding);
      }
    }
    if (crossings.empty()) continue;
    std::sort(crossings.begin(), crossings.end());
    int winding = 0;
    double span_start = 0;
    for (const auto& [x, w] : crossings) {
      if (winding == 0 && w != 0) span_start = x;
      const int prev = winding;
      winding += w;
      if (prev != 0 && winding == 0) {
        // Fill [span_start, x) on this row.
        double xa = std::max(0.0, span_start);
        double xb = std::min(static_cast<double>(ssw), x);
        if (xb <= xa) continue;
        int ca = static_cast<int>(std::floor(xa));
        int cb = static_cast<int>(std::ceil(xb)) - 1;
        for (int cell = ca; cell <= cb; ++cell) {
          const double lo = std::max(xa, static_cast<double>(cell));
          const double hi = std::min(xb, static_cast<double>(cell + 1));
          if (hi > lo) cover[static_cast<std::size_t>(row) * ssw + cell] += hi - lo;
        }
      }
    }
  }

  // Box downsample kSS x kSS and min-blend onto the canvas (ink darkens).
  for (int y = 0; y < canvas.height(); ++y) {
    for (int x = 0; x < canvas.width(); ++x) {
      double acc = 0.0;
      for (int sy = 0; sy < kSS; ++sy) {
        for (int sx = 0; sx < kSS; ++sx) {
          acc += std::min(1.0, cover[static_cast<std::size_t>(y * kSS + sy) * ssw + (x * kSS + sx)]);
        }
      }
      const double alpha = acc / (kSS * kSS);
      if (alpha <= 0.0) continue;
      const auto v = static_cast<std::uint8_t>(std::lround(255.0 * (1.0 - alpha)));
      canvas.at(x, y) = std::min(canvas.at(x, y), v);
    }
  }
}

}  // namespace stylus::tt
