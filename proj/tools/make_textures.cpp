// Regenerates the procedural background textures committed under
// assets/backgrounds/. Run once; the PNGs are part of the repository.

#include <cstdio>
#include <string>

#include "stylus/png_io.hpp"
#include "stylus/raster.hpp"

int main(int argc, char** argv) {
  const std::string out_dir = argc > 1 ? argv[1] : "assets/backgrounds";
  const int count = 12;
  for (int i = 0; i < count; ++i) {
    const auto tex = stylus::raster::make_texture(768, 160, i, 0x9E3779B9u + static_cast<std::uint64_t>(i) * 131);
    char name[64];
    std::snprintf(name, sizeof(name), "%s/texture_%02d.png", out_dir.c_str(), i);
    stylus::write_png(name, tex);
    std::printf("wrote %s\n", name);
  }
  return 0;
}
