#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "stylus/image.hpp"
#include "stylus/vae.hpp"

namespace stylus::infer {

struct GenerationRequest {
  Image style_image;       // RGB W x 64, W % 8 == 0
  std::string style_text;  // UTF-8 transcription of the style image
  std::string out_text;    // UTF-8 text to generate
  int max_slices = 4096;
  int stop_patience = 10;  // P

  void validate() const;
};

// Nearest-centroid classifier in the 8-dim latent space.
class PaddingDetector {
 public:
  PaddingDetector(const std::array<double, 8>& padding_centroid, const std::array<double, 8>& character_centroid,
                  double min_separation = 1e-6);

  bool is_padding(const double* slice) const;
  bool is_padding(const std::array<double, 8>& slice) const { return is_padding(slice.data()); }
  const std::array<double, 8>& padding_centroid() const { return padding_; }
  const std::array<double, 8>& character_centroid() const { return character_; }

 private:
  std::array<double, 8> padding_;
  std::array<double, 8> character_;
};

// The generation loop only needs these three capabilities; the production
// bundle wires the trained VAE + generator, tests plug in stubs.
class ModelBundle {
 public:
  virtual ~ModelBundle() = default;
  virtual vae::LatentSequence encode_style(const Image& rgb) const = 0;
  // Predicts the next slice given the full latent context and condition text.
  virtual std::array<double, 8> predict_next(const vae::LatentSequence& context,
                                             const std::u32string& condition_text) const = 0;
  virtual Image decode(const vae::LatentSequence& latents) const = 0;
  virtual const PaddingDetector& detector() const = 0;
};

struct GenerationResult {
  Image image;                     // greyscale, width = 8 * content slices
  int slices_emitted = 0;          // newly generated slices incl. the trailing padding run
  bool stopped_naturally = false;  // P consecutive padding slices seen
  vae::LatentSequence content;     // generated slices with the trailing P trimmed
};

// Continues the style image under the concatenated condition
// style_text + out_text; stops after `stop_patience` consecutive padding
// slices or at max_slices.
GenerationResult generate(const GenerationRequest& request, const ModelBundle& models);

struct WordTiming {
  std::string word;
  int slices = 0;
  double seconds = 0.0;
};

struct WordByWordResult {
  Image image;
  std::vector<WordTiming> per_word;
  int total_slices = 0;
  bool all_stopped_naturally = true;
};

// Appends one word at a time, each step re-using everything generated so far
// as the style reference.
WordByWordResult generate_word_by_word(const GenerationRequest& request, const ModelBundle& models);

// Chroma-key recolor: mean ink color of `reference` applied to the ink of
// `generated`, intensity preserved; background stays pure white. Accepts the
// greyscale generator output or its own RGB output (projection).
Image color_correct(const Image& generated, const Image& reference, std::uint8_t white_threshold = 250);

// Alpha-blends `generated` (white background) onto `document` at (x, y); white
// is fully transparent, ink opacity follows intensity.
Image overlay(const Image& generated, const Image& document, int x, int y);

}  // namespace stylus::infer
