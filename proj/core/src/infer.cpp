#include "stylus/infer.hpp"

#include <chrono>
#include <cmath>

#include "stylus/common.hpp"

namespace stylus::infer {

void GenerationRequest::validate() const {
  if (out_text.empty()) fail(ErrorClass::inference, "generation request needs non-empty output text");
  if (stop_patience < 1) fail(ErrorClass::inference, "stop patience must be >= 1");
  if (max_slices < 1) fail(ErrorClass::inference, "max_slices must be >= 1");
  if (style_image.empty()) fail(ErrorClass::inference, "generation request needs a style image");
  if (style_image.width() % 8 != 0) fail(ErrorClass::inference, "style image width must be a multiple of 8");
}

PaddingDetector::PaddingDetector(const std::array<double, 8>& padding_centroid,
                                 const std::array<double, 8>& character_centroid, double min_separation)
    : padding_(padding_centroid), character_(character_centroid) {
  double d2 = 0.0;
  for (int i = 0; i < 8; ++i) {
    const double d = padding_[static_cast<std::size_t>(i)] - character_[static_cast<std::size_t>(i)];
    d2 += d * d;
  }
  if (std::sqrt(d2) < min_separation) {
    fail(ErrorClass::inference, "padding and character centroids are not separated (distance " +
                                    std::to_string(std::sqrt(d2)) + ")");
  }
}

bool PaddingDetector::is_padding(const double* slice) const {
  double dp = 0.0, dc = 0.0;
  for (int i = 0; i < 8; ++i) {
    const double a = slice[i] - padding_[static_cast<std::size_t>(i)];
    const double b = slice[i] - character_[static_cast<std::size_t>(i)];
    dp += a * a;
    dc += b * b;
  }
  return dp < dc;
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

GenerationResult generate(const GenerationRequest& request, const ModelBundle& models) {
  request.validate();
  const std::u32string condition = utf8_decode(request.style_text) + utf8_decode(request.out_text);
  const PaddingDetector& detector = models.detector();

  vae::LatentSequence context = models.encode_style(request.style_image);
  const int style_len = context.count;

  int emitted = 0;
  int padding_run = 0;
  bool natural = false;
  while (emitted < request.max_slices) {
    const std::array<double, 8> next = models.predict_next(context, condition);
    context.append(next.data());
    ++emitted;
    if (detector.is_padding(next.data())) {
      if (++padding_run >= request.stop_patience) {
        natural = true;
        break;
      }
    } else {
      padding_run = 0;
    }
  }

  GenerationResult result;
  result.slices_emitted = emitted;
  result.stopped_naturally = natural;
  // Only the newly generated region is decoded; the style prefix is context.
  vae::LatentSequence generated;
  generated.count = context.count - style_len;
  generated.data.assign(context.data.begin() + static_cast<std::ptrdiff_t>(style_len) * vae::LatentSequence::kDim,
                        context.data.end());
  if (natural) generated = generated.tail_trimmed(request.stop_patience);
  if (generated.count == 0) {
    fail(ErrorClass::inference, "generation produced zero non-padding slices");
  }
  result.content = generated;
  result.image = models.decode(generated);
  return result;
}

WordByWordResult generate_word_by_word(const GenerationRequest& request, const ModelBundle& models) {
  request.validate();
  const auto words = split_words(utf8_decode(request.out_text));
  if (words.empty()) fail(ErrorClass::inference, "word-by-word generation needs at least one word");

  WordByWordResult result;
  vae::LatentSequence style = models.encode_style(request.style_image);
  std::u32string style_text = utf8_decode(request.style_text);
  vae::LatentSequence generated_all;
  generated_all.count = 0;

  for (std::size_t wi = 0; wi < words.size(); ++wi) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::u32string condition = style_text + (style_text.empty() ? U"" : U" ") + words[wi];
    const PaddingDetector& detector = models.detector();

    vae::LatentSequence context = style;
    int emitted = 0, padding_run = 0;
    bool natural = false;
    while (emitted < request.max_slices) {
      const std::array<double, 8> next = models.predict_next(context, condition);
      context.append(next.data());
      ++emitted;
      if (detector.is_padding(next.data())) {
        if (++padding_run >= request.stop_patience) {
          natural = true;
          break;
        }
      } else {
        padding_run = 0;
      }
    }
    vae::LatentSequence word_latents;
    word_latents.count = context.count - style.count;
    word_latents.data.assign(context.data.begin() + static_cast<std::ptrdiff_t>(style.count) * 8, context.data.end());
    if (natural) word_latents = word_latents.tail_trimmed(request.stop_patience);
    if (word_latents.count == 0) fail(ErrorClass::inference, "word generation produced zero slices");
    result.all_stopped_naturally = result.all_stopped_naturally && natural;

    // The generated line so far becomes the next step's style reference.
    style = style.concat(word_latents);
    style_text = condition;
    generated_all = generated_all.concat(word_latents);

    const auto t1 = std::chrono::steady_clock::now();
    WordTiming timing;
    timing.word = utf8_encode(words[wi]);
    timing.slices = emitted;
    timing.seconds = std::chrono::duration<double>(t1 - t0).count();
    result.per_word.push_back(timing);
    result.total_slices += emitted;
  }
  result.image = models.decode(generated_all);
  return result;
}

// ---------------------------------------------------------------------------
// color_correct
// ---------------------------------------------------------------------------

namespace {

int round_div(int num, int den) { return (num + den / 2) / den; }

int luma601(int r, int g, int b) { return (299 * r + 587 * g + 114 * b + 500) / 1000; }

// Intensity k in [0,255] of a pixel relative to an ink colour; 0 = white.
int extract_intensity(const Image& img, int x, int y, const std::array<int, 3>& ink, int ink_luma) {
  if (img.channels() == 1) return 255 - img.at(x, y);
  const int l = luma601(img.at(x, y, 0), img.at(x, y, 1), img.at(x, y, 2));
  if (ink_luma >= 255) return 255 - l;
  // Inverse of the blend below: luma(out) = 255 - k*(255 - ink_luma)/255.
  const int k = round_div((255 - l) * 255, 255 - ink_luma);
  (void)ink;
  return std::clamp(k, 0, 255);
}

void blend_ink(std::uint8_t* out, const std::array<int, 3>& ink, int k) {
  for (int c = 0; c < 3; ++c) {
    out[c] = static_cast<std::uint8_t>(255 - round_div((255 - ink[static_cast<std::size_t>(c)]) * k, 255));
  }
}

}  // namespace

Image color_correct(const Image& generated, const Image& reference, std::uint8_t white_threshold) {
  if (generated.empty() || reference.empty()) fail(ErrorClass::inference, "color_correct: empty image");
  const Image ref = reference.to_rgb();

  // Mean ink colour of the reference over its chroma-key mask.
  std::int64_t sum[3] = {0, 0, 0};
  std::int64_t count = 0;
  for (int y = 0; y < ref.height(); ++y) {
    for (int x = 0; x < ref.width(); ++x) {
      const int r = ref.at(x, y, 0), g = ref.at(x, y, 1), b = ref.at(x, y, 2);
      if (r >= white_threshold && g >= white_threshold && b >= white_threshold) continue;  // background
      sum[0] += r;
      sum[1] += g;
      sum[2] += b;
      ++count;
    }
  }
  if (count == 0) fail(ErrorClass::inference, "color_correct: reference has no ink pixels");
  const std::array<int, 3> ink = {static_cast<int>(sum[0] / count), static_cast<int>(sum[1] / count),
                                  static_cast<int>(sum[2] / count)};
  const int ink_luma = luma601(ink[0], ink[1], ink[2]);

  Image out(generated.width(), generated.height(), 3);
  for (int y = 0; y < generated.height(); ++y) {
    for (int x = 0; x < generated.width(); ++x) {
      // Background test on the input's own channels.
      bool background = true;
      for (int c = 0; c < generated.channels(); ++c) {
        if (generated.at(x, y, c) < white_threshold) {
          background = false;
          break;
        }
      }
      if (background) {
        out.at(x, y, 0) = out.at(x, y, 1) = out.at(x, y, 2) = 255;
        continue;
      }
      // If the pixel already sits exactly on the white->ink ray (a previous
      // pass produced it), keep it: this makes the operation a projection.
      if (generated.channels() == 3) {
        const int k_est = extract_intensity(generated, x, y, ink, ink_luma);
        static constexpr int kOffsets[] = {0, -1, 1, -2, 2, -3, 3, -4, 4};
        bool matched = false;
        for (int off : kOffsets) {
          const int k = std::clamp(k_est + off, 0, 255);
          std::uint8_t candidate[3];
          blend_ink(candidate, ink, k);
          if (candidate[0] == generated.at(x, y, 0) && candidate[1] == generated.at(x, y, 1) &&
              candidate[2] == generated.at(x, y, 2)) {
            out.at(x, y, 0) = candidate[0];
            out.at(x, y, 1) = candidate[1];
            out.at(x, y, 2) = candidate[2];
            matched = true;
            break;
          }
        }
        if (matched) continue;
      }
      const int k = extract_intensity(generated, x, y, ink, ink_luma);
      std::uint8_t px[3];
      blend_ink(px, ink, k);
      out.at(x, y, 0) = px[0];
      out.at(x, y, 1) = px[1];
      out.at(x, y, 2) = px[2];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// overlay
// ---------------------------------------------------------------------------

Image overlay(const Image& generated, const Image& document, int x, int y) {
  if (generated.empty() || document.empty()) fail(ErrorClass::inference, "overlay: empty image");
  if (x < 0 || y < 0 || x + generated.width() > document.width() || y + generated.height() > document.height()) {
    fail(ErrorClass::inference, "overlay: placement out of bounds");
  }
  const Image gen = generated.to_rgb();
  Image out = document.to_rgb();
  for (int gy = 0; gy < gen.height(); ++gy) {
    for (int gx = 0; gx < gen.width(); ++gx) {
      const int r = gen.at(gx, gy, 0), g = gen.at(gx, gy, 1), b = gen.at(gx, gy, 2);
      const int alpha = 255 - luma601(r, g, b);  // white -> 0, black ink -> 255
      if (alpha <= 0) continue;
      for (int c = 0; c < 3; ++c) {
        const int doc = out.at(x + gx, y + gy, c);
        const int ink = gen.at(gx, gy, c);
        out.at(x + gx, y + gy, c) = static_cast<std::uint8_t>(round_div(doc * (255 - alpha) + ink * alpha, 255));
      }
    }
  }
  return out;
}

}  // namespace stylus::infer
