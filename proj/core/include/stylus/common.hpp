#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace stylus {

// Machine-parsable error classes surfaced by the CLI as a single line
// "error[<class>]: <message>".
enum class ErrorClass {
  config,
  corpus,
  font,
  image,
  dataset,
  checkpoint,
  training,
  inference,
  metric,
  io,
};

std::string_view to_string(ErrorClass c);

class Error : public std::runtime_error {
 public:
  Error(ErrorClass cls, const std::string& message)
      : std::runtime_error(message), cls_(cls) {}
  ErrorClass cls() const { return cls_; }

 private:
  ErrorClass cls_;
};

[[noreturn]] inline void fail(ErrorClass cls, const std::string& message) {
  throw Error(cls, message);
}

// ---------------------------------------------------------------------------
// UTF-8 <-> codepoints. Text lines are handled as codepoint sequences so the
// charset can hold non-ASCII symbols.
// ---------------------------------------------------------------------------

std::u32string utf8_decode(std::string_view s);
std::string utf8_encode(std::u32string_view s);
std::string utf8_encode(char32_t c);

// Splits on runs of whitespace (space, tab, CR, LF); no empty tokens.
std::vector<std::u32string> split_words(const std::u32string& s);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, std::string_view content);
std::vector<std::uint8_t> read_binary_file(const std::string& path);
void write_binary_file(const std::string& path, const std::uint8_t* data, std::size_t size);

// FNV-1a, used for config hashes and record checksums.
std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t seed = 14695981039346656037ull);
inline std::uint64_t fnv1a(std::string_view s, std::uint64_t seed = 14695981039346656037ull) {
  return fnv1a(s.data(), s.size(), seed);
}

std::string hex64(std::uint64_t v);

}  // namespace stylus
