#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "stylus/common.hpp"
#include "stylus/rng.hpp"

namespace stylus::text {

// Ordered set of symbols a corpus / font pair must cover. Order matters: it
// fixes tokenizer ids and the frequency-report layout.
class CharSet {
 public:
  CharSet() = default;
  explicit CharSet(std::u32string symbols);

  static CharSet from_file(const std::string& path);
  void to_file(const std::string& path) const;

  std::size_t size() const { return symbols_.size(); }
  const std::u32string& symbols() const { return symbols_; }
  bool contains(char32_t c) const { return index_.count(c) > 0; }
  // Ordinal of a symbol; error if missing.
  int index_of(char32_t c) const;
  char32_t at(std::size_t i) const { return symbols_.at(i); }

 private:
  std::u32string symbols_;
  std::unordered_map<char32_t, int> index_;
};

// Unigram and bigram totals over an ingested corpus. Bigram keys come from
// words padded with one space on each side, so every word of length n
// contributes n+1 bigrams.
struct NgramTable {
  std::map<char32_t, std::int64_t> u_counts;
  std::map<std::u32string, std::int64_t> b_counts;

  std::int64_t unigram(char32_t c) const;
  std::int64_t bigram(const std::u32string& pair) const;

  void to_file(const std::string& path) const;
  static NgramTable from_file(const std::string& path);
};

struct WeightedLexicon {
  struct Entry {
    std::u32string word;
    double weight;
  };
  std::vector<Entry> entries;
  double normalization = 0.0;

  void to_file(const std::string& path) const;
  static WeightedLexicon from_file(const std::string& path);
};

struct TextLine {
  std::vector<std::u32string> words;
  std::u32string rendered;  // words joined by single spaces
  int word_count = 0;

  static TextLine from_words(std::vector<std::u32string> words);
};

// Counts unigrams over raw words and bigrams over space-padded words.
// Characters outside the charset are hard errors naming the character and the
// document index.
NgramTable ingest_corpus(const std::vector<std::u32string>& documents, const CharSet& charset);

// (mean unigram count over characters + mean bigram count over the padded
// word's bigrams) / 2. Missing n-gram keys are lookup errors, never zero.
double word_weight(const std::u32string& word, const NgramTable& tables);

// Weights every unique corpus word (first-occurrence order).
WeightedLexicon build_lexicon(const std::vector<std::u32string>& documents, const NgramTable& tables);

// Word count uniform over [min,max]; words drawn independently with
// probability proportional to weight.
TextLine sample_line(const WeightedLexicon& lexicon, int min_words, int max_words, Rng& rng);

// Relative frequency of every charset symbol over the rendered lines;
// sums to 1 when any symbol occurs.
std::map<char32_t, double> character_frequency(const std::vector<TextLine>& lines, const CharSet& charset);

// max/min ratio over non-zero frequencies: the balancing figure of merit.
double frequency_spread(const std::map<char32_t, double>& freq);

}  // namespace stylus::text
