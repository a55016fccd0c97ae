#include "stylus/text.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace stylus::text {

// ---------------------------------------------------------------------------
// CharSet
// ---------------------------------------------------------------------------

CharSet::CharSet(std::u32string symbols) : symbols_(std::move(symbols)) {
  if (symbols_.size() < 2) fail(ErrorClass::corpus, "charset needs at least 2 symbols");
  for (std::size_t i = 0; i < symbols_.size(); ++i) {
    const auto [it, inserted] = index_.emplace(symbols_[i], static_cast<int>(i));
    (void)it;
    if (!inserted) {
      fail(ErrorClass::corpus, "duplicate charset symbol '" + utf8_encode(symbols_[i]) + "'");
    }
  }
  if (!contains(U' ')) fail(ErrorClass::corpus, "charset must contain the space character");
}

CharSet CharSet::from_file(const std::string& path) {
  std::string content = read_text_file(path);
  // Single line of symbols; a trailing newline is not part of the set.
  while (!content.empty() && (content.back() == '\n' || content.back() == '\r')) content.pop_back();
  return CharSet(utf8_decode(content));
}

void CharSet::to_file(const std::string& path) const {
  write_text_file(path, utf8_encode(symbols_) + "\n");
}

int CharSet::index_of(char32_t c) const {
  const auto it = index_.find(c);
  if (it == index_.end()) {
    fail(ErrorClass::corpus, "character '" + utf8_encode(c) + "' not in charset");
  }
  return it->second;
}

// ---------------------------------------------------------------------------
// NgramTable
// ---------------------------------------------------------------------------

std::int64_t NgramTable::unigram(char32_t c) const {
  const auto it = u_counts.find(c);
  if (it == u_counts.end()) {
    fail(ErrorClass::corpus, "unigram '" + utf8_encode(c) + "' missing from table");
  }
  return it->second;
}

std::int64_t NgramTable::bigram(const std::u32string& pair) const {
  const auto it = b_counts.find(pair);
  if (it == b_counts.end()) {
    fail(ErrorClass::corpus, "bigram '" + utf8_encode(pair) + "' missing from table");
  }
  return it->second;
}

void NgramTable::to_file(const std::string& path) const {
  std::ostringstream out;
  for (const auto& [c, n] : u_counts) {
    out << utf8_encode(c) << '\t' << n << '\n';
  }
  for (const auto& [pair, n] : b_counts) {
    out << utf8_encode(pair) << '\t' << n << '\n';
  }
  write_text_file(path, out.str());
}

NgramTable NgramTable::from_file(const std::string& path) {
  NgramTable t;
  std::istringstream in(read_text_file(path));
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos) {
      fail(ErrorClass::io, "malformed ngram record at line " + std::to_string(lineno) + " of " + path);
    }
    const std::u32string key = utf8_decode(line.substr(0, tab));
    const std::int64_t count = std::stoll(line.substr(tab + 1));
    if (key.size() == 1) {
      t.u_counts[key[0]] = count;
    } else if (key.size() == 2) {
      t.b_counts[key] = count;
    } else {
      fail(ErrorClass::io, "ngram key of length " + std::to_string(key.size()) + " at line " +
                               std::to_string(lineno) + " of " + path);
    }
  }
  return t;
}

// ---------------------------------------------------------------------------
// WeightedLexicon
// ---------------------------------------------------------------------------

void WeightedLexicon::to_file(const std::string& path) const {
  std::ostringstream out;
  char buf[64];
  for (const auto& e : entries) {
    // %.17g round-trips doubles exactly.
    std::snprintf(buf, sizeof(buf), "%.17g", e.weight);
    out << utf8_encode(e.word) << '\t' << buf << '\n';
  }
  write_text_file(path, out.str());
}

WeightedLexicon WeightedLexicon::from_file(const std::string& path) {
  WeightedLexicon lex;
  std::istringstream in(read_text_file(path));
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos) {
      fail(ErrorClass::io, "malformed lexicon record at line " + std::to_string(lineno) + " of " + path);
    }
    WeightedLexicon::Entry e;
    e.word = utf8_decode(line.substr(0, tab));
    e.weight = std::stod(line.substr(tab + 1));
    if (e.word.empty()) fail(ErrorClass::corpus, "empty lexicon word at line " + std::to_string(lineno));
    if (!(e.weight > 0.0)) fail(ErrorClass::corpus, "non-positive lexicon weight at line " + std::to_string(lineno));
    lex.normalization += e.weight;
    lex.entries.push_back(std::move(e));
  }
  return lex;
}

// ---------------------------------------------------------------------------
// TextLine
// ---------------------------------------------------------------------------

TextLine TextLine::from_words(std::vector<std::u32string> words) {
  if (words.empty() || words.size() > 32) {
    fail(ErrorClass::corpus, "text line must hold 1..32 words, got " + std::to_string(words.size()));
  }
  TextLine line;
  line.word_count = static_cast<int>(words.size());
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (words[i].empty()) fail(ErrorClass::corpus, "empty word in text line");
    if (i) line.rendered.push_back(U' ');
    line.rendered += words[i];
  }
  line.words = std::move(words);
  return line;
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

NgramTable ingest_corpus(const std::vector<std::u32string>& documents, const CharSet& charset) {
  NgramTable t;
  for (std::size_t d = 0; d < documents.size(); ++d) {
    for (const auto& word : split_words(documents[d])) {
      for (char32_t c : word) {
        if (!charset.contains(c)) {
          fail(ErrorClass::corpus, "character '" + utf8_encode(c) + "' outside charset in document " +
                                       std::to_string(d));
        }
        ++t.u_counts[c];
      }
      // Bigrams over the word padded with one space per side.
      std::u32string padded;
      padded.reserve(word.size() + 2);
      padded.push_back(U' ');
      padded += word;
      padded.push_back(U' ');
      for (std::size_t i = 0; i + 1 < padded.size(); ++i) {
        ++t.b_counts[padded.substr(i, 2)];
      }
    }
  }
  return t;
}

double word_weight(const std::u32string& word, const NgramTable& tables) {
  if (word.empty()) fail(ErrorClass::corpus, "word_weight: empty word");
  double u_score = 0.0;
  for (char32_t c : word) u_score += static_cast<double>(tables.unigram(c));
  u_score /= static_cast<double>(word.size());

  std::u32string padded;
  padded.reserve(word.size() + 2);
  padded.push_back(U' ');
  padded += word;
  padded.push_back(U' ');
  double b_score = 0.0;
  const std::size_t n_bigrams = padded.size() - 1;
  for (std::size_t i = 0; i < n_bigrams; ++i) {
    b_score += static_cast<double>(tables.bigram(padded.substr(i, 2)));
  }
  b_score /= static_cast<double>(n_bigrams);

  return (u_score + b_score) / 2.0;
}

WeightedLexicon build_lexicon(const std::vector<std::u32string>& documents, const NgramTable& tables) {
  // word_weight scores frequency: common n-gram patterns score high. The
  // sampling weight is its reciprocal, which boosts words carrying rare
  // character patterns and flattens the character distribution.
  WeightedLexicon lex;
  std::unordered_set<std::string> seen;
  for (const auto& doc : documents) {
    for (const auto& word : split_words(doc)) {
      if (!seen.insert(utf8_encode(word)).second) continue;
      const double score = word_weight(word, tables);
      if (!(score > 0.0)) {
        fail(ErrorClass::corpus, "word '" + utf8_encode(word) + "' scored " + std::to_string(score));
      }
      lex.entries.push_back({word, 1.0 / score});
      lex.normalization += 1.0 / score;
    }
  }
  return lex;
}

TextLine sample_line(const WeightedLexicon& lexicon, int min_words, int max_words, Rng& rng) {
  if (lexicon.entries.empty()) fail(ErrorClass::corpus, "sample_line: empty lexicon");
  if (min_words < 1 || min_words > max_words || max_words > 32) {
    fail(ErrorClass::corpus, "sample_line: invalid word-count range [" + std::to_string(min_words) + "," +
                                 std::to_string(max_words) + "]");
  }
  std::vector<double> cumulative;
  cumulative.reserve(lexicon.entries.size());
  double acc = 0.0;
  for (const auto& e : lexicon.entries) {
    acc += e.weight;
    cumulative.push_back(acc);
  }
  const int n = static_cast<int>(rng.uniform_int(min_words, max_words));
  std::vector<std::u32string> words;
  words.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    words.push_back(lexicon.entries[rng.weighted_index(cumulative)].word);
  }
  return TextLine::from_words(std::move(words));
}

std::map<char32_t, double> character_frequency(const std::vector<TextLine>& lines, const CharSet& charset) {
  if (lines.empty()) fail(ErrorClass::corpus, "character_frequency: no lines");
  std::map<char32_t, double> freq;
  for (std::size_t i = 0; i < charset.size(); ++i) freq[charset.at(i)] = 0.0;
  std::int64_t total = 0;
  for (const auto& line : lines) {
    for (char32_t c : line.rendered) {
      const auto it = freq.find(c);
      if (it == freq.end()) fail(ErrorClass::corpus, "line character '" + utf8_encode(c) + "' outside charset");
      it->second += 1.0;
      ++total;
    }
  }
  if (total > 0) {
    for (auto& [c, v] : freq) v /= static_cast<double>(total);
  }
  return freq;
}

double frequency_spread(const std::map<char32_t, double>& freq) {
  double lo = 0.0, hi = 0.0;
  bool first = true;
  for (const auto& [c, v] : freq) {
    if (v <= 0.0) continue;
    if (first) {
      lo = hi = v;
      first = false;
    } else {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (first) fail(ErrorClass::corpus, "frequency_spread: all frequencies zero");
  return hi / lo;
}

}  // namespace stylus::text
