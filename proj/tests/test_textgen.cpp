#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "helpers.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "stylus/text.hpp"

using namespace stylus;
using namespace stylus::text;
using testutil::u32;

namespace {

CharSet ascii_charset() {
  std::u32string syms;
  for (char32_t c = 0x20; c < 0x7F; ++c) syms.push_back(c);
  return CharSet(syms);
}

std::vector<std::u32string> docs(std::initializer_list<const char*> list) {
  std::vector<std::u32string> out;
  for (const char* s : list) out.push_back(u32(s));
  return out;
}

// Line-by-line transcription of the reference weighting procedure, kept
// independent of the library implementation on purpose: it recomputes scores
// from scratch with its own counting.
double reference_word_weight(const std::u32string& word, const std::vector<std::u32string>& documents) {
  std::map<char32_t, long> u_counts;
  std::map<std::u32string, long> b_counts;
  for (const auto& doc : documents) {
    for (const auto& w : split_words(doc)) {
      for (char32_t c : w) ++u_counts[c];
      std::u32string padded = U" " + w + U" ";
      for (std::size_t i = 0; i + 1 < padded.size(); ++i) ++b_counts[padded.substr(i, 2)];
    }
  }
  double u_score = 0;
  for (char32_t c : word) u_score += static_cast<double>(u_counts[c]);
  u_score /= static_cast<double>(word.size());
  std::u32string padded = U" " + word + U" ";
  double b_score = 0;
  for (std::size_t i = 0; i + 1 < padded.size(); ++i) b_score += static_cast<double>(b_counts[padded.substr(i, 2)]);
  b_score /= static_cast<double>(padded.size() - 1);
  return (u_score + b_score) / 2.0;
}

}  // namespace

TEST_CASE("ingest_corpus counts unigrams over words and bigrams over padded words") {
  const auto cs = ascii_charset();
  const auto t = ingest_corpus(docs({"ab ab"}), cs);
  CHECK(t.unigram(U'a') == 2);
  CHECK(t.unigram(U'b') == 2);
  CHECK(t.u_counts.size() == 2);
  CHECK(t.bigram(u32(" a")) == 2);
  CHECK(t.bigram(u32("ab")) == 2);
  CHECK(t.bigram(u32("b ")) == 2);
  CHECK(t.b_counts.size() == 3);
}

TEST_CASE("ingest_corpus of empty documents yields empty tables") {
  const auto t = ingest_corpus(docs({""}), ascii_charset());
  CHECK(t.u_counts.empty());
  CHECK(t.b_counts.empty());
}

TEST_CASE("ingest_corpus rejects characters outside the charset, naming them") {
  const CharSet cs(u32("ab "));
  try {
    ingest_corpus({u32("aé")}, cs);
    FAIL("expected rejection");
  } catch (const Error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("é") != std::string::npos);
    CHECK(msg.find("document 0") != std::string::npos);
  }
}

TEST_CASE("word_weight with uniform counts averages the two scores") {
  // every unigram count 5, every bigram count 3 -> (5+3)/2
  NgramTable t;
  const std::u32string word = u32("stylus");
  for (char32_t c : word) t.u_counts[c] = 5;
  std::u32string padded = U" " + word + U" ";
  for (std::size_t i = 0; i + 1 < padded.size(); ++i) t.b_counts[padded.substr(i, 2)] = 3;
  CHECK(word_weight(word, t) == doctest::Approx(4.0).epsilon(1e-15));
}

TEST_CASE("word_weight single-character word") {
  NgramTable t;
  t.u_counts[U'a'] = 7;
  t.b_counts[u32(" a")] = 2;
  t.b_counts[u32("a ")] = 4;
  CHECK(word_weight(u32("a"), t) == doctest::Approx(5.0).epsilon(1e-15));
}

TEST_CASE("word_weight missing n-gram is a lookup error, never zero") {
  NgramTable t;
  t.u_counts[U'a'] = 1;
  CHECK_THROWS_AS(static_cast<void>(word_weight(u32("a"), t)), Error);  // missing bigrams
  CHECK_THROWS_AS(static_cast<void>(word_weight(u32("b"), t)), Error);  // missing unigram
}

TEST_CASE("reference-procedure fidelity on three fixed corpora") {
  // Expected values frozen from an independent execution of the reference
  // Python procedure (itertools.pairwise convention).
  const auto corpus_a = docs({"ab ab", "cd"});
  const auto corpus_b = docs({"the cat sat on the mat", "a cat and a rat", "the end"});
  const auto corpus_c = docs({"mississippi", "missive kiss", "sip", "piss is", "imp"});

  const std::vector<std::pair<std::string, double>> expected_a = {{"ab", 2.0}, {"cd", 1.0}};
  const std::vector<std::pair<std::string, double>> expected_b = {
      {"the", 4.0},          {"cat", 4.75},        {"sat", 4.333333333333334},
      {"on", 1.5},           {"mat", 4.333333333333334}, {"a", 5.25},
      {"and", 3.1666666666666665}, {"rat", 4.333333333333334}, {"end", 2.25}};
  const std::vector<std::pair<std::string, double>> expected_c = {
      {"mississippi", 6.4393939393939394}, {"missive", 5.017857142857142}, {"kiss", 6.1},
      {"sip", 5.791666666666667},          {"piss", 6.7},                  {"is", 7.583333333333333},
      {"imp", 3.9166666666666665}};

  const auto cs = ascii_charset();
  const std::vector<std::pair<std::vector<std::u32string>, std::vector<std::pair<std::string, double>>>> cases = {
      {corpus_a, expected_a}, {corpus_b, expected_b}, {corpus_c, expected_c}};
  for (const auto& [corpus, expected] : cases) {
    const auto tables = ingest_corpus(corpus, cs);
    for (const auto& [word, value] : expected) {
      const double got = word_weight(u32(word), tables);
      CHECK(std::abs(got - value) <= 1e-12);
      // and the in-test reference re-computation agrees too
      CHECK(std::abs(reference_word_weight(u32(word), corpus) - got) <= 1e-12);
    }
  }
}

TEST_CASE("word_weight is invariant to document order") {
  const auto cs = ascii_charset();
  const auto c1 = docs({"the cat sat", "a rat and a mat", "the end"});
  auto c2 = c1;
  std::reverse(c2.begin(), c2.end());
  const auto t1 = ingest_corpus(c1, cs);
  const auto t2 = ingest_corpus(c2, cs);
  for (const char* w : {"the", "cat", "rat", "end"}) {
    CHECK(word_weight(u32(w), t1) == word_weight(u32(w), t2));
  }
}

TEST_CASE("scaling all counts scales weights linearly") {
  const auto cs = ascii_charset();
  auto t = ingest_corpus(docs({"the cat sat on the mat"}), cs);
  NgramTable scaled = t;
  for (auto& [k, v] : scaled.u_counts) v *= 7;
  for (auto& [k, v] : scaled.b_counts) v *= 7;
  for (const char* w : {"the", "cat", "mat"}) {
    CHECK(word_weight(u32(w), scaled) == doctest::Approx(7.0 * word_weight(u32(w), t)).epsilon(1e-12));
  }
}

TEST_CASE("sample_line with a single-word lexicon") {
  WeightedLexicon lex;
  lex.entries = {{u32("hi"), 1.0}};
  lex.normalization = 1.0;
  Rng rng(123);
  const auto line = sample_line(lex, 3, 3, rng);
  CHECK(line.word_count == 3);
  CHECK(utf8_encode(line.rendered) == "hi hi hi");
}

TEST_CASE("sample_line word count is uniform over the range") {
  WeightedLexicon lex;
  lex.entries = {{u32("a"), 1.0}, {u32("b"), 2.0}};
  lex.normalization = 3.0;
  Rng rng(99);
  const int n = 10000;
  std::map<int, int> histogram;
  for (int i = 0; i < n; ++i) ++histogram[sample_line(lex, 4, 7, rng).word_count];
  // multinomial: each bucket ~ n/4, sigma = sqrt(n * p (1-p))
  const double expect = n / 4.0;
  const double sigma = std::sqrt(n * 0.25 * 0.75);
  for (int k = 4; k <= 7; ++k) {
    CHECK(std::abs(histogram[k] - expect) < 3.0 * sigma);
  }
}

TEST_CASE("sample_line draws words proportionally to weight") {
  WeightedLexicon lex;
  lex.entries = {{u32("x"), 3.0}, {u32("y"), 1.0}};
  lex.normalization = 4.0;
  Rng rng(7);
  const int n = 40000;
  int count_x = 0;
  for (int i = 0; i < n; ++i) {
    if (sample_line(lex, 1, 1, rng).rendered == u32("x")) ++count_x;
  }
  const double p = 0.75;
  const double sigma = std::sqrt(n * p * (1 - p));
  CHECK(std::abs(count_x - n * p) < 3.0 * sigma);
}

TEST_CASE("sample_line determinism and empty-lexicon error") {
  WeightedLexicon lex;
  lex.entries = {{u32("one"), 1.0}, {u32("two"), 0.5}, {u32("three"), 2.0}};
  lex.normalization = 3.5;
  Rng r1(42), r2(42);
  for (int i = 0; i < 50; ++i) {
    CHECK(sample_line(lex, 1, 5, r1).rendered == sample_line(lex, 1, 5, r2).rendered);
  }
  WeightedLexicon empty;
  Rng r3(1);
  CHECK_THROWS_AS(static_cast<void>(sample_line(empty, 1, 3, r3)), Error);
}

TEST_CASE("character_frequency basics") {
  const CharSet cs(u32("ab c"));
  const auto line = TextLine::from_words({u32("aa")});
  const auto freq = character_frequency({line}, cs);
  CHECK(freq.at(U'a') == doctest::Approx(1.0));
  CHECK(freq.at(U'b') == 0.0);
  CHECK(freq.at(U'c') == 0.0);
  CHECK(freq.at(U' ') == 0.0);
  double total = 0;
  for (const auto& [c, v] : freq) total += v;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("weighted sampling flattens character frequencies vs uniform word draws") {
  const auto cs = ascii_charset();
  // A corpus with a deliberately skewed character distribution: 'z', 'q' and
  // digits are rare, 'e'/'t' common.
  const auto corpus = docs({
      "the tree sees the sette between these tenets",
      "tess sets the tent ten feet deep",
      "we need the tenth sheet tested",
      "zebra quartz jinx 42 70 quiz",
      "every letter meets the street these evenings",
  });
  const auto tables = ingest_corpus(corpus, cs);
  const auto weighted = build_lexicon(corpus, tables);
  WeightedLexicon uniform;
  for (const auto& e : weighted.entries) {
    uniform.entries.push_back({e.word, 1.0});
    uniform.normalization += 1.0;
  }

  Rng rw(5), ru(5);
  std::vector<TextLine> lines_w, lines_u;
  for (int i = 0; i < 4000; ++i) {
    lines_w.push_back(sample_line(weighted, 1, 8, rw));
    lines_u.push_back(sample_line(uniform, 1, 8, ru));
  }
  const double spread_w = frequency_spread(character_frequency(lines_w, cs));
  const double spread_u = frequency_spread(character_frequency(lines_u, cs));
  CHECK(spread_w < spread_u);
}

TEST_CASE("lexicon and ngram tables round-trip through their TSV formats") {
  testutil::TempDir tmp("textgen");
  const auto cs = ascii_charset();
  const auto corpus = docs({"the cat sat on the mat", "a quiet end"});
  const auto tables = ingest_corpus(corpus, cs);
  const auto lexicon = build_lexicon(corpus, tables);

  tables.to_file(tmp.sub("ngrams.tsv"));
  lexicon.to_file(tmp.sub("lexicon.tsv"));
  const auto tables2 = NgramTable::from_file(tmp.sub("ngrams.tsv"));
  const auto lexicon2 = WeightedLexicon::from_file(tmp.sub("lexicon.tsv"));

  CHECK(tables2.u_counts == tables.u_counts);
  CHECK(tables2.b_counts == tables.b_counts);
  REQUIRE(lexicon2.entries.size() == lexicon.entries.size());
  for (std::size_t i = 0; i < lexicon.entries.size(); ++i) {
    CHECK(lexicon2.entries[i].word == lexicon.entries[i].word);
    CHECK(lexicon2.entries[i].weight == lexicon.entries[i].weight);  // bit-exact via %.17g
  }

  // second write is byte-identical
  tables2.to_file(tmp.sub("ngrams2.tsv"));
  lexicon2.to_file(tmp.sub("lexicon2.tsv"));
  CHECK(read_text_file(tmp.sub("ngrams.tsv")) == read_text_file(tmp.sub("ngrams2.tsv")));
  CHECK(read_text_file(tmp.sub("lexicon.tsv")) == read_text_file(tmp.sub("lexicon2.tsv")));
}

TEST_CASE("charset invariants") {
  CHECK_THROWS_AS(CharSet(u32("aab ")), Error);  // duplicate
  CHECK_THROWS_AS(CharSet(u32("ab")), Error);    // no space
  const CharSet cs(u32("ab "));
  CHECK(cs.index_of(U'a') == 0);
  CHECK(cs.contains(U' '));
  CHECK_THROWS_AS(cs.index_of(U'z'), Error);
}

TEST_CASE("text line construction rules") {
  CHECK_THROWS_AS(TextLine::from_words({}), Error);
  const auto line = TextLine::from_words({u32("a"), u32("b")});
  CHECK(line.word_count == 2);
  CHECK(line.rendered == u32("a b"));
  std::vector<std::u32string> too_many(33, u32("w"));
  CHECK_THROWS_AS(TextLine::from_words(too_many), Error);
}
