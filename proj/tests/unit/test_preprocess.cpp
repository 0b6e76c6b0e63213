#include "doctest.h"

#include <filesystem>
#include <set>

#include "formt/corpus.hpp"
#include "formt/error.hpp"
#include "formt/pipeline.hpp"
#include "formt/preprocess.hpp"

using namespace formt;
using Texts = std::vector<std::string>;

namespace {

TokenStream latex(std::string_view s) { return tokenize_latex(s); }

}  // namespace

TEST_CASE("substitution leaves single digits alone") {
  const auto sub = substitute_numbers(latex("1"), 3);
  CHECK(sub.stream.texts() == Texts{"1"});
  CHECK(sub.map.empty());
  CHECK(substitute_numbers(latex(""), 3).stream.empty());
}

TEST_CASE("equal literals share one tag") {
  const auto sub = substitute_numbers(latex("42 + 42"), 7);
  REQUIRE(sub.stream.size() == 3);
  CHECK(sub.stream.tokens[0].kind == TokenKind::NumberTag);
  CHECK(sub.stream.tokens[0].text == sub.stream.tokens[2].text);
  REQUIRE(sub.map.size() == 1);
  CHECK(sub.map.assignments.begin()->second == "42");
}

TEST_CASE("distinct numbers get distinct tags, deterministic per seed") {
  const auto s = latex("10 + 11 - 12 + 10");
  const auto a = substitute_numbers(s, 99);
  const auto b = substitute_numbers(s, 99);
  CHECK(a.stream.tokens == b.stream.tokens);
  CHECK(a.map == b.map);
  CHECK(a.map.size() == 3);
  std::set<std::string> tags;
  for (const auto& t : a.stream.tokens) {
    if (t.kind == TokenKind::NumberTag) tags.insert(t.text);
  }
  CHECK(tags.size() == 3);
}

TEST_CASE("tags are drawn from the whole range") {
  std::set<int> seen;
  for (std::uint64_t seed = 0; seed < 400; ++seed) {
    for (const auto& [tag, value] : substitute_numbers(latex("77"), seed).map.assignments) {
      seen.insert(tag);
    }
  }
  CHECK(seen.size() == 32);
  CHECK(*seen.begin() == 1);
  CHECK(*seen.rbegin() == 32);
}

TEST_CASE("more than 32 distinct numbers") {
  std::string text;
  for (int i = 10; i < 43; ++i) text += std::to_string(i) + " + ";
  text += "1";
  CHECK_THROWS_AS(substitute_numbers(latex(text), 1), CapacityError);
  const auto split = substitute_numbers(latex(text), 1, OverflowPolicy::SplitDigits);
  CHECK(split.map.size() == 32);
  // The 33rd number, 42, becomes two digits.
  const auto texts = split.stream.texts();
  CHECK(texts[texts.size() - 4] == "4");
  CHECK(texts[texts.size() - 3] == "2");
  // Split digits stay split after restoration.
  CHECK(restore_numbers(split.stream, split.map).size() == tokenize_latex(text).size() + 1);
}

TEST_CASE("restore inverts substitute") {
  for (const char* text : {"x^{2024} + 17 y", "\\frac{315}{12} = 315", "", "12"}) {
    for (std::uint64_t seed : {0ull, 1ull, 12345ull}) {
      const auto s = latex(text);
      const auto sub = substitute_numbers(s, seed);
      CHECK(restore_numbers(sub.stream, sub.map).tokens == s.tokens);
    }
  }
}

TEST_CASE("restore with a missing tag raises") {
  const TokenStream s = stream_from_texts({"x", "<number_03>"}, Language::MathematicaInput);
  CHECK_THROWS_AS(restore_numbers(s, NumberMap{}), UnresolvedTagError);
  CHECK(restore_numbers(TokenStream{}, NumberMap{}).empty());
}

TEST_CASE("apply_number_map reuses source tags, splits the rest") {
  const auto sub = substitute_numbers(latex("x^{2024}"), 5);
  const auto target = apply_number_map(tokenize_mathematica("x^2024 + 35"), sub.map);
  const auto texts = target.texts();
  REQUIRE(texts.size() == 6);
  CHECK(texts[2] == number_tag_text(sub.map.assignments.begin()->first));
  CHECK(target.tokens[2].kind == TokenKind::NumberTag);
  CHECK(texts[4] == "3");
  CHECK(texts[5] == "5");
}

TEST_CASE("number map serialization") {
  NumberMap m;
  m.assignments = {{3, "42"}, {17, "2024"}};
  CHECK(m.serialize() == "03=42,17=2024");
  CHECK(NumberMap::parse("03=42,17=2024") == m);
  CHECK(NumberMap::parse("").empty());
  CHECK(m.tag_for("2024") == 17);
  CHECK_FALSE(m.tag_for("7").has_value());
}

TEST_CASE("vocabulary reserved layout") {
  const Vocabulary v;
  CHECK(v.size() == 36);
  CHECK(v.token_of(Vocabulary::kPad) == "<pad>");
  CHECK(v.token_of(Vocabulary::kBos) == "<s>");
  CHECK(v.token_of(Vocabulary::kEos) == "</s>");
  CHECK(v.token_of(Vocabulary::kUnk) == "<unk>");
  for (int i = 1; i <= 32; ++i) CHECK(v.id_of(number_tag_text(i)) == Vocabulary::kFirstTag + i - 1);
  CHECK(Vocabulary::build(std::span<const TokenStream>{}).size() == 36);
  CHECK_THROWS_AS(v.token_of(36), EncodingError);
}

TEST_CASE("vocabulary thresholds and ordering") {
  const std::vector<TokenStream> corpus = {latex("x"), latex("x"), latex("y")};
  const auto v2 = Vocabulary::build(corpus, 2);
  CHECK(v2.contains("x"));
  CHECK_FALSE(v2.contains("y"));
  const std::vector<TokenStream> tie = {latex("y"), latex("x")};
  const auto v1 = Vocabulary::build(tie, 1);
  CHECK(v1.id_of("x") < v1.id_of("y"));
  CHECK(v1.id_of("x") == Vocabulary::kReserved);
  const std::vector<TokenStream> freq = {latex("b b a")};
  CHECK(Vocabulary::build(freq).id_of("b") < Vocabulary::build(freq).id_of("a"));
}

TEST_CASE("vocabulary bijection and persistence") {
  GrammarConfig g = GrammarConfig::standard(3, 200);
  std::vector<TokenStream> streams;
  for (const auto& p : generate_synthetic(g)) streams.push_back(tokenize_latex(p.source));
  const auto v = Vocabulary::build(streams);
  for (int i = 0; i < v.size(); ++i) CHECK(v.id_of(v.token_of(i)) == i);
  const auto path = std::filesystem::temp_directory_path() / "formt_test_vocab.txt";
  v.save(path);
  CHECK(Vocabulary::load(path) == v);
  std::filesystem::remove(path);
}

TEST_CASE("encode and decode") {
  const std::vector<TokenStream> corpus = {latex("x")};
  const auto v = Vocabulary::build(corpus);
  CHECK(encode(TokenStream{}, v, true) == std::vector<int>{Vocabulary::kEos});
  CHECK(encode(latex("x"), v, true) == std::vector<int>{v.id_of("x"), Vocabulary::kEos});
  CHECK(encode(latex("q"), v, true) == std::vector<int>{Vocabulary::kUnk, Vocabulary::kEos});
  const std::vector<int> ids = {Vocabulary::kBos, v.id_of("x"), Vocabulary::kEos, v.id_of("x")};
  CHECK(decode_ids(ids, v, Language::LatexPresentation).texts() == Texts{"x"});
  CHECK(decode_ids(std::vector<int>{Vocabulary::kUnk}, v, Language::LatexPresentation).texts() ==
        Texts{"<unk>"});
}

TEST_CASE("length filter boundary") {
  std::vector<EncodedPair> pairs(3);
  pairs[0].source.assign(1024, 5);
  pairs[0].target.assign(1024, 5);
  pairs[1].source.assign(1025, 5);
  pairs[1].target.assign(10, 5);
  pairs[2].source.assign(3, 5);
  pairs[2].target.assign(1025, 5);
  const auto kept = filter_by_length(pairs);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].source.size() == 1024);
  CHECK(filter_by_length({}).empty());
}

TEST_CASE("split sizes") {
  const auto a = SplitSpec::from_fractions(0.97, 0.005, 0.025, 1).sizes(1000);
  CHECK(a == std::array<std::size_t, 3>{970, 5, 25});
  const auto b = SplitSpec::from_fractions(0.90, 0.05, 0.05, 1).sizes(100);
  CHECK(b == std::array<std::size_t, 3>{90, 5, 5});
  const auto c = SplitSpec::from_fractions(0.5, 0.25, 0.25, 1).sizes(11);
  CHECK(c[0] + c[1] + c[2] == 11);
  CHECK_THROWS_AS(SplitSpec::from_fractions(0.5, 0.2, 0.2, 1), ConfigError);
  CHECK_THROWS_AS(SplitSpec::from_fractions(1.2, -0.1, -0.1, 1), ConfigError);
}

TEST_CASE("split partition") {
  std::vector<int> items(257);
  for (int i = 0; i < 257; ++i) items[static_cast<std::size_t>(i)] = i;
  const auto spec = SplitSpec::from_fractions(0.8, 0.1, 0.1, 42);
  const auto s1 = split_corpus(items, spec);
  const auto s2 = split_corpus(items, spec);
  CHECK(s1.train == s2.train);
  CHECK(s1.valid == s2.valid);
  std::multiset<int> all(s1.train.begin(), s1.train.end());
  all.insert(s1.valid.begin(), s1.valid.end());
  all.insert(s1.test.begin(), s1.test.end());
  CHECK(all == std::multiset<int>(items.begin(), items.end()));
}

TEST_CASE("no Number token survives substitution") {
  GrammarConfig g = GrammarConfig::standard(8, 300);
  for (const auto& p : generate_synthetic(g)) {
    const auto tagged = tag_pair(p, {}, 1);
    for (const auto& t : tagged.source.tokens) CHECK(t.kind != TokenKind::Number);
    for (const auto& t : tagged.target.tokens) CHECK(t.kind != TokenKind::Number);
  }
}

TEST_CASE("shared dictionaries") {
  const std::vector<TaggedPair> pairs = {
      {latex("x"), tokenize_mathematica("Sin[x]"), {}, "0"}};
  const auto separate = build_dictionaries(pairs);
  CHECK_FALSE(separate.source.contains("Sin"));
  const auto shared = build_dictionaries(pairs, 1, true);
  CHECK(shared.source == shared.target);
  CHECK(shared.source.contains("Sin"));
}
