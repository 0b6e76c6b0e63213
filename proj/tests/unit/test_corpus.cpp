#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "formt/corpus.hpp"
#include "formt/error.hpp"

using namespace formt;

TEST_CASE("corpus parsing") {
  const auto pairs = parse_corpus(
      "{\"source\": \"x\", \"target\": \"x\", \"id\": \"a\"}\n\n{\"source\": \"y^{2}\", "
      "\"target\": \"y^2\", \"id\": 7}\n");
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[0] == FormulaPair{"x", "x", "a"});
  CHECK(pairs[1].id == "7");
  CHECK(parse_corpus("").empty());
}

TEST_CASE("corpus parse errors name the line") {
  try {
    parse_corpus("{\"source\": \"x\", \"target\": \"x\"}\n{not json", "file.jsonl");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("file.jsonl:2") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_corpus("{\"source\": \"x\"}"), SchemaError);
  CHECK_THROWS_AS(parse_corpus("{\"source\": 3, \"target\": \"x\"}"), SchemaError);
  CHECK_THROWS_AS(parse_corpus("{\"source\": \"\", \"target\": \"x\"}"), SchemaError);
  CHECK_THROWS_AS(parse_corpus("[1, 2]"), SchemaError);
}

TEST_CASE("corpus file round trip") {
  const auto path = std::filesystem::temp_directory_path() / "formt_test_corpus.jsonl";
  const auto pairs = generate_synthetic(GrammarConfig::standard(4, 50));
  save_corpus(path, pairs);
  CHECK(load_corpus(path) == pairs);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_corpus(path), Error);
}

TEST_CASE("corpus statistics") {
  std::vector<FormulaPair> pairs;
  for (int n : {10, 20, 30}) pairs.push_back({std::string(n, 'x'), std::string(n / 10, 'y'), ""});
  const auto s = corpus_stats(pairs);
  CHECK(s.count == 3);
  CHECK(s.source.mean == doctest::Approx(20.0));
  CHECK(s.source.median == doctest::Approx(20.0));
  CHECK(s.source.stddev == doctest::Approx(8.1650).epsilon(1e-4));
  CHECK(s.target.mean == doctest::Approx(2.0));
  const auto single = corpus_stats({{"abc", "a", ""}});
  CHECK(single.source.stddev == 0.0);
  // Even count: median is the mean of the middle two.
  const auto even = corpus_stats({{"a", "a", ""}, {"abc", "a", ""}});
  CHECK(even.source.median == doctest::Approx(2.0));
  // Code points, not bytes.
  CHECK(corpus_stats({{"\xce\xb1\xce\xb2", "a", ""}}).source.mean == doctest::Approx(2.0));
}

TEST_CASE("synthetic generation is deterministic") {
  const auto a = generate_synthetic(GrammarConfig::standard(11, 200));
  const auto b = generate_synthetic(GrammarConfig::standard(11, 200));
  const auto c = generate_synthetic(GrammarConfig::standard(12, 200));
  CHECK(a == b);
  CHECK(a != c);
  CHECK(a.size() == 200);
  CHECK(generate_synthetic(GrammarConfig::standard(1, 0)).empty());
}

TEST_CASE("a single-template grammar only yields that template") {
  GrammarConfig g = GrammarConfig::standard(3, 100);
  g.templates = {standard_template("pochhammer")};
  for (const auto& p : generate_synthetic(g)) {
    CHECK(p.target.find("Pochhammer[") != std::string::npos);
    CHECK(p.source.find(")_{") != std::string::npos);
  }
}

TEST_CASE("grammar validation") {
  GrammarConfig g = GrammarConfig::standard(1, 10);
  g.max_depth = 0;
  CHECK_THROWS_AS(generate_synthetic(g), ConfigError);
  g = GrammarConfig::standard(1, 10);
  g.templates.clear();
  CHECK_THROWS_AS(generate_synthetic(g), ConfigError);
  g = GrammarConfig::standard(1, 10);
  g.templates[0].mathematica.pattern = "#1 #1";
  CHECK_THROWS_AS(generate_synthetic(g), ConfigError);
  g = GrammarConfig::standard(1, 10);
  g.atoms.erase(std::remove_if(g.atoms.begin(), g.atoms.end(),
                               [](const Atom& a) { return a.category == Category::Variable; }),
                g.atoms.end());
  CHECK_THROWS_AS(generate_synthetic(g), ConfigError);
  CHECK_THROWS_AS(standard_template("no_such_template"), ConfigError);
}

TEST_CASE("synthetic pairs are aligned") {
  // An independent parse of the presentation side recovers the generated target.
  for (Language target : {Language::MathematicaInput, Language::SemanticLatex}) {
    GrammarConfig g = GrammarConfig::standard(21, 1000);
    g.target = target;
    std::size_t ok = 0;
    for (const auto& p : generate_synthetic(g)) {
      const auto readings = grammar_readings(g, p.source, Language::LatexPresentation, target);
      const bool found = std::find(readings.begin(), readings.end(), p.target) != readings.end();
      ok += found;
      if (!found) MESSAGE("unaligned: " << p.source << " -> " << p.target);
    }
    CHECK(ok == 1000);
  }
}

TEST_CASE("token bound holds") {
  for (int depth : {1, 2, 3, 4}) {
    GrammarConfig g = GrammarConfig::standard(5, 500, depth);
    const auto bound = max_token_bound(g);
    for (const auto& p : generate_synthetic(g)) {
      CHECK(tokenize_latex(p.source).size() <= bound);
      CHECK(tokenize_mathematica(p.target).size() <= bound);
    }
  }
  GrammarConfig g = GrammarConfig::standard(5, 10);
  const int d = max_depth_within(g, 1024);
  CHECK(d >= 1);
  g.max_depth = d;
  CHECK(max_token_bound(g) <= 1024);
  g.max_depth = d + 1;
  CHECK(max_token_bound(g) > 1024);
}

TEST_CASE("statistics json") {
  const auto j = stats_to_json(corpus_stats({{"ab", "abcd", ""}}));
  CHECK(j.find("\"count\"") != std::string::npos);
  CHECK(j.find("\"source\"") != std::string::npos);
  CHECK(j.find("\"median\"") != std::string::npos);
}
