#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <map>

#include "formt/converter.hpp"
#include "formt/error.hpp"
#include "formt/eval.hpp"

using namespace formt;

namespace {

TokenStream math(const std::vector<std::string>& texts) {
  return stream_from_texts(texts, Language::MathematicaInput);
}

std::vector<FormulaPair> synthetic(std::size_t n, std::uint64_t seed = 3) {
  return generate_synthetic(GrammarConfig::standard(seed, n));
}

// Looks the source up in the corpus itself.
Translator oracle_translator(const std::vector<FormulaPair>& pairs) {
  auto table = std::make_shared<std::map<std::string, std::string>>();
  for (const auto& p : pairs) (*table)[p.source] = p.target;
  return [table](std::string_view s) { return table->at(std::string(s)); };
}

}  // namespace

TEST_CASE("syntax validity examples") {
  CHECK(syntax_validity(math({"Pochhammer", "[", "x", ",", "n", "]"})));
  CHECK_FALSE(syntax_validity(math({"(", "x"})));
  CHECK(syntax_validity(math({})));
  CHECK_FALSE(syntax_validity(math({"(", "x", "]"})));
  CHECK_FALSE(syntax_validity(math({"[", "(", "]", ")"})));
  CHECK_FALSE(syntax_validity(math({"x", "+"})));
  CHECK_FALSE(syntax_validity(math({"*", "x"})));
  CHECK(syntax_validity(math({"-", "x"})));
  CHECK_FALSE(syntax_validity(math({"Sin", "x"})));
  CHECK(syntax_validity(math({"Pi", "*", "x"})));
  CHECK(syntax_validity(tokenize_mathematica("Sum[n, {k, 1, Infinity}]")));
  CHECK(syntax_validity(tokenize_latex("\\frac{x}{2}", Language::SemanticLatex)));
  CHECK_FALSE(syntax_validity(tokenize_latex("\\frac{x}{2", Language::SemanticLatex)));
}

TEST_CASE("syntax validity accepts the synthetic grammar") {
  for (const auto& p : synthetic(500)) CHECK(syntax_validity(tokenize_mathematica(p.target)));
}

TEST_CASE("oov report") {
  const auto pairs = synthetic(100);
  std::vector<TokenStream> streams;
  for (const auto& p : pairs) streams.push_back(tokenize_latex(p.source));
  const auto vocab = Vocabulary::build(streams);
  CHECK(oov_report(streams, vocab) == 0.0);
  std::vector<TokenStream> novel = {tokenize_latex("\\novel x"), tokenize_latex("x \\unseen")};
  CHECK(oov_report(novel, vocab) == 1.0);
  novel.push_back(tokenize_latex("x"));
  CHECK(oov_report(novel, vocab) == doctest::Approx(2.0 / 3.0));
  CHECK_THROWS_AS(oov_report({}, vocab), UndefinedMetricError);
}

TEST_CASE("back translation with a perfect translator") {
  const auto pairs = synthetic(80);
  const auto report = back_translation_eval(oracle_translator(pairs), pairs,
                                            Language::LatexPresentation, Language::MathematicaInput);
  CHECK(report.metrics.em_accuracy == 1.0);
  CHECK(report.metrics.bleu == 100.0);
  CHECK(report.metrics.ld_avg == 0.0);
  CHECK(report.validity_fraction == 1.0);
  CHECK(report.records.size() == pairs.size());
  CHECK_THROWS_AS(back_translation_eval(oracle_translator(pairs), {}, Language::LatexPresentation,
                                        Language::MathematicaInput),
                  UndefinedMetricError);
}

TEST_CASE("back translation survives failing formulae") {
  const auto pairs = synthetic(20);
  int calls = 0;
  const Translator flaky = [&](std::string_view) -> std::string {
    if (++calls % 3 == 0) throw LengthError("too long");
    return "x";
  };
  const auto report = back_translation_eval(flaky, pairs, Language::LatexPresentation,
                                            Language::MathematicaInput);
  REQUIRE(report.records.size() == pairs.size());
  std::size_t errors = 0;
  for (const auto& r : report.records) {
    if (!r.error.empty()) {
      ++errors;
      CHECK(r.error.rfind("translate: ", 0) == 0);
      CHECK_FALSE(r.exact);
    }
  }
  CHECK(errors == 6);
  CHECK(eval_report_json(report).find("\"errors\": 6") != std::string::npos);
}

TEST_CASE("round trip with in-process converters") {
  const auto pairs = synthetic(40);
  const Translator identity = [](std::string_view s) { return std::string(s); };
  IdentityConverter id;
  const auto ok = round_trip_eval(identity, id, pairs, Language::LatexPresentation,
                                  Language::MathematicaInput);
  CHECK(ok.metrics.em_accuracy == 1.0);
  CHECK(ok.validity_fraction == 1.0);
  RejectingConverter reject;
  const auto bad = round_trip_eval(identity, reject, pairs, Language::LatexPresentation,
                                   Language::MathematicaInput);
  CHECK(bad.metrics.em_accuracy == 0.0);
  CHECK(bad.validity_fraction == 0.0);
  CHECK(bad.records.size() == pairs.size());

  // The true translation composed with the grammar converter returns the source.
  GrammarConverter grammar(GrammarConfig::standard(0, 0), Language::LatexPresentation,
                           Language::MathematicaInput);
  const auto rt = round_trip_eval(oracle_translator(pairs), grammar, pairs,
                                  Language::LatexPresentation, Language::MathematicaInput);
  CHECK(rt.metrics.em_accuracy == 1.0);

  TableConverter one_way(Direction::PresentationToContent, {});
  CHECK_THROWS_AS(round_trip_eval(identity, one_way, pairs, Language::LatexPresentation,
                                  Language::MathematicaInput),
                  HarnessError);
}

TEST_CASE("table converter") {
  TableConverter t(Direction::ContentToPresentation, {{"Sin[x]", "\\sin(x)"}});
  CHECK(t.convert(Direction::ContentToPresentation, "Sin[x]").text == "\\sin(x)");
  CHECK_FALSE(t.convert(Direction::ContentToPresentation, "Cos[x]").ok);
  CHECK_FALSE(t.convert(Direction::PresentationToContent, "Sin[x]").ok);
}

TEST_CASE("direction names") {
  CHECK(direction_name(Direction::ContentToPresentation) == "content-to-presentation");
  CHECK(parse_direction("presentation-to-content") == Direction::PresentationToContent);
  CHECK_THROWS_AS(parse_direction("sideways"), Error);
}

TEST_CASE("subprocess converter over the line protocol") {
  SubprocessConverter stub({FORMT_CONVERTER_STUB, "grammar"},
                           {Direction::ContentToPresentation, Direction::PresentationToContent});
  REQUIRE(stub.available());
  CHECK(stub.name() == "stub-grammar");
  CHECK(stub.version() == "1");
  const auto r = stub.convert(Direction::ContentToPresentation, "Pochhammer[x, n]");
  CHECK(r.ok);
  CHECK(r.text == "(x)_{n}");
  const auto bad = stub.convert(Direction::ContentToPresentation, "Frobnicate[x]");
  CHECK_FALSE(bad.ok);
  // Still serving after a rejection.
  CHECK(stub.convert(Direction::PresentationToContent, "\\sin(x)").text == "Sin[x]");

  const auto pairs = synthetic(30);
  const auto rt = round_trip_eval(oracle_translator(pairs), stub, pairs,
                                  Language::LatexPresentation, Language::MathematicaInput);
  CHECK(rt.metrics.em_accuracy == 1.0);

  SubprocessConverter reject({FORMT_CONVERTER_STUB, "reject"}, {Direction::ContentToPresentation});
  REQUIRE(reject.available());
  CHECK_FALSE(reject.convert(Direction::ContentToPresentation, "x").ok);
}

TEST_CASE("unavailable subprocess converter") {
  SubprocessConverter missing({"/nonexistent/formt-converter"}, {Direction::ContentToPresentation});
  CHECK_FALSE(missing.available());
  CHECK_FALSE(missing.status().empty());
  const auto pairs = synthetic(3);
  const Translator identity = [](std::string_view s) { return std::string(s); };
  CHECK_THROWS_AS(round_trip_eval(identity, missing, pairs, Language::LatexPresentation,
                                  Language::MathematicaInput),
                  HarnessError);
  CHECK_FALSE(missing.convert(Direction::ContentToPresentation, "x").ok);
}

TEST_CASE("make_converter") {
  CHECK(make_converter("identity", Language::LatexPresentation, Language::MathematicaInput)->name() ==
        "identity");
  CHECK(make_converter("grammar", Language::LatexPresentation, Language::MathematicaInput)->name() ==
        "grammar");
  CHECK_THROWS_AS(make_converter("bogus", Language::LatexPresentation, Language::MathematicaInput),
                  Error);
}

TEST_CASE("reports are reproducible and written with a sidecar") {
  const auto pairs = synthetic(25);
  const Translator half = [](std::string_view s) { return s.size() % 2 ? std::string("x") : std::string(s); };
  const auto a = back_translation_eval(half, pairs, Language::LatexPresentation, Language::MathematicaInput);
  const auto b = back_translation_eval(half, pairs, Language::LatexPresentation, Language::MathematicaInput);
  CHECK(eval_report_json(a) == eval_report_json(b));
  CHECK(eval_records_jsonl(a) == eval_records_jsonl(b));
  const auto dir = std::filesystem::temp_directory_path() / "formt_test_eval";
  std::filesystem::create_directories(dir);
  write_eval_report(dir / "report.json", a);
  CHECK(std::filesystem::exists(dir / "report.json"));
  std::ifstream side(dir / "report.records.jsonl");
  std::size_t lines = 0;
  for (std::string line; std::getline(side, line);) lines += !line.empty();
  CHECK(lines == pairs.size());
  std::filesystem::remove_all(dir);
}
