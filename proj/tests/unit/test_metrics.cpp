#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "formt/error.hpp"
#include "formt/metrics.hpp"
#include "formt/rng.hpp"
#include "oracles.hpp"

using namespace formt;
using Words = std::vector<std::string>;

namespace {

TokenStream stream(const Words& words) {
  return stream_from_texts(words, Language::MathematicaInput);
}

Words random_words(Rng& rng, std::size_t max_len, int alphabet) {
  Words w(static_cast<std::size_t>(rng.between(0, static_cast<std::int64_t>(max_len))));
  for (auto& s : w) s = std::string(1, static_cast<char>('a' + rng.below(static_cast<std::uint64_t>(alphabet))));
  return w;
}

}  // namespace

TEST_CASE("exact match") {
  CHECK(exact_match(stream({"x", "+", "1"}), stream({"x", "+", "1"})));
  CHECK(exact_match(TokenStream{}, TokenStream{}));
  CHECK_FALSE(exact_match(tokenize_latex("E=mc^2"), tokenize_latex("E=mc^{2}")));
  CHECK_FALSE(exact_match(stream({"x"}), stream({"x", "x"})));
}

TEST_CASE("em accuracy") {
  std::vector<StreamPair> pairs = {{stream({"a"}), stream({"a"})},
                                   {stream({"a"}), stream({"b"})},
                                   {stream({"c"}), stream({"c"})},
                                   {stream({}), stream({"c"})}};
  CHECK(em_accuracy(pairs) == 0.5);
  pairs.resize(1);
  CHECK(em_accuracy(pairs) == 1.0);
  CHECK_THROWS_AS(em_accuracy({}), UndefinedMetricError);
}

TEST_CASE("levenshtein examples") {
  CHECK(levenshtein(stream({"a", "b"}), stream({"a", "b"})) == 0);
  CHECK(levenshtein(stream({"a"}), stream({"b"})) == 1);
  auto chars = [](std::string_view s) {
    Words w;
    for (char ch : s) w.emplace_back(1, ch);
    return w;
  };
  const auto k = chars("kitten");
  const auto s = chars("sitting");
  CHECK(levenshtein(std::span<const std::string>(k), std::span<const std::string>(s)) == 3);
  CHECK(oracle::naive_levenshtein(k, s) == 3);
}

TEST_CASE("levenshtein equals naive recursion exhaustively") {
  const auto seqs = oracle::all_sequences(5, {"a", "b", "c"});
  REQUIRE(seqs.size() == 364);
  std::size_t mismatches = 0;
  for (const auto& a : seqs) {
    for (const auto& b : seqs) {
      const auto dp = levenshtein(std::span<const std::string>(a), std::span<const std::string>(b));
      mismatches += dp != oracle::naive_levenshtein(a, b);
    }
  }
  CHECK(mismatches == 0);
}

TEST_CASE("levenshtein axioms") {
  Rng rng(5);
  for (int trial = 0; trial < 500; ++trial) {
    const auto a = stream(random_words(rng, 12, 4));
    const auto b = stream(random_words(rng, 12, 4));
    const auto c = stream(random_words(rng, 12, 4));
    CHECK(levenshtein(a, a) == 0);
    CHECK(levenshtein(a, b) == levenshtein(b, a));
    CHECK(levenshtein(a, c) <= levenshtein(a, b) + levenshtein(b, c));
    CHECK(levenshtein(a, b) <= std::max(a.size(), b.size()));
    CHECK(exact_match(a, b) == (levenshtein(a, b) == 0));
  }
}

TEST_CASE("ld statistics") {
  std::vector<StreamPair> same = {{stream({"a"}), stream({"a"})}, {stream({}), stream({})}};
  const auto s = ld_stats(same);
  CHECK(s.average == 0.0);
  CHECK(s.within_threshold == 1.0);
  std::vector<StreamPair> mixed = {{stream({"a"}), stream({"a"})},
                                   {stream(Words(10, "x")), stream({})}};
  const auto m = ld_stats(mixed);
  CHECK(m.average == 5.0);
  CHECK(m.within_threshold == 0.5);
  CHECK_THROWS_AS(ld_stats({}), UndefinedMetricError);
}

TEST_CASE("bleu worked example") {
  const std::vector<TokenStream> p = {stream({"a", "b", "c", "d", "e"})};
  const std::vector<TokenStream> r = {stream({"a", "b", "c", "d", "f"})};
  const double expected = 100.0 * std::pow(4.0 / 5 * 3.0 / 4 * 2.0 / 3 * 1.0 / 2, 0.25);
  CHECK(std::abs(bleu(p, r) - expected) < 1e-9);
  CHECK(std::abs(bleu(p, r) - 66.87) <= 0.01);
}

TEST_CASE("bleu boundaries") {
  const std::vector<TokenStream> x = {stream({"a", "b", "c", "d"}), stream({"e", "f", "g", "h", "i"})};
  CHECK(bleu(x, x) == 100.0);
  const std::vector<TokenStream> empty(2);
  CHECK(bleu(empty, x) == 0.0);
  CHECK_THROWS_AS(bleu(std::vector<TokenStream>{}, std::vector<TokenStream>{}), UndefinedMetricError);
  CHECK_THROWS_AS(bleu(x, std::vector<TokenStream>(1)), InputError);
  // No shared 4-gram gives zero.
  const std::vector<TokenStream> p = {stream({"a", "b", "c", "x", "d"})};
  const std::vector<TokenStream> r = {stream({"a", "b", "c", "y", "d"})};
  CHECK(bleu(p, r) == 0.0);
}

TEST_CASE("bleu matches an independent implementation") {
  Rng rng(17);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<Words> hyps, refs;
    const int n = static_cast<int>(rng.between(1, 6));
    for (int i = 0; i < n; ++i) {
      auto ref = random_words(rng, 20, 3);
      while (ref.size() < 4) ref.push_back("a");
      auto hyp = ref;
      for (auto& w : hyp) if (rng.uniform() < 0.15) w = "z";
      if (rng.uniform() < 0.3 && hyp.size() > 4) hyp.resize(hyp.size() - 2);
      hyps.push_back(hyp);
      refs.push_back(ref);
    }
    CHECK(bleu(std::span<const Words>(hyps), std::span<const Words>(refs)) ==
          doctest::Approx(oracle::bleu(hyps, refs)).epsilon(1e-12));
  }
}

TEST_CASE("bleu is invariant to pair order") {
  Rng rng(3);
  std::vector<Words> hyps, refs;
  for (int i = 0; i < 8; ++i) {
    auto ref = random_words(rng, 15, 3);
    auto hyp = ref;
    if (!hyp.empty()) hyp[0] = "q";
    hyps.push_back(hyp);
    refs.push_back(ref);
  }
  const double base = bleu(std::span<const Words>(hyps), std::span<const Words>(refs));
  std::vector<std::size_t> order(8);
  for (std::size_t i = 0; i < 8; ++i) order[i] = i;
  for (int k = 0; k < 10; ++k) {
    rng.shuffle(std::span<std::size_t>(order));
    std::vector<Words> h2, r2;
    for (auto i : order) {
      h2.push_back(hyps[i]);
      r2.push_back(refs[i]);
    }
    CHECK(bleu(std::span<const Words>(h2), std::span<const Words>(r2)) == base);
  }
}

TEST_CASE("perplexity") {
  const int v = 512;
  std::vector<std::vector<double>> uniform(7, std::vector<double>(v, 1.0 / v));
  const std::vector<int> refs = {0, 5, 100, 511, 3, 3, 9};
  CHECK(std::abs(perplexity(uniform, refs) - v) < 1e-9);
  std::vector<std::vector<double>> certain(refs.size(), std::vector<double>(v, 0.0));
  for (std::size_t t = 0; t < refs.size(); ++t) certain[t][static_cast<std::size_t>(refs[t])] = 1.0;
  CHECK(std::abs(perplexity(certain, refs) - 1.0) < 1e-9);
  const std::vector<std::vector<double>> halves(2, {0.5, 0.5});
  CHECK(perplexity(halves, std::vector<int>{0, 1}) == doctest::Approx(2.0));
  const std::vector<std::vector<double>> zero = {{1.0, 0.0}};
  CHECK(perplexity(zero, std::vector<int>{1}) == kInfinitePerplexity);
  // PAD positions are skipped.
  const std::vector<std::vector<double>> padded = {{0.5, 0.5}, {1.0, 0.0}};
  CHECK(perplexity(padded, std::vector<int>{0, 1}, 1) == doctest::Approx(2.0));
  CHECK_THROWS_AS(perplexity(padded, std::vector<int>{1, 1}, 1), UndefinedMetricError);
  CHECK_THROWS_AS(perplexity(padded, std::vector<int>{0}), InputError);
  const std::vector<double> lp = {std::log(0.25), std::log(0.25)};
  CHECK(perplexity_from_log_probs(lp) == doctest::Approx(4.0));
}

TEST_CASE("metric report") {
  std::vector<StreamPair> pairs = {{stream({"a", "b", "c", "d"}), stream({"a", "b", "c", "d"})},
                                   {stream({"a", "b", "c", "e"}), stream({"a", "b", "c", "d"})}};
  const auto r = compute_metrics(pairs);
  CHECK(r.count == 2);
  CHECK(r.em_accuracy == 0.5);
  CHECK(r.em_accuracy <= r.ld_leq5);
  CHECK(r.ld_avg == 0.5);
  const auto j = metric_report_json(r);
  for (const char* key : {"\"em\"", "\"ld_avg\"", "\"ld_leq5\"", "\"bleu\"", "\"count\""}) {
    CHECK(j.find(key) != std::string::npos);
  }
}
