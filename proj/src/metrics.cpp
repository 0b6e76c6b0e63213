#include "formt/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>

#include "formt/error.hpp"
#include "json.hpp"

namespace formt {

std::string metric_report_json(const MetricReport& r) {
  return nlohmann::json{{"em", r.em_accuracy},
                        {"ld_avg", r.ld_avg},
                        {"ld_leq5", r.ld_leq5},
                        {"bleu", r.bleu},
                        {"count", r.count}}
      .dump();
}

bool exact_match(const TokenStream& prediction, const TokenStream& reference) {
  if (prediction.size() != reference.size()) return false;
  for (std::size_t i = 0; i < prediction.size(); ++i) {
    if (prediction.tokens[i].text != reference.tokens[i].text) return false;
  }
  return true;
}

double em_accuracy(std::span<const StreamPair> pairs) {
  if (pairs.empty()) throw UndefinedMetricError("exact-match accuracy of an empty list");
  std::size_t hits = 0;
  for (const auto& [pred, ref] : pairs) hits += exact_match(pred, ref);
  return static_cast<double>(hits) / static_cast<double>(pairs.size());
}

std::size_t levenshtein(std::span<const std::string> a, std::span<const std::string> b) {
  if (a.size() < b.size()) std::swap(a, b);
  // b is the shorter sequence; one row of |b|+1 cells.
  std::vector<std::size_t> row(b.size() + 1);
  std::iota(row.begin(), row.end(), std::size_t{0});
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diagonal = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t above = row[j];
      const std::size_t substitute = diagonal + (a[i - 1] == b[j - 1] ? 0 : 1);
      row[j] = std::min({above + 1, row[j - 1] + 1, substitute});
      diagonal = above;
    }
  }
  return row[b.size()];
}

std::size_t levenshtein(const TokenStream& a, const TokenStream& b) {
  const auto ta = a.texts();
  const auto tb = b.texts();
  return levenshtein(std::span<const std::string>(ta), std::span<const std::string>(tb));
}

LdStats ld_stats(std::span<const StreamPair> pairs, std::size_t threshold) {
  if (pairs.empty()) throw UndefinedMetricError("Levenshtein statistics of an empty list");
  double total = 0.0;
  std::size_t within = 0;
  for (const auto& [pred, ref] : pairs) {
    const std::size_t d = levenshtein(pred, ref);
    total += static_cast<double>(d);
    within += d <= threshold;
  }
  const auto n = static_cast<double>(pairs.size());
  return {total / n, static_cast<double>(within) / n};
}

namespace {

using Ngram = std::vector<std::string>;

std::map<Ngram, std::size_t> ngram_counts(const std::vector<std::string>& tokens, std::size_t n) {
  std::map<Ngram, std::size_t> counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    ++counts[Ngram(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                   tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

}  // namespace

double bleu(std::span<const std::vector<std::string>> predictions,
            std::span<const std::vector<std::string>> references) {
  if (predictions.size() != references.size()) {
    throw InputError("BLEU needs one reference per prediction");
  }
  if (predictions.empty()) throw UndefinedMetricError("BLEU of an empty corpus");
  constexpr std::size_t kMaxOrder = 4;
  std::array<std::size_t, kMaxOrder> matches{};
  std::array<std::size_t, kMaxOrder> totals{};
  std::array<std::size_t, kMaxOrder> reference_totals{};
  std::size_t hyp_len = 0;
  std::size_t ref_len = 0;
  for (std::size_t s = 0; s < predictions.size(); ++s) {
    const auto& hyp = predictions[s];
    const auto& ref = references[s];
    hyp_len += hyp.size();
    ref_len += ref.size();
    for (std::size_t n = 1; n <= kMaxOrder; ++n) {
      const auto hyp_counts = ngram_counts(hyp, n);
      const auto ref_counts = ngram_counts(ref, n);
      for (const auto& [gram, count] : hyp_counts) {
        const auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) matches[n - 1] += std::min(count, it->second);
      }
      if (hyp.size() >= n) totals[n - 1] += hyp.size() - n + 1;
      if (ref.size() >= n) reference_totals[n - 1] += ref.size() - n + 1;
    }
  }
  if (hyp_len == 0) return 0.0;
  double log_sum = 0.0;
  int orders = 0;
  for (std::size_t n = 0; n < kMaxOrder; ++n) {
    // An order absent from both sides carries no evidence and is left out.
    if (totals[n] == 0 && reference_totals[n] == 0) continue;
    if (matches[n] == 0) return 0.0;
    log_sum += std::log(static_cast<double>(matches[n]) / static_cast<double>(totals[n]));
    ++orders;
  }
  if (orders == 0) return 0.0;
  const double brevity =
      hyp_len < ref_len
          ? std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len))
          : 1.0;
  return 100.0 * brevity * std::exp(log_sum / orders);
}

double bleu(std::span<const TokenStream> predictions, std::span<const TokenStream> references) {
  std::vector<std::vector<std::string>> p, r;
  p.reserve(predictions.size());
  r.reserve(references.size());
  for (const auto& s : predictions) p.push_back(s.texts());
  for (const auto& s : references) r.push_back(s.texts());
  return bleu(std::span<const std::vector<std::string>>(p),
              std::span<const std::vector<std::string>>(r));
}

double perplexity(std::span<const std::vector<double>> distributions,
                  std::span<const int> reference_ids, int pad_id) {
  if (distributions.size() != reference_ids.size()) {
    throw InputError("perplexity needs one distribution per reference position");
  }
  double bits = 0.0;
  std::size_t positions = 0;
  for (std::size_t t = 0; t < reference_ids.size(); ++t) {
    const int id = reference_ids[t];
    if (id == pad_id) continue;
    if (id < 0 || static_cast<std::size_t>(id) >= distributions[t].size()) {
      throw EncodingError("reference id outside the distribution support");
    }
    const double p = distributions[t][static_cast<std::size_t>(id)];
    if (!(p > 0.0)) return kInfinitePerplexity;
    bits -= std::log2(p);
    ++positions;
  }
  if (positions == 0) throw UndefinedMetricError("perplexity over zero positions");
  return std::exp2(bits / static_cast<double>(positions));
}

double perplexity_from_log_probs(std::span<const double> reference_log_probs) {
  if (reference_log_probs.empty()) throw UndefinedMetricError("perplexity over zero positions");
  double nats = 0.0;
  for (double lp : reference_log_probs) {
    if (!std::isfinite(lp)) return kInfinitePerplexity;
    nats -= lp;
  }
  return std::exp(nats / static_cast<double>(reference_log_probs.size()));
}

MetricReport compute_metrics(std::span<const StreamPair> pairs) {
  MetricReport report;
  report.count = pairs.size();
  report.em_accuracy = em_accuracy(pairs);
  const LdStats ld = ld_stats(pairs, 5);
  report.ld_avg = ld.average;
  report.ld_leq5 = ld.within_threshold;
  std::vector<TokenStream> preds, refs;
  for (const auto& [p, r] : pairs) {
    preds.push_back(p);
    refs.push_back(r);
  }
  report.bleu = bleu(std::span<const TokenStream>(preds), std::span<const TokenStream>(refs));
  return report;
}

}  // namespace formt
