#pragma once

#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "formt/tokenizer.hpp"

namespace formt {

struct MetricReport {
  double em_accuracy = 0.0;
  double ld_avg = 0.0;
  double ld_leq5 = 0.0;
  double bleu = 0.0;
  std::size_t count = 0;
};

// {"em", "ld_avg", "ld_leq5", "bleu", "count"}
std::string metric_report_json(const MetricReport& report);

bool exact_match(const TokenStream& prediction, const TokenStream& reference);

using StreamPair = std::pair<TokenStream, TokenStream>;  // (prediction, reference)

// Throws UndefinedMetricError on an empty list.
double em_accuracy(std::span<const StreamPair> pairs);

// Token-level edit distance, O(min(|a|, |b|)) memory.
std::size_t levenshtein(std::span<const std::string> a, std::span<const std::string> b);
std::size_t levenshtein(const TokenStream& a, const TokenStream& b);

struct LdStats {
  double average = 0.0;
  double within_threshold = 0.0;
};
LdStats ld_stats(std::span<const StreamPair> pairs, std::size_t threshold = 5);

// Corpus BLEU-4 on a 0..100 scale, no smoothing: any zero pooled precision gives 0.
double bleu(std::span<const TokenStream> predictions, std::span<const TokenStream> references);
double bleu(std::span<const std::vector<std::string>> predictions,
            std::span<const std::vector<std::string>> references);

// Sentinel returned when a reference token has zero probability.
inline constexpr double kInfinitePerplexity = std::numeric_limits<double>::infinity();

// 2^(mean of -log2 p(reference)) over positions whose reference is not `pad_id`.
// `distributions[t]` is the predicted distribution at position t.
double perplexity(std::span<const std::vector<double>> distributions,
                  std::span<const int> reference_ids, int pad_id = -1);
// Same from natural-log probabilities of the reference tokens.
double perplexity_from_log_probs(std::span<const double> reference_log_probs);

MetricReport compute_metrics(std::span<const StreamPair> pairs);

}  // namespace formt
