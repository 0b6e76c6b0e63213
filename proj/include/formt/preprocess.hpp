#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "formt/rng.hpp"
#include "formt/tokenizer.hpp"

namespace formt {

// Tag index (1..32) -> the multi-digit literal it stands for.
struct NumberMap {
  std::map<int, std::string> assignments;

  bool empty() const { return assignments.empty(); }
  std::size_t size() const { return assignments.size(); }
  // Tag index holding `digits`, if any.
  std::optional<int> tag_for(std::string_view digits) const;

  // "03=42,17=2024"
  std::string serialize() const;
  static NumberMap parse(std::string_view text);

  friend bool operator==(const NumberMap&, const NumberMap&) = default;
};

enum class OverflowPolicy {
  Error,        // throw CapacityError past 32 distinct numbers
  SplitDigits,  // tag the first 32, split the remainder into single digits
};

struct Substitution {
  TokenStream stream;
  NumberMap map;
};

// Replaces every multi-digit Number with a tag drawn without replacement from the
// 32 tags (seeded). Equal literals share a tag.
Substitution substitute_numbers(const TokenStream& stream, std::uint64_t seed,
                                OverflowPolicy policy = OverflowPolicy::Error);

// Tags the Numbers of `stream` that `map` already covers; Numbers it does not cover
// are split into single digits. Used for the target side of a training pair.
TokenStream apply_number_map(const TokenStream& stream, const NumberMap& map);

// Replaces each tag by its literal. Throws UnresolvedTagError for unmapped tags.
TokenStream restore_numbers(const TokenStream& stream, const NumberMap& map);

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kFirstTag = 4;
  static constexpr int kReserved = 4 + kNumberTagCount;

  static constexpr std::array<std::string_view, 4> kSpecialTexts = {"<pad>", "<s>", "</s>",
                                                                    "<unk>"};

  // Specials and number tags only.
  Vocabulary();

  // Every token with frequency >= min_count, ids by descending frequency then text.
  static Vocabulary build(std::span<const TokenStream> corpus, int min_count = 1);
  // Shared dictionary over several corpus sides.
  static Vocabulary build(std::span<const std::span<const TokenStream>> corpora,
                          int min_count = 1);

  int size() const { return static_cast<int>(tokens_.size()); }
  bool contains(std::string_view text) const;
  // UNK for unknown texts.
  int id_of(std::string_view text) const;
  const std::string& token_of(int id) const;
  std::int64_t count_of(int id) const { return counts_.at(static_cast<std::size_t>(id)); }

  // One "token count" line per id.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.tokens_ == b.tokens_ && a.counts_ == b.counts_;
  }

 private:
  void append(std::string text, std::int64_t count);

  std::vector<std::string> tokens_;
  std::vector<std::int64_t> counts_;
  std::unordered_map<std::string, int> ids_;
};

std::vector<int> encode(const TokenStream& stream, const Vocabulary& vocab, bool append_eos);
// Maps ids back to tokens; stops at the first EOS and skips PAD/BOS.
TokenStream decode_ids(std::span<const int> ids, const Vocabulary& vocab, Language lang);

struct EncodedPair {
  std::vector<int> source;
  std::vector<int> target;
  std::string id;
  NumberMap numbers;
};

inline constexpr int kDefaultMaxTokens = 1024;

// Keeps pairs whose both sides have at most max_tokens ids.
std::vector<EncodedPair> filter_by_length(std::vector<EncodedPair> pairs,
                                          int max_tokens = kDefaultMaxTokens);

// Train/valid/test fractions held exactly as parts per billion.
struct SplitSpec {
  static constexpr std::uint64_t kDenominator = 1'000'000'000ULL;

  std::array<std::uint64_t, 3> parts{};
  std::uint64_t seed = 0;

  // Throws ConfigError unless the fractions are non-negative and sum to exactly 1
  // at parts-per-billion resolution.
  static SplitSpec from_fractions(double train, double valid, double test, std::uint64_t seed);

  // Largest-remainder apportionment of n items.
  std::array<std::size_t, 3> sizes(std::size_t n) const;
};

template <typename T>
struct CorpusSplit {
  std::vector<T> train;
  std::vector<T> valid;
  std::vector<T> test;
};

template <typename T>
CorpusSplit<T> split_corpus(const std::vector<T>& items, const SplitSpec& spec) {
  std::vector<std::size_t> order(items.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(spec.seed);
  rng.shuffle(std::span<std::size_t>(order));
  const auto sizes = spec.sizes(items.size());
  CorpusSplit<T> out;
  std::size_t next = 0;
  for (std::size_t i = 0; i < sizes[0]; ++i) out.train.push_back(items[order[next++]]);
  for (std::size_t i = 0; i < sizes[1]; ++i) out.valid.push_back(items[order[next++]]);
  for (std::size_t i = 0; i < sizes[2]; ++i) out.test.push_back(items[order[next++]]);
  return out;
}

}  // namespace formt
