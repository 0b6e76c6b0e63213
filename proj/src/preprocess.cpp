#include "formt/preprocess.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "formt/error.hpp"

namespace formt {

std::optional<int> NumberMap::tag_for(std::string_view digits) const {
  for (const auto& [tag, value] : assignments) {
    if (value == digits) return tag;
  }
  return std::nullopt;
}

std::string NumberMap::serialize() const {
  std::string out;
  for (const auto& [tag, value] : assignments) {
    if (!out.empty()) out += ',';
    out += static_cast<char>('0' + tag / 10);
    out += static_cast<char>('0' + tag % 10);
    out += '=';
    out += value;
  }
  return out;
}

NumberMap NumberMap::parse(std::string_view text) {
  NumberMap map;
  while (!text.empty()) {
    const auto comma = text.find(',');
    const std::string_view entry = text.substr(0, comma);
    text = comma == std::string_view::npos ? std::string_view{} : text.substr(comma + 1);
    const auto eq = entry.find('=');
    if (eq == std::string_view::npos) {
      throw ParseError("number map entry without '=': " + std::string(entry));
    }
    int tag = 0;
    const auto key = entry.substr(0, eq);
    const auto [ptr, ec] = std::from_chars(key.data(), key.data() + key.size(), tag);
    const std::string digits(entry.substr(eq + 1));
    if (ec != std::errc{} || ptr != key.data() + key.size() || tag < 1 || tag > kNumberTagCount ||
        digits.size() < 2 || !std::all_of(digits.begin(), digits.end(), [](char c) {
          return c >= '0' && c <= '9';
        })) {
      throw ParseError("malformed number map entry: " + std::string(entry));
    }
    if (!map.assignments.emplace(tag, digits).second) {
      throw ParseError("duplicate number tag " + std::to_string(tag));
    }
  }
  return map;
}

namespace {

void append_split_digits(std::vector<Token>& out, const std::string& digits) {
  for (char c : digits) out.push_back({std::string(1, c), TokenKind::Digit});
}

}  // namespace

Substitution substitute_numbers(const TokenStream& stream, std::uint64_t seed,
                                OverflowPolicy policy) {
  std::vector<std::string> distinct;
  for (const auto& t : stream.tokens) {
    if (t.kind == TokenKind::Number &&
        std::find(distinct.begin(), distinct.end(), t.text) == distinct.end()) {
      distinct.push_back(t.text);
    }
  }
  if (distinct.size() > static_cast<std::size_t>(kNumberTagCount) &&
      policy == OverflowPolicy::Error) {
    throw CapacityError("formula has " + std::to_string(distinct.size()) +
                        " distinct multi-digit numbers; at most 32 tags are available");
  }

  std::array<int, kNumberTagCount> tags{};
  std::iota(tags.begin(), tags.end(), 1);
  Rng rng(seed);
  rng.shuffle(std::span<int>(tags));

  Substitution out;
  const std::size_t tagged = std::min<std::size_t>(distinct.size(), kNumberTagCount);
  for (std::size_t i = 0; i < tagged; ++i) out.map.assignments.emplace(tags[i], distinct[i]);
  out.stream = apply_number_map(stream, out.map);
  return out;
}

TokenStream apply_number_map(const TokenStream& stream, const NumberMap& map) {
  std::unordered_map<std::string, int> by_value;
  for (const auto& [tag, value] : map.assignments) by_value.emplace(value, tag);
  TokenStream out;
  out.language = stream.language;
  out.tokens.reserve(stream.tokens.size());
  for (const auto& t : stream.tokens) {
    if (t.kind != TokenKind::Number) {
      out.tokens.push_back(t);
    } else if (auto it = by_value.find(t.text); it != by_value.end()) {
      out.tokens.push_back({number_tag_text(it->second), TokenKind::NumberTag});
    } else {
      append_split_digits(out.tokens, t.text);
    }
  }
  return out;
}

TokenStream restore_numbers(const TokenStream& stream, const NumberMap& map) {
  TokenStream out;
  out.language = stream.language;
  out.tokens.reserve(stream.tokens.size());
  for (const auto& t : stream.tokens) {
    if (t.kind != TokenKind::NumberTag) {
      out.tokens.push_back(t);
      continue;
    }
    const int tag = parse_number_tag(t.text);
    const auto it = map.assignments.find(tag);
    if (it == map.assignments.end()) {
      throw UnresolvedTagError("tag " + t.text + " has no number in the source formula");
    }
    out.tokens.push_back({it->second, TokenKind::Number});
  }
  return out;
}

Vocabulary::Vocabulary() {
  for (auto text : kSpecialTexts) append(std::string(text), 0);
  for (int i = 1; i <= kNumberTagCount; ++i) append(number_tag_text(i), 0);
}

void Vocabulary::append(std::string text, std::int64_t count) {
  ids_.emplace(text, static_cast<int>(tokens_.size()));
  tokens_.push_back(std::move(text));
  counts_.push_back(count);
}

Vocabulary Vocabulary::build(std::span<const TokenStream> corpus, int min_count) {
  const std::span<const TokenStream> sides[] = {corpus};
  return build(std::span<const std::span<const TokenStream>>(sides), min_count);
}

Vocabulary Vocabulary::build(std::span<const std::span<const TokenStream>> corpora,
                             int min_count) {
  if (min_count < 1) throw ConfigError("min_count must be at least 1");
  Vocabulary vocab;
  std::unordered_map<std::string, std::int64_t> freq;
  for (const auto& side : corpora) {
    for (const auto& stream : side) {
      for (const auto& t : stream.tokens) ++freq[t.text];
    }
  }
  std::vector<std::pair<std::string, std::int64_t>> entries;
  for (auto& [text, count] : freq) {
    if (count < min_count) continue;
    if (const auto it = vocab.ids_.find(text); it != vocab.ids_.end()) {
      vocab.counts_[static_cast<std::size_t>(it->second)] = count;
      continue;
    }
    entries.emplace_back(text, count);
  }
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  for (auto& [text, count] : entries) vocab.append(std::move(text), count);
  return vocab;
}

bool Vocabulary::contains(std::string_view text) const {
  return ids_.find(std::string(text)) != ids_.end();
}

int Vocabulary::id_of(std::string_view text) const {
  const auto it = ids_.find(std::string(text));
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token_of(int id) const {
  if (id < 0 || id >= size()) {
    throw EncodingError("token id " + std::to_string(id) + " outside vocabulary of size " +
                        std::to_string(size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write vocabulary file " + path.string());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    out << tokens_[i] << ' ' << counts_[i] << '\n';
  }
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read vocabulary file " + path.string());
  const Vocabulary reserved;
  Vocabulary vocab;
  vocab.tokens_.clear();
  vocab.counts_.clear();
  vocab.ids_.clear();
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto space = line.rfind(' ');
    if (space == std::string::npos || space == 0) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) +
                       ": expected 'token count'");
    }
    std::int64_t count = 0;
    const char* first = line.data() + space + 1;
    const char* last = line.data() + line.size();
    const auto [ptr, ec] = std::from_chars(first, last, count);
    if (ec != std::errc{} || ptr != last || count < 0) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": bad count");
    }
    std::string text = line.substr(0, space);
    if (vocab.ids_.count(text)) {
      throw SchemaError(path.string() + ":" + std::to_string(line_no) + ": duplicate token " +
                        text);
    }
    vocab.append(std::move(text), count);
  }
  if (vocab.size() < kReserved) {
    throw SchemaError(path.string() + ": missing reserved entries");
  }
  for (int i = 0; i < kReserved; ++i) {
    if (vocab.tokens_[static_cast<std::size_t>(i)] != reserved.token_of(i)) {
      throw SchemaError(path.string() + ": reserved entry " + std::to_string(i) +
                        " should be " + reserved.token_of(i));
    }
  }
  return vocab;
}

std::vector<int> encode(const TokenStream& stream, const Vocabulary& vocab, bool append_eos) {
  std::vector<int> ids;
  ids.reserve(stream.tokens.size() + 1);
  for (const auto& t : stream.tokens) ids.push_back(vocab.id_of(t.text));
  if (append_eos) ids.push_back(Vocabulary::kEos);
  return ids;
}

TokenStream decode_ids(std::span<const int> ids, const Vocabulary& vocab, Language lang) {
  std::vector<std::string> texts;
  for (int id : ids) {
    if (id == Vocabulary::kEos) break;
    if (id == Vocabulary::kPad || id == Vocabulary::kBos) continue;
    texts.push_back(vocab.token_of(id));
  }
  return stream_from_texts(texts, lang);
}

std::vector<EncodedPair> filter_by_length(std::vector<EncodedPair> pairs, int max_tokens) {
  if (max_tokens < 1) throw ConfigError("max_tokens must be at least 1");
  const auto limit = static_cast<std::size_t>(max_tokens);
  std::erase_if(pairs, [limit](const EncodedPair& p) {
    return p.source.size() > limit || p.target.size() > limit;
  });
  return pairs;
}

SplitSpec SplitSpec::from_fractions(double train, double valid, double test, std::uint64_t seed) {
  SplitSpec spec;
  spec.seed = seed;
  const double fractions[] = {train, valid, test};
  std::uint64_t total = 0;
  for (int i = 0; i < 3; ++i) {
    if (!(fractions[i] >= 0.0) || fractions[i] > 1.0) {
      throw ConfigError("split fractions must lie in [0, 1]");
    }
    spec.parts[i] = static_cast<std::uint64_t>(
        std::llround(fractions[i] * static_cast<double>(kDenominator)));
    total += spec.parts[i];
  }
  if (total != kDenominator) throw ConfigError("split fractions must sum to 1");
  return spec;
}

std::array<std::size_t, 3> SplitSpec::sizes(std::size_t n) const {
  std::array<std::size_t, 3> out{};
  std::array<unsigned __int128, 3> remainder{};
  std::size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const unsigned __int128 quota = static_cast<unsigned __int128>(n) * parts[i];
    out[i] = static_cast<std::size_t>(quota / kDenominator);
    remainder[i] = quota % kDenominator;
    assigned += out[i];
  }
  std::array<int, 3> order = {0, 1, 2};
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return remainder[a] > remainder[b]; });
  for (int k = 0; assigned < n; ++k, ++assigned) ++out[order[k % 3]];
  return out;
}

}  // namespace formt
