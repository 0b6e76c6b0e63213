#include "formt/pipeline.hpp"

#include <fstream>

#include "formt/error.hpp"
#include "json.hpp"

namespace formt {

std::uint64_t formula_seed(std::uint64_t seed, std::string_view source_text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : source_text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return mix_seed(seed, h);
}

TaggedPair tag_pair(const FormulaPair& pair, LanguagePair langs, std::uint64_t seed,
                    OverflowPolicy policy) {
  const Substitution sub = substitute_numbers(tokenize(pair.source, langs.source),
                                              formula_seed(seed, pair.source), policy);
  TaggedPair out;
  out.target = apply_number_map(tokenize(pair.target, langs.target), sub.map);
  out.source = sub.stream;
  out.numbers = sub.map;
  out.id = pair.id;
  return out;
}

std::vector<TaggedPair> tag_pairs(const std::vector<FormulaPair>& pairs, LanguagePair langs,
                                  std::uint64_t seed, OverflowPolicy policy) {
  std::vector<TaggedPair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(tag_pair(p, langs, seed, policy));
  return out;
}

Dictionaries build_dictionaries(const std::vector<TaggedPair>& pairs, int min_count,
                                bool shared) {
  std::vector<TokenStream> sources, targets;
  sources.reserve(pairs.size());
  targets.reserve(pairs.size());
  for (const auto& p : pairs) {
    sources.push_back(p.source);
    targets.push_back(p.target);
  }
  if (shared) {
    const std::span<const TokenStream> sides[] = {sources, targets};
    Vocabulary both = Vocabulary::build(std::span<const std::span<const TokenStream>>(sides), min_count);
    return {both, both};
  }
  return {Vocabulary::build(sources, min_count), Vocabulary::build(targets, min_count)};
}

EncodedPair encode_pair(const TaggedPair& pair, const Dictionaries& dicts) {
  return {encode(pair.source, dicts.source, true), encode(pair.target, dicts.target, true), pair.id,
          pair.numbers};
}

std::vector<EncodedPair> encode_pairs(const std::vector<TaggedPair>& pairs,
                                      const Dictionaries& dicts) {
  std::vector<EncodedPair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(encode_pair(p, dicts));
  return out;
}

void save_encoded(const std::filesystem::path& path, std::span<const EncodedPair> pairs) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  for (const auto& p : pairs) {
    out << nlohmann::json{{"id", p.id},
                          {"source", p.source},
                          {"target", p.target},
                          {"numbers", p.numbers.serialize()}}
               .dump()
        << '\n';
  }
}

std::vector<EncodedPair> load_encoded(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read " + path.string());
  std::vector<EncodedPair> out;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      EncodedPair p;
      p.id = j.at("id").get<std::string>();
      p.source = j.at("source").get<std::vector<int>>();
      p.target = j.at("target").get<std::vector<int>>();
      p.numbers = NumberMap::parse(j.value("numbers", std::string()));
      out.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError(path.string() + ":" + std::to_string(number) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace formt
