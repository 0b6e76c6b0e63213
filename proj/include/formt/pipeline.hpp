#pragma once

#include <vector>

#include "formt/corpus.hpp"
#include "formt/preprocess.hpp"

namespace formt {

// Per-formula seed for number substitution, derived from the source text so that
// training and translation draw the same tags for the same formula.
std::uint64_t formula_seed(std::uint64_t seed, std::string_view source_text);

// A pair after tokenization and number substitution.
struct TaggedPair {
  TokenStream source;
  TokenStream target;
  NumberMap numbers;
  std::string id;
};

struct LanguagePair {
  Language source = Language::LatexPresentation;
  Language target = Language::MathematicaInput;
};

// Target numbers reuse the source's tags; numbers the source lacks are split into digits.
TaggedPair tag_pair(const FormulaPair& pair, LanguagePair langs, std::uint64_t seed,
                    OverflowPolicy policy = OverflowPolicy::Error);
std::vector<TaggedPair> tag_pairs(const std::vector<FormulaPair>& pairs, LanguagePair langs,
                                  std::uint64_t seed, OverflowPolicy policy = OverflowPolicy::Error);

struct Dictionaries {
  Vocabulary source;
  Vocabulary target;
};

// Input and output dictionaries from the tagged training pairs; with `shared`
// both are built from the union of the two sides.
Dictionaries build_dictionaries(const std::vector<TaggedPair>& pairs, int min_count = 1,
                                bool shared = false);

// Both sides end in EOS.
EncodedPair encode_pair(const TaggedPair& pair, const Dictionaries& dicts);
std::vector<EncodedPair> encode_pairs(const std::vector<TaggedPair>& pairs,
                                      const Dictionaries& dicts);

// JSONL: {"id", "source": [ids], "target": [ids], "numbers": "03=42,..."} per line.
void save_encoded(const std::filesystem::path& path, std::span<const EncodedPair> pairs);
std::vector<EncodedPair> load_encoded(const std::filesystem::path& path);

}  // namespace formt
