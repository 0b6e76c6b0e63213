#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "formt/tokenizer.hpp"

namespace formt {

struct FormulaPair {
  std::string source;  // presentation language
  std::string target;  // content language
  std::string id;

  friend bool operator==(const FormulaPair&, const FormulaPair&) = default;
};

// JSONL: one {"source", "target", "id"?} object per line. Blank lines are skipped.
std::vector<FormulaPair> load_corpus(const std::filesystem::path& path);
std::vector<FormulaPair> parse_corpus(std::string_view jsonl, std::string_view origin = "<input>");
void save_corpus(const std::filesystem::path& path, const std::vector<FormulaPair>& pairs);

struct SideStats {
  double mean = 0.0;
  double stddev = 0.0;  // population
  double median = 0.0;
};

struct CorpusStats {
  std::size_t count = 0;
  SideStats source;
  SideStats target;
};

// Character counts are counted in code points.
CorpusStats corpus_stats(const std::vector<FormulaPair>& pairs);
std::string stats_to_json(const CorpusStats& stats);

// ---------------------------------------------------------------------------
// Synthetic grammar

enum class Category { Formula, Relation, Expression, Variable, Number };

// Binding strength; a hole wraps its filler in parentheses when the filler binds
// more loosely than the hole's minimum.
namespace prec {
inline constexpr int kRelation = 0;
inline constexpr int kBigOperator = 1;
inline constexpr int kSum = 2;
inline constexpr int kProduct = 3;
inline constexpr int kNegation = 4;
inline constexpr int kPower = 5;
inline constexpr int kAtom = 6;
}  // namespace prec

// One side of a template: pattern text with #1..#9 holes.
struct TemplateSide {
  std::string pattern;
  int precedence = prec::kAtom;
  std::vector<int> hole_min;  // per hole, minimum precedence accepted unwrapped
};

struct Template {
  std::string name;
  Category produces = Category::Expression;
  std::vector<Category> holes;
  TemplateSide latex;
  TemplateSide mathematica;
  TemplateSide semantic;
  double weight = 1.0;

  const TemplateSide& side(Language lang) const;
};

// Leaf entry: variable, constant or named symbol with its rendering per language.
struct Atom {
  Category category = Category::Variable;  // Variable or Expression (constants)
  std::string latex;
  std::string mathematica;
  std::string semantic;

  const std::string& side(Language lang) const;
};

struct GrammarConfig {
  std::uint64_t seed = 0;
  std::size_t count = 0;
  int max_depth = 3;
  Language target = Language::MathematicaInput;
  std::vector<Template> templates;
  std::vector<Atom> atoms;
  // Probability that an expression hole becomes a leaf; grows with depth.
  double leaf_base = 0.45;
  double leaf_step = 0.2;

  // Default template set and lexicon.
  static GrammarConfig standard(std::uint64_t seed, std::size_t count, int max_depth = 3);
  // Throws ConfigError on violated invariants.
  void validate() const;
};

const std::vector<Template>& standard_templates();
const std::vector<Atom>& standard_atoms();
// A template of the standard set by name; throws ConfigError if absent.
Template standard_template(std::string_view name);

// Derivation tree of one generated formula.
struct Derivation {
  int template_index = -1;  // into GrammarConfig::templates; -1 for a leaf
  int atom_index = -1;      // into GrammarConfig::atoms, or -1 for a number literal
  std::string literal;      // digits of a number leaf
  std::vector<Derivation> children;
};

struct Rendering {
  std::string text;
  int precedence = prec::kAtom;
};

Rendering render(const GrammarConfig& grammar, const Derivation& node, Language lang);

// Generates `count` aligned pairs; deterministic in the seed.
std::vector<FormulaPair> generate_synthetic(const GrammarConfig& config);
// Same, also returning the derivations.
std::vector<FormulaPair> generate_synthetic(const GrammarConfig& config,
                                            std::vector<Derivation>* derivations);

// Largest token count either side can reach at the given depth (excluding EOS).
std::size_t max_token_bound(const GrammarConfig& config);
// Largest max_depth whose bound stays within max_tokens for the config's templates.
int max_depth_within(GrammarConfig config, std::size_t max_tokens);

// Recovers the target-language renderings of a presentation-side formula by parsing
// it against the template set. Returns every distinct reading (empty if none).
std::vector<std::string> grammar_readings(const GrammarConfig& grammar, std::string_view text,
                                          Language from, Language to);

}  // namespace formt
