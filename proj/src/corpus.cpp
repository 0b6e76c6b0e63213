#include "formt/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "formt/error.hpp"
#include "formt/rng.hpp"
#include "json.hpp"

namespace formt {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// JSONL ingestion

std::vector<FormulaPair> parse_corpus(std::string_view jsonl, std::string_view origin) {
  std::vector<FormulaPair> pairs;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < jsonl.size()) {
    const auto end = std::min(jsonl.find('\n', start), jsonl.size());
    std::string_view line = jsonl.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
    const std::string where = std::string(origin) + ":" + std::to_string(line_no);
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(where + ": " + e.what());
    }
    if (!obj.is_object()) throw SchemaError(where + ": expected a JSON object");
    FormulaPair pair;
    for (const char* field : {"source", "target"}) {
      const auto it = obj.find(field);
      if (it == obj.end()) throw SchemaError(where + ": missing field '" + field + "'");
      if (!it->is_string()) throw SchemaError(where + ": field '" + field + "' must be a string");
      if (it->get_ref<const std::string&>().empty()) {
        throw SchemaError(where + ": field '" + field + "' must be non-empty");
      }
    }
    pair.source = obj["source"].get<std::string>();
    pair.target = obj["target"].get<std::string>();
    if (const auto it = obj.find("id"); it != obj.end()) {
      if (it->is_string()) {
        pair.id = it->get<std::string>();
      } else if (it->is_number_integer()) {
        pair.id = std::to_string(it->get<long long>());
      } else {
        throw SchemaError(where + ": field 'id' must be a string or integer");
      }
    } else {
      pair.id = std::to_string(pairs.size());
    }
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

std::vector<FormulaPair> load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read corpus file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_corpus(buffer.str(), path.string());
}

void save_corpus(const std::filesystem::path& path, const std::vector<FormulaPair>& pairs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write corpus file " + path.string());
  for (const auto& p : pairs) {
    out << json{{"id", p.id}, {"source", p.source}, {"target", p.target}}.dump() << '\n';
  }
}

// ---------------------------------------------------------------------------
// Statistics

namespace {

std::size_t code_points(std::string_view text) {
  std::size_t n = 0;
  for (char c : text) n += (static_cast<unsigned char>(c) & 0xC0) != 0x80;
  return n;
}

SideStats side_stats(std::vector<double> lengths) {
  SideStats s;
  if (lengths.empty()) return s;
  const double n = static_cast<double>(lengths.size());
  double sum = 0.0;
  for (double v : lengths) sum += v;
  s.mean = sum / n;
  double sq = 0.0;
  for (double v : lengths) sq += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(sq / n);
  std::sort(lengths.begin(), lengths.end());
  const std::size_t mid = lengths.size() / 2;
  s.median = lengths.size() % 2 ? lengths[mid] : 0.5 * (lengths[mid - 1] + lengths[mid]);
  return s;
}

}  // namespace

CorpusStats corpus_stats(const std::vector<FormulaPair>& pairs) {
  std::vector<double> src, tgt;
  src.reserve(pairs.size());
  tgt.reserve(pairs.size());
  for (const auto& p : pairs) {
    src.push_back(static_cast<double>(code_points(p.source)));
    tgt.push_back(static_cast<double>(code_points(p.target)));
  }
  CorpusStats stats;
  stats.count = pairs.size();
  stats.source = side_stats(std::move(src));
  stats.target = side_stats(std::move(tgt));
  return stats;
}

std::string stats_to_json(const CorpusStats& stats) {
  auto side = [](const SideStats& s) {
    return json{{"mean", s.mean}, {"std", s.stddev}, {"median", s.median}};
  };
  return json{{"count", stats.count}, {"source", side(stats.source)},
              {"target", side(stats.target)}}
      .dump(2);
}

// ---------------------------------------------------------------------------
// Template set

const TemplateSide& Template::side(Language lang) const {
  switch (lang) {
    case Language::LatexPresentation:
      return latex;
    case Language::MathematicaInput:
      return mathematica;
    case Language::SemanticLatex:
      return semantic;
  }
  return latex;
}

const std::string& Atom::side(Language lang) const {
  switch (lang) {
    case Language::LatexPresentation:
      return latex;
    case Language::MathematicaInput:
      return mathematica;
    case Language::SemanticLatex:
      return semantic;
  }
  return latex;
}

namespace {

using C = Category;

Template make(std::string name, C produces, std::vector<C> holes, TemplateSide latex,
              TemplateSide mathematica, TemplateSide semantic, double weight) {
  return Template{std::move(name), produces,  std::move(holes),        std::move(latex),
                  std::move(mathematica), std::move(semantic), weight};
}

std::vector<Template> build_standard_templates() {
  using namespace prec;
  const std::vector<int> rel = {kBigOperator, kBigOperator};
  std::vector<Template> t;
  // Top level.
  t.push_back(make("formula_relation", C::Formula, {C::Relation}, {"#1", kRelation, {0}},
                   {"#1", kRelation, {0}}, {"#1", kRelation, {0}}, 6.0));
  t.push_back(make("formula_expression", C::Formula, {C::Expression}, {"#1", kRelation, {0}},
                   {"#1", kRelation, {0}}, {"#1", kRelation, {0}}, 3.0));
  t.push_back(make("conjunction", C::Formula, {C::Relation, C::Relation},
                   {"#1 \\land #2", kRelation, {0, 0}}, {"#1 && #2", kRelation, {0, 0}},
                   {"#1 \\land #2", kRelation, {0, 0}}, 0.6));
  t.push_back(make("condition", C::Formula, {C::Relation, C::Relation},
                   {"#1 \\quad \\mathrm{if} \\quad #2", kRelation, {0, 0}},
                   {"#1 /; #2", kRelation, {0, 0}},
                   {"#1 \\quad \\mathrm{if} \\quad #2", kRelation, {0, 0}}, 0.6));
  // Relations.
  t.push_back(make("equal", C::Relation, {C::Expression, C::Expression}, {"#1 = #2", kRelation, rel},
                   {"#1 == #2", kRelation, rel}, {"#1 = #2", kRelation, rel}, 3.0));
  t.push_back(make("less_equal", C::Relation, {C::Expression, C::Expression},
                   {"#1 \\leq #2", kRelation, rel}, {"#1 <= #2", kRelation, rel},
                   {"#1 \\leq #2", kRelation, rel}, 1.0));
  t.push_back(make("greater_equal", C::Relation, {C::Expression, C::Expression},
                   {"#1 \\geq #2", kRelation, rel}, {"#1 >= #2", kRelation, rel},
                   {"#1 \\geq #2", kRelation, rel}, 1.0));
  t.push_back(make("not_equal", C::Relation, {C::Expression, C::Expression},
                   {"#1 \\neq #2", kRelation, rel}, {"#1 != #2", kRelation, rel},
                   {"#1 \\neq #2", kRelation, rel}, 1.0));
  t.push_back(make("less", C::Relation, {C::Expression, C::Expression}, {"#1 < #2", kRelation, rel},
                   {"#1 < #2", kRelation, rel}, {"#1 < #2", kRelation, rel}, 0.8));
  // Arithmetic.
  const std::vector<C> two = {C::Expression, C::Expression};
  t.push_back(make("sum", C::Expression, two, {"#1 + #2", kSum, {kSum, kSum}},
                   {"#1 + #2", kSum, {kSum, kSum}}, {"#1 + #2", kSum, {kSum, kSum}}, 3.0));
  t.push_back(make("difference", C::Expression, two, {"#1 - #2", kSum, {kSum, kProduct}},
                   {"#1 - #2", kSum, {kSum, kProduct}}, {"#1 - #2", kSum, {kSum, kProduct}}, 2.0));
  t.push_back(make("product", C::Expression, two, {"#1 #2", kProduct, {kProduct, kPower}},
                   {"#1*#2", kProduct, {kProduct, kPower}}, {"#1 #2", kProduct, {kProduct, kPower}},
                   3.0));
  t.push_back(make("negation", C::Expression, {C::Expression}, {"-#1", kNegation, {kPower}},
                   {"-#1", kNegation, {kPower}}, {"-#1", kNegation, {kPower}}, 1.0));
  t.push_back(make("fraction", C::Expression, two, {"\\frac{#1}{#2}", kAtom, {0, 0}},
                   {"#1/#2", kProduct, {kPower, kPower}}, {"\\frac{#1}{#2}", kAtom, {0, 0}}, 2.0));
  t.push_back(make("power", C::Expression, two, {"#1^{#2}", kPower, {kAtom, 0}},
                   {"#1^#2", kPower, {kAtom, kAtom}}, {"#1^{#2}", kPower, {kAtom, 0}}, 2.0));
  t.push_back(make("sqrt", C::Expression, {C::Expression}, {"\\sqrt{#1}", kAtom, {0}},
                   {"Sqrt[#1]", kAtom, {0}}, {"\\sqrt{#1}", kAtom, {0}}, 1.0));
  t.push_back(make("nth_root", C::Expression, {C::Number, C::Expression},
                   {"\\sqrt[#1]{#2}", kAtom, {0, 0}}, {"Surd[#2, #1]", kAtom, {0, 0}},
                   {"\\sqrt[#1]{#2}", kAtom, {0, 0}}, 0.5));
  t.push_back(make("exp", C::Expression, {C::Expression}, {"e^{#1}", kPower, {0}},
                   {"Exp[#1]", kAtom, {0}}, {"\\exp@{#1}", kAtom, {0}}, 1.0));
  // Named functions.
  const auto fn = [&](std::string name, std::string latex, std::string math, std::string sem,
                      double weight) {
    t.push_back(make(std::move(name), C::Expression, {C::Expression}, {std::move(latex), kAtom, {0}},
                     {std::move(math), kAtom, {0}}, {std::move(sem), kAtom, {0}}, weight));
  };
  fn("sin", "\\sin(#1)", "Sin[#1]", "\\sin@{#1}", 1.0);
  fn("cos", "\\cos(#1)", "Cos[#1]", "\\cos@{#1}", 1.0);
  fn("log", "\\log(#1)", "Log[#1]", "\\ln@{#1}", 1.0);
  fn("gamma", "\\Gamma(#1)", "Gamma[#1]", "\\EulerGamma@{#1}", 1.0);
  fn("zeta", "\\zeta(#1)", "Zeta[#1]", "\\Riemannzeta@{#1}", 1.0);
  fn("dirac_delta", "\\delta(#1)", "DiracDelta[#1]", "\\diracdelta@{#1}", 1.0);
  t.push_back(make("pochhammer", C::Expression, two, {"(#1)_{#2}", kAtom, {0, 0}},
                   {"Pochhammer[#1, #2]", kAtom, {0, 0}}, {"\\Pochhammersym{#1}{#2}", kAtom, {0, 0}},
                   1.2));
  t.push_back(make("binomial", C::Expression, two, {"\\binom{#1}{#2}", kAtom, {0, 0}},
                   {"Binomial[#1, #2]", kAtom, {0, 0}}, {"\\binom{#1}{#2}", kAtom, {0, 0}}, 1.0));
  t.push_back(make("bessel_j", C::Expression, two, {"J_{#1}(#2)", kAtom, {0, 0}},
                   {"BesselJ[#1, #2]", kAtom, {0, 0}}, {"\\BesselJ{#1}@{#2}", kAtom, {0, 0}}, 1.0));
  // Big operators.
  t.push_back(make("integral", C::Expression,
                   {C::Expression, C::Expression, C::Expression, C::Variable},
                   {"\\int_{#1}^{#2} #3 \\, d#4", kBigOperator, {0, 0, kSum, 0}},
                   {"Integrate[#3, {#4, #1, #2}]", kAtom, {0, 0, 0, 0}},
                   {"\\int_{#1}^{#2} #3 \\diff{#4}", kBigOperator, {0, 0, kSum, 0}}, 0.8));
  t.push_back(make("series", C::Expression,
                   {C::Variable, C::Expression, C::Expression, C::Expression},
                   {"\\sum_{#1=#2}^{#3} #4", kBigOperator, {0, 0, 0, kProduct}},
                   {"Sum[#4, {#1, #2, #3}]", kAtom, {0, 0, 0, 0}},
                   {"\\sum_{#1=#2}^{#3} #4", kBigOperator, {0, 0, 0, kProduct}}, 0.8));
  return t;
}

std::vector<Atom> build_standard_atoms() {
  std::vector<Atom> atoms;
  for (const char* v : {"x", "y", "z", "a", "b", "c", "n", "k", "m", "t", "s", "p", "q", "r"}) {
    atoms.push_back({C::Variable, v, v, v});
  }
  for (const auto& [latex, name] : std::vector<std::pair<std::string, std::string>>{
           {"\\alpha", "Alpha"},
           {"\\beta", "Beta"},
           {"\\theta", "Theta"},
           {"\\lambda", "Lambda"},
           {"\\mu", "Mu"},
           {"\\nu", "Nu"},
           {"\\zeta", "Zeta"},
           {"\\delta", "Delta"}}) {
    atoms.push_back({C::Variable, latex, "\\[" + name + "]", latex});
  }
  atoms.push_back({C::Expression, "\\pi", "Pi", "\\cpi"});
  atoms.push_back({C::Expression, "\\infty", "Infinity", "\\infty"});
  return atoms;
}

int hole_count(std::string_view pattern, int hole) {
  int n = 0;
  for (std::size_t i = 0; i + 1 < pattern.size(); ++i) {
    if (pattern[i] == '#' && pattern[i + 1] == static_cast<char>('0' + hole)) ++n;
  }
  return n;
}

}  // namespace

const std::vector<Template>& standard_templates() {
  static const std::vector<Template> templates = build_standard_templates();
  return templates;
}

const std::vector<Atom>& standard_atoms() {
  static const std::vector<Atom> atoms = build_standard_atoms();
  return atoms;
}

Template standard_template(std::string_view name) {
  for (const auto& t : standard_templates()) {
    if (t.name == name) return t;
  }
  throw ConfigError("no standard template named '" + std::string(name) + "'");
}

GrammarConfig GrammarConfig::standard(std::uint64_t seed, std::size_t count, int max_depth) {
  GrammarConfig config;
  config.seed = seed;
  config.count = count;
  config.max_depth = max_depth;
  config.templates = standard_templates();
  config.atoms = standard_atoms();
  return config;
}

void GrammarConfig::validate() const {
  if (max_depth < 1) throw ConfigError("max_depth must be at least 1");
  if (templates.empty()) throw ConfigError("template set must be non-empty");
  bool has_variable = false;
  for (const auto& a : atoms) has_variable = has_variable || a.category == Category::Variable;
  if (!has_variable) throw ConfigError("lexicon needs at least one variable atom");
  for (const auto& t : templates) {
    if (t.holes.size() > 9) throw ConfigError("template " + t.name + " has more than 9 holes");
    for (const TemplateSide* side : {&t.latex, &t.mathematica, &t.semantic}) {
      if (side->hole_min.size() != t.holes.size()) {
        throw ConfigError("template " + t.name + ": hole_min arity mismatch");
      }
      for (std::size_t h = 0; h < t.holes.size(); ++h) {
        if (hole_count(side->pattern, static_cast<int>(h + 1)) != 1) {
          throw ConfigError("template " + t.name + ": hole #" + std::to_string(h + 1) +
                            " must appear exactly once in '" + side->pattern + "'");
        }
      }
      if (hole_count(side->pattern, static_cast<int>(t.holes.size() + 1)) != 0) {
        throw ConfigError("template " + t.name + ": undeclared hole in '" + side->pattern + "'");
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Rendering and generation

namespace {

std::string_view wrap_open(Language lang) {
  return lang == Language::MathematicaInput ? "(" : "\\left(";
}
std::string_view wrap_close(Language lang) {
  return lang == Language::MathematicaInput ? ")" : "\\right)";
}

template <typename ChildFn>
std::string fill_pattern(const TemplateSide& side, Language lang, ChildFn&& child) {
  std::string out;
  const std::string& p = side.pattern;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == '#' && i + 1 < p.size() && p[i + 1] >= '1' && p[i + 1] <= '9') {
      const int hole = p[i + 1] - '1';
      const Rendering r = child(hole);
      if (r.precedence < side.hole_min[static_cast<std::size_t>(hole)]) {
        out += wrap_open(lang);
        out += r.text;
        out += wrap_close(lang);
      } else {
        out += r.text;
      }
      ++i;
    } else {
      out += p[i];
    }
  }
  return out;
}

class Generator {
 public:
  Generator(const GrammarConfig& config, std::uint64_t seed) : config_(config), rng_(seed) {
    for (std::size_t i = 0; i < config.atoms.size(); ++i) {
      (config.atoms[i].category == Category::Variable ? variables_ : constants_)
          .push_back(static_cast<int>(i));
    }
  }

  Derivation formula() {
    for (Category c : {Category::Formula, Category::Relation}) {
      if (has_templates(c)) return expand(c, 0, true);
    }
    return expand(Category::Expression, 0, true);
  }

 private:
  bool has_templates(Category c) const {
    for (const auto& t : config_.templates) {
      if (t.produces == c) return true;
    }
    return false;
  }

  int pick_template(Category c) {
    double total = 0.0;
    for (const auto& t : config_.templates) {
      if (t.produces == c) total += t.weight;
    }
    double r = rng_.uniform() * total;
    int last = -1;
    for (std::size_t i = 0; i < config_.templates.size(); ++i) {
      const auto& t = config_.templates[i];
      if (t.produces != c) continue;
      last = static_cast<int>(i);
      if (r < t.weight) return last;
      r -= t.weight;
    }
    return last;
  }

  Derivation variable() {
    Derivation d;
    d.atom_index = variables_[rng_.below(variables_.size())];
    return d;
  }

  Derivation number() {
    Derivation d;
    const double r = rng_.uniform();
    std::int64_t value;
    if (r < 0.45) {
      value = rng_.between(0, 9);
    } else if (r < 0.8) {
      value = rng_.between(10, 99);
    } else {
      value = rng_.between(100, 9999);
    }
    d.literal = std::to_string(value);
    return d;
  }

  Derivation leaf() {
    const double r = rng_.uniform();
    if (r < 0.55 || (constants_.empty() && r < 0.65)) return variable();
    if (r < 0.9 || constants_.empty()) return number();
    Derivation d;
    d.atom_index = constants_[rng_.below(constants_.size())];
    return d;
  }

  double leaf_probability(int depth) const {
    if (depth == 0) return 0.5 * config_.leaf_base;
    return std::clamp(config_.leaf_base + config_.leaf_step * (depth - 1), 0.0, 1.0);
  }

  Derivation expand(Category c, int depth, bool root) {
    switch (c) {
      case Category::Variable:
        return variable();
      case Category::Number:
        return number();
      case Category::Expression:
        if (depth >= config_.max_depth || !has_templates(Category::Expression)) return leaf();
        if (!root && rng_.uniform() < leaf_probability(depth)) return leaf();
        break;
      case Category::Formula:
      case Category::Relation:
        break;
    }
    Derivation d;
    d.template_index = pick_template(c);
    const Template& t = config_.templates[static_cast<std::size_t>(d.template_index)];
    const int child_depth = c == Category::Expression ? depth + 1 : depth;
    for (Category hole : t.holes) d.children.push_back(expand(hole, child_depth, false));
    return d;
  }

  const GrammarConfig& config_;
  Rng rng_;
  std::vector<int> variables_;
  std::vector<int> constants_;
};

}  // namespace

Rendering render(const GrammarConfig& grammar, const Derivation& node, Language lang) {
  if (node.template_index < 0) {
    if (node.atom_index >= 0) {
      return {grammar.atoms.at(static_cast<std::size_t>(node.atom_index)).side(lang), prec::kAtom};
    }
    return {node.literal, prec::kAtom};
  }
  const Template& t = grammar.templates.at(static_cast<std::size_t>(node.template_index));
  const TemplateSide& side = t.side(lang);
  std::string text = fill_pattern(side, lang, [&](int hole) {
    return render(grammar, node.children.at(static_cast<std::size_t>(hole)), lang);
  });
  return {std::move(text), side.precedence};
}

std::vector<FormulaPair> generate_synthetic(const GrammarConfig& config) {
  return generate_synthetic(config, nullptr);
}

std::vector<FormulaPair> generate_synthetic(const GrammarConfig& config,
                                            std::vector<Derivation>* derivations) {
  std::vector<FormulaPair> pairs;
  if (config.count == 0) return pairs;
  config.validate();
  Generator gen(config, config.seed);
  pairs.reserve(config.count);
  for (std::size_t i = 0; i < config.count; ++i) {
    Derivation d = gen.formula();
    FormulaPair p;
    p.source = render(config, d, Language::LatexPresentation).text;
    p.target = render(config, d, config.target).text;
    p.id = "synth-" + std::to_string(i);
    pairs.push_back(std::move(p));
    if (derivations) derivations->push_back(std::move(d));
  }
  return pairs;
}

// ---------------------------------------------------------------------------
// Length bound

namespace {

// Tokens contributed by a pattern's literal text (holes excluded).
std::size_t literal_tokens(const std::string& pattern, Language lang) {
  std::string stripped;
  for (std::size_t i = 0; i < pattern.size(); ++i) {
    if (pattern[i] == '#' && i + 1 < pattern.size() && pattern[i + 1] >= '1' &&
        pattern[i + 1] <= '9') {
      stripped += ' ';
      ++i;
    } else {
      stripped += pattern[i];
    }
  }
  return tokenize(stripped, lang).size();
}

std::size_t side_bound(const GrammarConfig& g, Category c, int depth, Language lang,
                       std::map<std::pair<int, int>, std::size_t>& memo) {
  if (c == Category::Variable || c == Category::Number) return 1;
  if (c == Category::Expression && depth >= g.max_depth) return 1;
  const auto key = std::make_pair(static_cast<int>(c), depth);
  if (const auto it = memo.find(key); it != memo.end()) return it->second;
  const std::size_t wrap = tokenize(std::string(wrap_open(lang)) + " " +
                                        std::string(wrap_close(lang)),
                                    lang)
                               .size();
  std::size_t best = c == Category::Expression ? 1 : 0;
  const int child_depth = c == Category::Expression ? depth + 1 : depth;
  for (const auto& t : g.templates) {
    if (t.produces != c) continue;
    std::size_t n = literal_tokens(t.side(lang).pattern, lang);
    for (Category h : t.holes) {
      n += side_bound(g, h, child_depth, lang, memo) + (h == Category::Expression ? wrap : 0);
    }
    best = std::max(best, n);
  }
  memo[key] = best;
  return best;
}

}  // namespace

std::size_t max_token_bound(const GrammarConfig& config) {
  Category root = Category::Expression;
  for (Category c : {Category::Relation, Category::Formula}) {
    for (const auto& t : config.templates) {
      if (t.produces == c) root = c;
    }
  }
  std::size_t bound = 0;
  for (Language lang : {Language::LatexPresentation, config.target}) {
    std::map<std::pair<int, int>, std::size_t> memo;
    bound = std::max(bound, side_bound(config, root, 0, lang, memo));
  }
  return bound;
}

int max_depth_within(GrammarConfig config, std::size_t max_tokens) {
  int depth = 0;
  for (int d = 1; d <= 64; ++d) {
    config.max_depth = d;
    if (max_token_bound(config) > max_tokens) break;
    depth = d;
  }
  return depth;
}

// ---------------------------------------------------------------------------
// Template parser

namespace {

struct Element {
  int hole = -1;  // >= 0 for a hole
  std::string literal;
};

struct Reading {
  int source_precedence = prec::kAtom;
  bool wrapped = false;
  std::string text;
  int precedence = prec::kAtom;

  auto key() const { return std::tie(source_precedence, wrapped, text, precedence); }
  bool operator<(const Reading& o) const { return key() < o.key(); }
  bool operator==(const Reading& o) const { return key() == o.key(); }
};

std::vector<Element> pattern_elements(const std::string& pattern, Language lang) {
  std::vector<Element> out;
  std::string pending;
  auto flush = [&] {
    for (const auto& t : tokenize(pending, lang).tokens) out.push_back({-1, t.text});
    pending.clear();
  };
  for (std::size_t i = 0; i < pattern.size(); ++i) {
    if (pattern[i] == '#' && i + 1 < pattern.size() && pattern[i + 1] >= '1' &&
        pattern[i + 1] <= '9') {
      // A hole is a token boundary on the pattern side.
      flush();
      out.push_back({pattern[i + 1] - '1', {}});
      ++i;
    } else {
      pending += pattern[i];
    }
  }
  flush();
  return out;
}

class TemplateParser {
 public:
  TemplateParser(const GrammarConfig& g, std::vector<std::string> tokens, Language from,
                 Language to)
      : g_(g), tokens_(std::move(tokens)), from_(from), to_(to) {
    for (const auto& t : g.templates) elements_.push_back(pattern_elements(t.side(from).pattern, from));
    for (const auto& t : tokenize(wrap_open(from), from).tokens) open_.push_back(t.text);
    for (const auto& t : tokenize(wrap_close(from), from).tokens) close_.push_back(t.text);
  }

  std::vector<Reading> parse(Category c) { return span(c, 0, tokens_.size()); }

 private:
  const std::vector<Reading>& span(Category c, std::size_t i, std::size_t j) {
    const auto key = std::make_tuple(static_cast<int>(c), i, j);
    if (const auto it = memo_.find(key); it != memo_.end()) return it->second;
    std::set<Reading> found;
    if (j == i + 1) leaves(c, tokens_[i], found);
    if (c == Category::Expression && j >= i + open_.size() + close_.size() + 1 &&
        matches_at(open_, i) && matches_at(close_, j - close_.size())) {
      for (Reading r : span(c, i + open_.size(), j - close_.size())) {
        if (r.wrapped) continue;
        r.wrapped = true;
        found.insert(r);
      }
    }
    for (std::size_t t = 0; t < g_.templates.size(); ++t) {
      if (g_.templates[t].produces == c) match_template(t, i, j, found);
    }
    return memo_[key] = std::vector<Reading>(found.begin(), found.end());
  }

  bool matches_at(const std::vector<std::string>& seq, std::size_t at) const {
    if (at + seq.size() > tokens_.size()) return false;
    for (std::size_t k = 0; k < seq.size(); ++k) {
      if (tokens_[at + k] != seq[k]) return false;
    }
    return true;
  }

  void leaves(Category c, const std::string& tok, std::set<Reading>& found) {
    if (c == Category::Number || c == Category::Expression) {
      if (!tok.empty() && std::all_of(tok.begin(), tok.end(), [](char ch) {
            return ch >= '0' && ch <= '9';
          })) {
        found.insert({prec::kAtom, false, tok, prec::kAtom});
      }
    }
    if (c == Category::Variable || c == Category::Expression) {
      for (const auto& a : g_.atoms) {
        if ((a.category == c || a.category == Category::Variable) && a.side(from_) == tok) {
          found.insert({prec::kAtom, false, a.side(to_), prec::kAtom});
        }
      }
    }
  }

  void match_template(std::size_t t, std::size_t i, std::size_t j, std::set<Reading>& found) {
    std::vector<const Reading*> fills(g_.templates[t].holes.size(), nullptr);
    match(t, 0, i, j, fills, found);
  }

  void match(std::size_t t, std::size_t e, std::size_t pos, std::size_t j,
             std::vector<const Reading*>& fills, std::set<Reading>& found) {
    const auto& elems = elements_[t];
    const Template& tmpl = g_.templates[t];
    if (e == elems.size()) {
      if (pos == j) found.insert(compose(tmpl, fills));
      return;
    }
    const Element& el = elems[e];
    if (el.hole < 0) {
      if (pos < j && tokens_[pos] == el.literal) match(t, e + 1, pos + 1, j, fills, found);
      return;
    }
    const auto h = static_cast<std::size_t>(el.hole);
    const int min_prec = tmpl.side(from_).hole_min[h];
    // Remaining elements need at least one token each.
    const std::size_t rest = elems.size() - e - 1;
    if (pos + 1 + rest > j) return;
    const std::size_t last_end = j - rest;
    for (std::size_t end = pos + 1; end <= last_end; ++end) {
      if (e + 1 == elems.size() && end != j) continue;
      if (e + 1 < elems.size() && elems[e + 1].hole < 0 &&
          (end >= j || tokens_[end] != elems[e + 1].literal)) {
        continue;
      }
      for (const Reading& r : span(tmpl.holes[h], pos, end)) {
        const bool ok = r.wrapped ? r.source_precedence < min_prec
                                  : r.source_precedence >= min_prec;
        if (!ok) continue;
        fills[h] = &r;
        match(t, e + 1, end, j, fills, found);
      }
    }
    fills[h] = nullptr;
  }

  Reading compose(const Template& tmpl, const std::vector<const Reading*>& fills) const {
    const TemplateSide& side = tmpl.side(to_);
    std::string text = fill_pattern(side, to_, [&](int hole) {
      const Reading* r = fills[static_cast<std::size_t>(hole)];
      return Rendering{r->text, r->precedence};
    });
    return {tmpl.side(from_).precedence, false, std::move(text), side.precedence};
  }

  const GrammarConfig& g_;
  std::vector<std::string> tokens_;
  Language from_;
  Language to_;
  std::vector<std::vector<Element>> elements_;
  std::vector<std::string> open_;
  std::vector<std::string> close_;
  std::map<std::tuple<int, std::size_t, std::size_t>, std::vector<Reading>> memo_;
};

}  // namespace

std::vector<std::string> grammar_readings(const GrammarConfig& grammar, std::string_view text,
                                          Language from, Language to) {
  const TokenStream stream = tokenize(text, from);
  if (stream.empty()) return {};
  Category root = Category::Expression;
  for (Category c : {Category::Relation, Category::Formula}) {
    for (const auto& t : grammar.templates) {
      if (t.produces == c) root = c;
    }
  }
  TemplateParser parser(grammar, stream.texts(), from, to);
  std::set<std::string> texts;
  for (const auto& r : parser.parse(root)) {
    if (!r.wrapped) texts.insert(r.text);
  }
  return {texts.begin(), texts.end()};
}

}  // namespace formt
