#include "formt/eval.hpp"

#include <fstream>
#include <set>

#include "formt/error.hpp"
#include "formt/pipeline.hpp"
#include "json.hpp"

namespace formt {

using json = nlohmann::json;

namespace {

bool is_open(std::string_view t) { return t == "(" || t == "[" || t == "{"; }
bool is_close(std::string_view t) { return t == ")" || t == "]" || t == "}"; }

char partner(std::string_view close) {
  return close == ")" ? '(' : close == "]" ? '[' : '{';
}

// Operators needing a left operand.
const std::set<std::string, std::less<>> kNoLeading = {
    "*", "/", "^", "=", "==", "&&", "<=", ">=", "!=", "/;", "<", ">", ",", "_"};
// Operators needing a right operand.
const std::set<std::string, std::less<>> kNoTrailing = {
    "*", "/", "^", "=", "==", "&&", "<=", ">=", "!=", "/;", "<", ">", ",", "_", "+", "-"};

// Symbols that stand alone without an argument list.
const std::set<std::string, std::less<>> kConstants = {
    "Pi",        "E",          "I",           "Infinity", "ComplexInfinity", "Degree",
    "EulerGamma", "GoldenRatio", "Catalan",   "True",     "False",           "Indeterminate",
    "Null",      "All",        "None",        "Automatic"};

bool is_function_head(const Token& t) {
  if (t.kind != TokenKind::Letter || t.text.size() < 2) return false;
  if (!(t.text[0] >= 'A' && t.text[0] <= 'Z')) return false;
  return !kConstants.contains(t.text);
}

FormulaRecord failed_record(const FormulaPair& pair, const TokenStream& reference,
                            std::string error) {
  FormulaRecord r;
  r.id = pair.id;
  r.source = pair.source;
  r.ld = reference.size();
  r.error = std::move(error);
  return r;
}

EvalReport summarize(std::vector<FormulaRecord> records, std::vector<StreamPair> streams,
                     double oov) {
  if (records.empty()) throw UndefinedMetricError("evaluation over an empty corpus");
  EvalReport report;
  report.metrics = compute_metrics(streams);
  std::size_t valid = 0;
  for (const auto& r : records) valid += r.valid;
  report.validity_fraction = static_cast<double>(valid) / static_cast<double>(records.size());
  report.oov_fraction = oov;
  report.records = std::move(records);
  return report;
}

}  // namespace

bool syntax_validity(const TokenStream& stream) {
  const auto& toks = stream.tokens;
  if (toks.empty()) return true;
  std::vector<char> stack;
  for (const auto& t : toks) {
    if (is_open(t.text)) {
      stack.push_back(t.text[0]);
    } else if (is_close(t.text)) {
      if (stack.empty() || stack.back() != partner(t.text)) return false;
      stack.pop_back();
    }
  }
  if (!stack.empty()) return false;
  if (kNoLeading.contains(toks.front().text) || kNoTrailing.contains(toks.back().text)) return false;
  if (stream.language == Language::MathematicaInput) {
    for (std::size_t i = 0; i < toks.size(); ++i) {
      if (is_function_head(toks[i]) && (i + 1 == toks.size() || toks[i + 1].text != "[")) {
        return false;
      }
    }
  }
  return true;
}

double oov_report(std::span<const TokenStream> corpus, const Vocabulary& vocab) {
  if (corpus.empty()) throw UndefinedMetricError("OOV fraction of an empty corpus");
  std::size_t hits = 0;
  for (const auto& s : corpus) {
    for (const auto& t : s.tokens) {
      if (!vocab.contains(t.text)) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(corpus.size());
}

Translator bundle_translator(const ModelBundle& bundle, int beam_size) {
  return [&bundle, beam_size](std::string_view text) {
    return translate(text, bundle.source_language, bundle, beam_size).text;
  };
}

EvalReport back_translation_eval(const Translator& translate_fn, std::span<const FormulaPair> pairs,
                                 Language presentation, Language content) {
  std::vector<FormulaRecord> records;
  std::vector<StreamPair> streams;
  for (const auto& pair : pairs) {
    TokenStream reference;
    try {
      reference = tokenize(pair.target, content);
    } catch (const Error& e) {
      records.push_back(failed_record(pair, reference, std::string("reference: ") + e.what()));
      records.back().reference = pair.target;
      streams.emplace_back(TokenStream{{}, content}, reference);
      continue;
    }
    std::string prediction;
    TokenStream predicted{{}, content};
    try {
      prediction = translate_fn(pair.source);
      predicted = tokenize(prediction, content);
    } catch (const Error& e) {
      records.push_back(failed_record(pair, reference, std::string("translate: ") + e.what()));
      records.back().reference = pair.target;
      streams.emplace_back(TokenStream{{}, content}, reference);
      continue;
    }
    FormulaRecord r;
    r.id = pair.id;
    r.source = pair.source;
    r.prediction = prediction;
    r.reference = pair.target;
    r.ld = levenshtein(predicted, reference);
    r.exact = exact_match(predicted, reference);
    r.valid = syntax_validity(predicted);
    records.push_back(std::move(r));
    streams.emplace_back(std::move(predicted), std::move(reference));
  }
  (void)presentation;
  return summarize(std::move(records), std::move(streams), 0.0);
}

EvalReport back_translation_eval(const ModelBundle& bundle, std::span<const FormulaPair> pairs,
                                 int beam_size) {
  EvalReport report = back_translation_eval(bundle_translator(bundle, beam_size), pairs,
                                            bundle.source_language, bundle.target_language);
  std::vector<TokenStream> sources;
  for (const auto& p : pairs) {
    try {
      const auto tokens = tokenize(p.source, bundle.source_language);
      sources.push_back(
          substitute_numbers(tokens, formula_seed(bundle.number_seed, p.source),
                             OverflowPolicy::SplitDigits)
              .stream);
    } catch (const Error&) {
      // Untokenizable sources carry a token no dictionary holds.
      sources.push_back(stream_from_texts({"<untokenizable>"}, bundle.source_language));
    }
  }
  report.oov_fraction = oov_report(sources, bundle.source_vocab);
  return report;
}

EvalReport round_trip_eval(const Translator& translate_fn, ExternalConverter& converter,
                           std::span<const FormulaPair> corpus, Language presentation,
                           Language) {
  if (!converter.available()) {
    throw HarnessError("converter '" + converter.name() + "' is unavailable");
  }
  if (!converter.supports(Direction::ContentToPresentation)) {
    throw HarnessError("converter '" + converter.name() +
                       "' does not convert content to presentation");
  }
  std::vector<FormulaRecord> records;
  std::vector<StreamPair> streams;
  for (const auto& item : corpus) {
    TokenStream original{{}, presentation};
    try {
      original = tokenize(item.source, presentation);
    } catch (const Error& e) {
      records.push_back(failed_record(item, original, std::string("source: ") + e.what()));
      streams.emplace_back(TokenStream{{}, presentation}, original);
      continue;
    }
    std::string content_text;
    try {
      content_text = translate_fn(item.source);
    } catch (const Error& e) {
      records.push_back(failed_record(item, original, std::string("translate: ") + e.what()));
      records.back().reference = item.source;
      streams.emplace_back(TokenStream{{}, presentation}, original);
      continue;
    }
    const ConversionResult back = converter.convert(Direction::ContentToPresentation, content_text);
    if (!back.ok) {
      records.push_back(failed_record(item, original, "convert: " + back.text));
      records.back().reference = item.source;
      streams.emplace_back(TokenStream{{}, presentation}, original);
      continue;
    }
    TokenStream returned{{}, presentation};
    FormulaRecord r;
    r.id = item.id;
    r.source = item.source;
    r.reference = item.source;
    r.prediction = back.text;
    r.valid = true;
    try {
      returned = tokenize(back.text, presentation);
    } catch (const Error& e) {
      r.error = std::string("returned: ") + e.what();
    }
    r.ld = levenshtein(returned, original);
    r.exact = r.error.empty() && exact_match(returned, original);
    records.push_back(std::move(r));
    streams.emplace_back(std::move(returned), std::move(original));
  }
  return summarize(std::move(records), std::move(streams), 0.0);
}

EvalReport round_trip_eval(const ModelBundle& bundle, ExternalConverter& converter,
                           std::span<const FormulaPair> corpus, int beam_size) {
  return round_trip_eval(bundle_translator(bundle, beam_size), converter, corpus,
                         bundle.source_language, bundle.target_language);
}

std::string eval_report_json(const EvalReport& report) {
  std::size_t errors = 0;
  for (const auto& r : report.records) errors += !r.error.empty();
  json j = json::parse(metric_report_json(report.metrics));
  j["validity"] = report.validity_fraction;
  j["oov"] = report.oov_fraction;
  j["errors"] = errors;
  return j.dump(2);
}

std::string eval_records_jsonl(const EvalReport& report) {
  std::string out;
  for (const auto& r : report.records) {
    json j{{"id", r.id},       {"source", r.source}, {"prediction", r.prediction},
           {"reference", r.reference}, {"ld", r.ld}, {"em", r.exact},
           {"valid", r.valid}};
    if (!r.error.empty()) j["error"] = r.error;
    out += j.dump();
    out += '\n';
  }
  return out;
}

void write_eval_report(const std::filesystem::path& path, const EvalReport& report) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  {
    std::ofstream f(path);
    if (!f) throw InputError("cannot write " + path.string());
    f << eval_report_json(report) << '\n';
  }
  auto sidecar = path;
  sidecar.replace_filename(path.stem().string() + ".records.jsonl");
  std::ofstream f(sidecar);
  if (!f) throw InputError("cannot write " + sidecar.string());
  f << eval_records_jsonl(report);
}

}  // namespace formt
