#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "formt/converter.hpp"
#include "formt/corpus.hpp"
#include "formt/decode.hpp"
#include "formt/metrics.hpp"

namespace formt {

struct FormulaRecord {
  std::string id;
  std::string source;
  std::string prediction;
  std::string reference;
  std::size_t ld = 0;
  bool exact = false;
  bool valid = false;
  std::string error;  // empty unless the formula failed; "<stage>: <message>"
};

struct EvalReport {
  MetricReport metrics;
  double validity_fraction = 0.0;
  double oov_fraction = 0.0;
  std::vector<FormulaRecord> records;
};

// Summary JSON: the metric fields plus "validity", "oov", "errors".
std::string eval_report_json(const EvalReport& report);
// One JSON object per formula record.
std::string eval_records_jsonl(const EvalReport& report);
// Writes `path` and the sidecar `<path stem>.records.jsonl` next to it.
void write_eval_report(const std::filesystem::path& path, const EvalReport& report);

// Presentation text -> content text; may throw formt::Error.
using Translator = std::function<std::string(std::string_view)>;

Translator bundle_translator(const ModelBundle& bundle, int beam_size = kDefaultBeamSize);

// Bracket-balance and operator-placement checks on a content-language stream; on
// Mathematica streams also requires `[` after every function head. A proxy for
// full parser acceptance.
bool syntax_validity(const TokenStream& stream);

// Fraction of streams holding at least one token outside `vocab`.
double oov_report(std::span<const TokenStream> corpus, const Vocabulary& vocab);

// The translator must map pair.source (presentation) to pair.target (content).
// Per-formula failures become non-matching records; the run never aborts on them.
EvalReport back_translation_eval(const Translator& translate, std::span<const FormulaPair> pairs,
                                 Language presentation, Language content);
EvalReport back_translation_eval(const ModelBundle& bundle, std::span<const FormulaPair> pairs,
                                 int beam_size = kDefaultBeamSize);

// presentation -> content (model) -> presentation (converter), compared with the
// original. Throws HarnessError before any work if the converter cannot serve
// content-to-presentation requests.
EvalReport round_trip_eval(const Translator& translate, ExternalConverter& converter,
                           std::span<const FormulaPair> corpus, Language presentation,
                           Language content);
EvalReport round_trip_eval(const ModelBundle& bundle, ExternalConverter& converter,
                           std::span<const FormulaPair> corpus, int beam_size = kDefaultBeamSize);

}  // namespace formt
