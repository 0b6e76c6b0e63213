// formt: command-line front end.
//
// Exit codes: 0 success, 1 runtime error, 2 usage error.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "formt/ablation.hpp"
#include "formt/checkpoint.hpp"
#include "formt/config.hpp"
#include "formt/corpus.hpp"
#include "formt/decode.hpp"
#include "formt/error.hpp"
#include "formt/eval.hpp"
#include "formt/pipeline.hpp"
#include "formt/train.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace formt;

namespace {

constexpr int kRuntimeError = 1;
constexpr int kUsageError = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  return out;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Language language_option(const std::string& name) {
  try {
    return parse_language(name);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

void write_languages(const fs::path& dir, LanguagePair langs) {
  auto out = open_output(dir / "languages.json");
  out << nlohmann::json{{"source", std::string(language_name(langs.source))},
                        {"target", std::string(language_name(langs.target))}}
             .dump()
      << '\n';
}

LanguagePair read_languages(const fs::path& dir) {
  try {
    const auto j = nlohmann::json::parse(read_file(dir / "languages.json"));
    return {parse_language(j.at("source").get<std::string>()),
            parse_language(j.at("target").get<std::string>())};
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError((dir / "languages.json").string() + ": " + e.what());
  }
}

// One formula per line, or a corpus when the file ends in .jsonl.
std::vector<FormulaPair> read_sources(const fs::path& path) {
  if (path.extension() == ".jsonl") {
    std::vector<FormulaPair> out;
    const std::string text = read_file(path);
    std::istringstream lines(text);
    std::string line;
    int number = 0;
    while (std::getline(lines, line)) {
      ++number;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        const auto j = nlohmann::json::parse(line);
        FormulaPair p;
        p.source = j.at("source").get<std::string>();
        p.target = j.value("target", std::string());
        p.id = j.contains("id") ? j.at("id").get<std::string>() : std::to_string(number);
        out.push_back(std::move(p));
      } catch (const nlohmann::json::exception& e) {
        throw ParseError(path.string() + ":" + std::to_string(number) + ": " + e.what());
      }
    }
    return out;
  }
  std::vector<FormulaPair> out;
  std::istringstream lines(read_file(path));
  std::string line;
  int number = 0;
  while (std::getline(lines, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    out.push_back({line, "", std::to_string(number)});
  }
  return out;
}

// ---------------------------------------------------------------------------

struct TokenizeArgs {
  std::string lang;
  fs::path input;
  std::optional<fs::path> output;
};

int cmd_tokenize(const TokenizeArgs& a) {
  const Language lang = language_option(a.lang);
  std::ifstream in(a.input);
  if (!in) throw UsageError("cannot read " + a.input.string());
  std::ofstream file;
  if (a.output) file = open_output(*a.output);
  std::ostream& out = a.output ? file : std::cout;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    try {
      const auto texts = tokenize(line, lang).texts();
      for (std::size_t i = 0; i < texts.size(); ++i) out << (i ? " " : "") << texts[i];
      out << '\n';
    } catch (const Error& e) {
      throw InputError(a.input.string() + ":" + std::to_string(number) + ": " + e.kind() + ": " +
                       e.what());
    }
  }
  return 0;
}

struct SynthArgs {
  std::size_t count = 1000;
  std::uint64_t seed = 1;
  int depth = 3;
  std::string target = "mathematica";
  fs::path output;
  std::optional<fs::path> stats;
};

int cmd_synth(const SynthArgs& a) {
  GrammarConfig g = GrammarConfig::standard(a.seed, a.count, a.depth);
  g.target = language_option(a.target);
  if (is_latex_language(g.target) && g.target != Language::SemanticLatex) {
    throw UsageError("--target must be a content language (mathematica, semantic-latex)");
  }
  const auto pairs = generate_synthetic(g);
  save_corpus(a.output, pairs);
  if (a.stats) open_output(*a.stats) << stats_to_json(corpus_stats(pairs)) << '\n';
  std::cerr << "wrote " << pairs.size() << " pairs to " << a.output.string() << '\n';
  return 0;
}

struct PreprocessArgs {
  fs::path input;
  fs::path output;
  std::optional<fs::path> config;
  std::optional<std::uint64_t> seed;
  std::optional<int> max_tokens;
  std::optional<double> valid, test;
  std::string source_lang = "latex";
  std::string target_lang = "mathematica";
  std::vector<std::string> set;
};

void apply_sets(RunConfig& config, const std::vector<std::string>& sets) {
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + s + "'");
    config.set(s.substr(0, eq), s.substr(eq + 1));
  }
}

int cmd_preprocess(const PreprocessArgs& a) {
  RunConfig config;
  if (a.config) config.load_file(*a.config);
  if (a.seed) config.data.seed = *a.seed;
  if (a.max_tokens) config.data.max_tokens = *a.max_tokens;
  if (a.valid) config.data.valid_fraction = *a.valid;
  if (a.test) config.data.test_fraction = *a.test;
  apply_sets(config, a.set);
  const LanguagePair langs{language_option(a.source_lang), language_option(a.target_lang)};

  const auto corpus = load_corpus(a.input);
  const auto split = split_corpus(
      corpus, SplitSpec::from_fractions(1.0 - config.data.valid_fraction - config.data.test_fraction,
                                        config.data.valid_fraction, config.data.test_fraction,
                                        config.data.seed));
  const auto train_tagged = tag_pairs(split.train, langs, config.data.seed, config.data.overflow);
  const Dictionaries dicts = build_dictionaries(train_tagged, config.data.min_count, config.data.shared_dictionary);
  fs::create_directories(a.output);
  dicts.source.save(a.output / "source.vocab");
  dicts.target.save(a.output / "target.vocab");
  write_languages(a.output, langs);

  const std::pair<const char*, const std::vector<FormulaPair>*> parts[] = {
      {"train", &split.train}, {"valid", &split.valid}, {"test", &split.test}};
  nlohmann::json summary;
  for (const auto& [name, pairs] : parts) {
    const auto tagged = tag_pairs(*pairs, langs, config.data.seed, config.data.overflow);
    auto encoded = encode_pairs(tagged, dicts);
    const std::size_t before = encoded.size();
    encoded = filter_by_length(std::move(encoded), config.data.max_tokens);
    std::set<std::string> kept;
    for (const auto& p : encoded) kept.insert(p.id);
    std::vector<FormulaPair> raw;
    for (const auto& p : *pairs) {
      if (kept.contains(p.id)) raw.push_back(p);
    }
    save_encoded(a.output / (std::string(name) + ".jsonl"), encoded);
    save_corpus(a.output / (std::string(name) + ".corpus.jsonl"), raw);
    summary[name] = {{"pairs", encoded.size()}, {"dropped_over_length", before - encoded.size()}};
  }
  summary["source_vocab"] = dicts.source.size();
  summary["target_vocab"] = dicts.target.size();
  summary["stats"] = nlohmann::json::parse(stats_to_json(corpus_stats(corpus)));
  open_output(a.output / "summary.json") << summary.dump(2) << '\n';
  open_output(a.output / "config.txt") << config.effective();
  std::cout << summary.dump(2) << '\n';
  return 0;
}

struct TrainArgs {
  fs::path data;
  fs::path output;
  std::optional<fs::path> config;
  std::optional<std::uint64_t> seed;
  std::optional<int> state_size, layers, kernel, max_epochs, patience;
  std::optional<double> dropout, label_smoothing, lr, clip, momentum, target_em;
  std::optional<std::size_t> batch_tokens;
  std::optional<std::string> optimizer;
  std::vector<std::string> set;
  bool dry_run = false;
};

int cmd_train(const TrainArgs& a) {
  RunConfig config;
  const fs::path preprocess_config = a.data / "config.txt";
  if (a.config) config.load_file(*a.config);
  if (a.seed) {
    config.model.seed = *a.seed;
    config.train.seed = *a.seed;
  }
  if (a.state_size) config.model.state_size = *a.state_size;
  if (a.layers) config.model.num_layers = *a.layers;
  if (a.kernel) config.model.kernel_size = *a.kernel;
  if (a.dropout) config.model.dropout = *a.dropout;
  if (a.label_smoothing) config.model.label_smoothing = *a.label_smoothing;
  if (a.lr) config.train.learning_rate = *a.lr;
  if (a.clip) config.train.clip_threshold = *a.clip;
  if (a.momentum) config.train.momentum = *a.momentum;
  if (a.batch_tokens) config.train.max_tokens_per_batch = *a.batch_tokens;
  if (a.max_epochs) config.train.max_epochs = *a.max_epochs;
  if (a.patience) config.train.patience = *a.patience;
  if (a.target_em) config.train.target_em = *a.target_em;
  if (a.optimizer) config.set("train.optimizer", *a.optimizer);
  apply_sets(config, a.set);

  ModelBundle bundle;
  bundle.source_vocab = Vocabulary::load(a.data / "source.vocab");
  bundle.target_vocab = Vocabulary::load(a.data / "target.vocab");
  const LanguagePair langs = read_languages(a.data);
  bundle.source_language = langs.source;
  bundle.target_language = langs.target;
  if (fs::exists(preprocess_config)) {
    RunConfig prep;
    prep.load_file(preprocess_config);
    bundle.number_seed = prep.data.seed;
    config.data = prep.data;
  }
  config.model.source_vocab_size = bundle.source_vocab.size();
  config.model.target_vocab_size = bundle.target_vocab.size();
  config.model.validate();
  config.train.validate();

  const std::string effective = config.effective();
  std::cout << effective << std::flush;
  if (a.dry_run) return 0;
  fs::create_directories(a.output);
  open_output(a.output / "config.txt") << effective;

  const auto train_set = load_encoded(a.data / "train.jsonl");
  const auto valid_set = load_encoded(a.data / "valid.jsonl");
  TrainOptions options;
  options.output_dir = a.output;
  options.log = [](const std::string& line) { std::cerr << line << '\n'; };
  auto result = train(init_model<float>(config.model), train_set, valid_set, bundle.target_vocab,
                      bundle.target_language, config.train, options);
  bundle.model = std::move(result.best);
  bundle.save(a.output / "bundle");
  std::cerr << "best epoch " << result.best_epoch << ", bundle in "
            << (a.output / "bundle").string() << '\n';
  return 0;
}

struct TranslateArgs {
  fs::path model;
  fs::path input;
  fs::path output;
  int beam = kDefaultBeamSize;
  int max_len = 0;
};

int cmd_translate(const TranslateArgs& a) {
  const auto bundle = ModelBundle::load(a.model);
  const auto inputs = read_sources(a.input);
  auto out = open_output(a.output);
  std::size_t failures = 0;
  for (const auto& item : inputs) {
    try {
      const auto t = translate(item.source, bundle.source_language, bundle, a.beam, a.max_len);
      out << translation_record_json(item.id, item.source, t) << '\n';
    } catch (const Error& e) {
      ++failures;
      out << nlohmann::json{{"id", item.id},
                            {"source", item.source},
                            {"prediction", nullptr},
                            {"score", nullptr},
                            {"number_map", nlohmann::json::object()},
                            {"error", std::string(e.kind()) + ": " + e.what()}}
                 .dump()
          << '\n';
      std::cerr << "error [" << e.kind() << "] " << item.id << ": " << e.what() << '\n';
    }
  }
  if (failures) {
    std::cerr << failures << " of " << inputs.size() << " formulae failed\n";
    return kRuntimeError;
  }
  return 0;
}

struct EvaluateArgs {
  std::optional<fs::path> model;
  std::optional<fs::path> predictions;
  fs::path references;
  fs::path output;
  std::string source_lang = "latex";
  std::string target_lang = "mathematica";
  int beam = kDefaultBeamSize;
};

int cmd_evaluate(const EvaluateArgs& a) {
  if (a.model.has_value() == a.predictions.has_value()) {
    throw UsageError("evaluate needs exactly one of --model and --predictions");
  }
  const auto corpus = load_corpus(a.references);
  EvalReport report;
  if (a.model) {
    const auto bundle = ModelBundle::load(*a.model);
    report = back_translation_eval(bundle, corpus, a.beam);
  } else {
    std::map<std::string, std::optional<std::string>> by_id;
    const std::string text = read_file(*a.predictions);
    std::istringstream lines(text);
    std::string line;
    int number = 0;
    while (std::getline(lines, line)) {
      ++number;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        const auto j = nlohmann::json::parse(line);
        const auto& p = j.at("prediction");
        by_id[j.at("id").get<std::string>()] =
            p.is_null() ? std::nullopt : std::optional<std::string>(p.get<std::string>());
      } catch (const nlohmann::json::exception& e) {
        throw ParseError(a.predictions->string() + ":" + std::to_string(number) + ": " + e.what());
      }
    }
    // Pairs are visited in order, so the translator can look up by position.
    std::size_t index = 0;
    const Translator lookup = [&](std::string_view) -> std::string {
      const auto& id = corpus[index++].id;
      const auto it = by_id.find(id);
      if (it == by_id.end()) throw InputError("no prediction for id '" + id + "'");
      if (!it->second) throw InputError("prediction for id '" + id + "' failed");
      return *it->second;
    };
    report = back_translation_eval(lookup, corpus, language_option(a.source_lang),
                                   language_option(a.target_lang));
  }
  write_eval_report(a.output, report);
  std::cout << eval_report_json(report) << '\n';
  return 0;
}

struct RoundtripArgs {
  fs::path model;
  fs::path input;
  fs::path output;
  std::string converter = "grammar";
  int beam = kDefaultBeamSize;
};

int cmd_roundtrip(const RoundtripArgs& a) {
  const auto bundle = ModelBundle::load(a.model);
  auto converter = make_converter(a.converter, bundle.source_language, bundle.target_language);
  const auto corpus = read_sources(a.input);
  const auto report = round_trip_eval(bundle, *converter, corpus, a.beam);
  write_eval_report(a.output, report);
  std::cout << eval_report_json(report) << '\n';
  return 0;
}

struct AblateArgs {
  fs::path grid;
  std::string scale = "none";
  std::size_t pairs = 2000;
  int epochs = 5;
  int depth = 3;
  std::size_t batch_tokens = 4000;
  std::uint64_t seed = 1;
  int jobs = 1;
  std::optional<fs::path> output;
};

int cmd_ablate(const AblateArgs& a) {
  Grid grid;
  try {
    grid = parse_grid(read_file(a.grid));
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  for (const auto& w : grid.warnings) std::cerr << "warning: " << w << '\n';
  AblationSettings s;
  if (a.scale != "none") {
    try {
      s.scale_state = std::stoi(a.scale);
    } catch (const std::exception&) {
      throw UsageError("--scale expects a state size or 'none'");
    }
  }
  s.pairs = a.pairs;
  s.epochs = a.epochs;
  s.max_depth = a.depth;
  s.batch_tokens = a.batch_tokens;
  s.seed = a.seed;
  s.jobs = a.jobs;
  const auto rows = run_ablation(grid, s, [](const std::string& line) { std::cerr << line << '\n'; });
  const std::string table = ablation_table(rows);
  if (a.output) open_output(*a.output) << table;
  std::cout << table;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"formt: formula translation from presentation LaTeX to content languages"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "formt 1.0");

  TokenizeArgs tok;
  auto* t = app.add_subcommand("tokenize", "Tokenize one formula per line");
  t->add_option("--lang", tok.lang, "latex, semantic-latex or mathematica")->required();
  t->add_option("--input", tok.input, "Input file, one formula per line")
      ->required()
      ->check(CLI::ExistingFile);
  t->add_option("--output", tok.output, "Output file (default: stdout)");

  SynthArgs syn;
  auto* s = app.add_subcommand("synth", "Generate a synthetic aligned corpus");
  s->add_option("--count", syn.count, "Number of pairs")->capture_default_str();
  s->add_option("--seed", syn.seed, "Random seed")->capture_default_str();
  s->add_option("--depth", syn.depth, "Maximum derivation depth")->capture_default_str();
  s->add_option("--target", syn.target, "mathematica or semantic-latex")->capture_default_str();
  s->add_option("--output", syn.output, "Corpus JSONL")->required();
  s->add_option("--stats", syn.stats, "Also write corpus statistics JSON here");

  PreprocessArgs pre;
  auto* p = app.add_subcommand("preprocess", "Split, tag numbers, build dictionaries, encode");
  p->add_option("--input", pre.input, "Corpus JSONL")->required()->check(CLI::ExistingFile);
  p->add_option("--output", pre.output, "Output directory")->required();
  p->add_option("--config", pre.config, "Config file (key = value)")->check(CLI::ExistingFile);
  p->add_option("--seed", pre.seed, "Split and number-tag seed (data.seed)");
  p->add_option("--max-tokens", pre.max_tokens, "Per-side token cap (data.max_tokens, default 1024)");
  p->add_option("--valid", pre.valid, "Validation fraction (data.valid_fraction)");
  p->add_option("--test", pre.test, "Test fraction (data.test_fraction)");
  p->add_option("--source-lang", pre.source_lang, "Source language")->capture_default_str();
  p->add_option("--target-lang", pre.target_lang, "Target language")->capture_default_str();
  p->add_option("--set", pre.set, "Override any config key: key=value (repeatable)");

  TrainArgs tr;
  auto* r = app.add_subcommand("train", "Train a model on preprocessed data");
  r->add_option("--data", tr.data, "Preprocess output directory")->required()->check(CLI::ExistingDirectory);
  r->add_option("--output", tr.output, "Run directory (log, checkpoints, bundle)")->required();
  r->add_option("--config", tr.config, "Config file (key = value)")->check(CLI::ExistingFile);
  r->add_option("--seed", tr.seed, "Seed for init, dropout and batching");
  r->add_option("--state-size", tr.state_size, "model.state_size (default 512)");
  r->add_option("--layers", tr.layers, "model.num_layers (default 11)");
  r->add_option("--kernel", tr.kernel, "model.kernel_size (default 3)");
  r->add_option("--dropout", tr.dropout, "model.dropout (default 0.2)");
  r->add_option("--label-smoothing", tr.label_smoothing, "model.label_smoothing (default 0.1)");
  r->add_option("--lr", tr.lr, "train.learning_rate (default 0.25)");
  r->add_option("--clip", tr.clip, "train.clip_threshold (default 0.1)");
  r->add_option("--momentum", tr.momentum, "train.momentum (default 0.99)");
  r->add_option("--batch-tokens", tr.batch_tokens, "train.max_tokens_per_batch (default 48000)");
  r->add_option("--max-epochs", tr.max_epochs, "train.max_epochs (default 100)");
  r->add_option("--patience", tr.patience, "train.patience (default 5)");
  r->add_option("--optimizer", tr.optimizer, "nesterov or sgd");
  r->add_option("--target-em", tr.target_em, "Stop once validation EM reaches this value");
  r->add_option("--set", tr.set, "Override any config key: key=value (repeatable)");
  r->add_flag("--dry-run", tr.dry_run, "Print the effective configuration and exit");

  TranslateArgs tl;
  auto* l = app.add_subcommand("translate", "Translate formulae with a trained bundle");
  l->add_option("--model", tl.model, "Bundle directory")->required()->check(CLI::ExistingDirectory);
  l->add_option("--input", tl.input, "One formula per line, or corpus .jsonl")
      ->required()
      ->check(CLI::ExistingFile);
  l->add_option("--output", tl.output, "Translation records JSONL")->required();
  l->add_option("--beam", tl.beam, "Beam size")->capture_default_str();
  l->add_option("--max-len", tl.max_len, "Output length cap (0: min(max_positions, 2n+50))")
      ->capture_default_str();

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "Back-translation evaluation report");
  e->add_option("--model", ev.model, "Bundle directory to translate with")->check(CLI::ExistingDirectory);
  e->add_option("--predictions", ev.predictions, "Translation records JSONL to score")
      ->check(CLI::ExistingFile);
  e->add_option("--references", ev.references, "Test corpus JSONL")->required()->check(CLI::ExistingFile);
  e->add_option("--output", ev.output, "Report JSON (records go to <stem>.records.jsonl)")->required();
  e->add_option("--source-lang", ev.source_lang, "Source language with --predictions")
      ->capture_default_str();
  e->add_option("--target-lang", ev.target_lang, "Target language with --predictions")
      ->capture_default_str();
  e->add_option("--beam", ev.beam, "Beam size with --model")->capture_default_str();

  RoundtripArgs rt;
  auto* o = app.add_subcommand("roundtrip", "Round trip through an external converter");
  o->add_option("--model", rt.model, "Bundle directory")->required()->check(CLI::ExistingDirectory);
  o->add_option("--input", rt.input, "Presentation formulae, one per line or corpus .jsonl")
      ->required()
      ->check(CLI::ExistingFile);
  o->add_option("--output", rt.output, "Report JSON")->required();
  o->add_option("--converter", rt.converter, "identity, reject, grammar or exec:<program>")
      ->capture_default_str();
  o->add_option("--beam", rt.beam, "Beam size")->capture_default_str();

  AblateArgs ab;
  auto* b = app.add_subcommand("ablate", "Train a grid of C<state>[ks<kernel>]x<layers> models");
  b->add_option("--grid", ab.grid, "Grid file")->required()->check(CLI::ExistingFile);
  b->add_option("--scale", ab.scale, "Train every entry at this state size, or 'none'")
      ->capture_default_str();
  b->add_option("--pairs", ab.pairs, "Synthetic corpus size")->capture_default_str();
  b->add_option("--epochs", ab.epochs, "Epochs per configuration")->capture_default_str();
  b->add_option("--depth", ab.depth, "Synthetic derivation depth")->capture_default_str();
  b->add_option("--batch-tokens", ab.batch_tokens, "Token budget per batch")->capture_default_str();
  b->add_option("--seed", ab.seed, "Seed")->capture_default_str();
  b->add_option("--jobs", ab.jobs, "Configurations trained concurrently")->capture_default_str();
  b->add_option("--output", ab.output, "Also write the table here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForAllHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForVersion& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return kUsageError;
  }

  try {
    if (*t) return cmd_tokenize(tok);
    if (*s) return cmd_synth(syn);
    if (*p) return cmd_preprocess(pre);
    if (*r) return cmd_train(tr);
    if (*l) return cmd_translate(tl);
    if (*e) return cmd_evaluate(ev);
    if (*o) return cmd_roundtrip(rt);
    if (*b) return cmd_ablate(ab);
  } catch (const UsageError& err) {
    std::cerr << "formt: usage error: " << err.what() << '\n';
    return kUsageError;
  } catch (const ConfigError& err) {
    std::cerr << "formt: error [ConfigError]: " << err.what() << '\n';
    return kUsageError;
  } catch (const Error& err) {
    std::cerr << "formt: error [" << err.kind() << "]: " << err.what() << '\n';
    return kRuntimeError;
  } catch (const std::exception& err) {
    std::cerr << "formt: error: " << err.what() << '\n';
    return kRuntimeError;
  }
  return kUsageError;
}
