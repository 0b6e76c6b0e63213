#include "formt/decode.hpp"

#include <algorithm>
#include <fstream>

#include "formt/checkpoint.hpp"
#include "formt/error.hpp"
#include "formt/pipeline.hpp"
#include "json.hpp"

namespace formt {

using json = nlohmann::json;

int default_max_len(const ModelConfig& config, std::size_t source_length) {
  return static_cast<int>(
      std::min<std::size_t>(static_cast<std::size_t>(config.max_positions), 2 * source_length + 50));
}

namespace {

template <typename S>
int argmax_row(const Matrix<S>& m, Eigen::Index row) {
  int best = 0;
  for (Eigen::Index v = 1; v < m.cols(); ++v) {
    if (m(row, v) > m(row, best)) best = static_cast<int>(v);
  }
  return best;
}

void check_decode_args(std::span<const int> source_ids, int max_len) {
  if (source_ids.empty()) throw InputError("cannot decode an empty source");
  if (max_len < 1) throw InputError("max_len must be at least 1");
}

}  // namespace

template <typename S>
std::vector<int> greedy_decode(const Model<S>& model, std::span<const int> source_ids,
                               int max_len) {
  check_decode_args(source_ids, max_len);
  const auto encoded = encode_source(model, source_ids);
  IncrementalDecoder<S> decoder(model, {&encoded});
  std::vector<int> out;
  int token = Vocabulary::kBos;
  while (static_cast<int>(out.size()) < max_len) {
    const Matrix<S> log_probs = decoder.step(std::span<const int>(&token, 1));
    token = argmax_row(log_probs, 0);
    out.push_back(token);
    if (token == Vocabulary::kEos) break;
  }
  return out;
}

template <typename S>
std::vector<std::vector<int>> greedy_decode_batch(const Model<S>& model,
                                                  std::span<const std::vector<int>> sources,
                                                  int max_len) {
  std::vector<EncoderOutput<S>> encoded;
  std::vector<int> limits;
  encoded.reserve(sources.size());
  for (const auto& src : sources) {
    const int limit = max_len > 0 ? max_len : default_max_len(model.config, src.size());
    check_decode_args(src, limit);
    encoded.push_back(encode_source(model, src));
    limits.push_back(limit);
  }
  std::vector<std::vector<int>> out(sources.size());
  std::vector<std::size_t> active(sources.size());
  std::vector<const EncoderOutput<S>*> rows;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    active[i] = i;
    rows.push_back(&encoded[i]);
  }
  if (active.empty()) return out;
  IncrementalDecoder<S> decoder(model, rows);
  std::vector<int> tokens(active.size(), Vocabulary::kBos);
  while (!active.empty()) {
    const Matrix<S> log_probs = decoder.step(tokens);
    std::vector<std::size_t> keep;
    std::vector<std::size_t> next_active;
    std::vector<int> next_tokens;
    for (std::size_t r = 0; r < active.size(); ++r) {
      const std::size_t i = active[r];
      const int token = argmax_row(log_probs, static_cast<Eigen::Index>(r));
      out[i].push_back(token);
      if (token == Vocabulary::kEos || static_cast<int>(out[i].size()) >= limits[i]) continue;
      keep.push_back(r);
      next_active.push_back(i);
      next_tokens.push_back(token);
    }
    if (next_active.empty()) break;
    if (keep.size() != active.size()) decoder.reorder(keep);
    active = std::move(next_active);
    tokens = std::move(next_tokens);
  }
  return out;
}

namespace {

struct Candidate {
  double score;
  double token_log_prob;
  int token;
  std::size_t parent;
};

// Higher score first, then the more likely token, then the smaller id.
bool candidate_before(const Candidate& a, const Candidate& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.token_log_prob != b.token_log_prob) return a.token_log_prob > b.token_log_prob;
  if (a.token != b.token) return a.token < b.token;
  return a.parent < b.parent;
}

bool hypothesis_before(const Hypothesis& a, const Hypothesis& b) {
  if (a.normalized_score != b.normalized_score) return a.normalized_score > b.normalized_score;
  if (a.ids.back() != b.ids.back()) return a.ids.back() < b.ids.back();
  return a.ids.size() < b.ids.size();
}

Hypothesis finish(std::vector<int> ids, double score) {
  Hypothesis h;
  h.normalized_score = score / static_cast<double>(ids.size());
  h.ids = std::move(ids);
  h.score = score;
  return h;
}

}  // namespace

template <typename S>
std::vector<Hypothesis> beam_search(const Model<S>& model, std::span<const int> source_ids,
                                    int beam_size, int max_len) {
  check_decode_args(source_ids, max_len);
  if (beam_size < 1) throw InputError("beam_size must be at least 1");
  const auto encoded = encode_source(model, source_ids);
  IncrementalDecoder<S> decoder(model, {&encoded});
  const auto beam = static_cast<std::size_t>(beam_size);

  struct Live {
    std::vector<int> ids;
    double score;
  };
  std::vector<Live> live{{{}, 0.0}};
  std::vector<Hypothesis> finished;
  std::vector<int> tokens{Vocabulary::kBos};
  std::vector<Candidate> candidates;

  for (int step = 0; step < max_len && !live.empty() && finished.size() < beam; ++step) {
    const Matrix<S> log_probs = decoder.step(tokens);
    candidates.clear();
    for (std::size_t r = 0; r < live.size(); ++r) {
      for (Eigen::Index v = 0; v < log_probs.cols(); ++v) {
        const double lp = static_cast<double>(log_probs(static_cast<Eigen::Index>(r), v));
        candidates.push_back({live[r].score + lp, lp, static_cast<int>(v), r});
      }
    }
    const std::size_t take = std::min(beam - finished.size(), candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take),
                      candidates.end(), candidate_before);
    std::vector<Live> next;
    std::vector<std::size_t> parents;
    tokens.clear();
    for (std::size_t c = 0; c < take; ++c) {
      const auto& cand = candidates[c];
      std::vector<int> ids = live[cand.parent].ids;
      ids.push_back(cand.token);
      if (cand.token == Vocabulary::kEos) {
        finished.push_back(finish(std::move(ids), cand.score));
      } else {
        next.push_back({std::move(ids), cand.score});
        parents.push_back(cand.parent);
        tokens.push_back(cand.token);
      }
    }
    live = std::move(next);
    if (!live.empty()) decoder.reorder(parents);
  }
  // Hypotheses still open at max_len are returned truncated.
  if (finished.size() < beam) {
    for (auto& h : live) {
      if (finished.size() == beam) break;
      finished.push_back(finish(std::move(h.ids), h.score));
    }
  }
  std::stable_sort(finished.begin(), finished.end(), hypothesis_before);
  return finished;
}

template std::vector<int> greedy_decode<float>(const Model<float>&, std::span<const int>, int);
template std::vector<int> greedy_decode<double>(const Model<double>&, std::span<const int>, int);
template std::vector<std::vector<int>> greedy_decode_batch<float>(
    const Model<float>&, std::span<const std::vector<int>>, int);
template std::vector<std::vector<int>> greedy_decode_batch<double>(
    const Model<double>&, std::span<const std::vector<int>>, int);
template std::vector<Hypothesis> beam_search<float>(const Model<float>&, std::span<const int>, int,
                                                    int);
template std::vector<Hypothesis> beam_search<double>(const Model<double>&, std::span<const int>,
                                                     int, int);

// ---------------------------------------------------------------------------

void ModelBundle::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  save_checkpoint(dir / "model.ckpt", model);
  source_vocab.save(dir / "source.vocab");
  target_vocab.save(dir / "target.vocab");
  const json meta{{"format", 1},
                  {"source_language", std::string(language_name(source_language))},
                  {"target_language", std::string(language_name(target_language))},
                  {"number_seed", number_seed}};
  std::ofstream f(dir / "bundle.json");
  if (!f) throw CheckpointError("cannot write " + (dir / "bundle.json").string());
  f << meta.dump(2) << '\n';
}

ModelBundle ModelBundle::load(const std::filesystem::path& dir) {
  std::ifstream f(dir / "bundle.json");
  if (!f) throw CheckpointError("no bundle.json in " + dir.string());
  ModelBundle b;
  try {
    const json meta = json::parse(f);
    if (meta.at("format").get<int>() != 1) throw CheckpointError("unsupported bundle format");
    b.source_language = parse_language(meta.at("source_language").get<std::string>());
    b.target_language = parse_language(meta.at("target_language").get<std::string>());
    b.number_seed = meta.value("number_seed", std::uint64_t{0});
  } catch (const json::exception& e) {
    throw CheckpointError("malformed bundle.json: " + std::string(e.what()));
  }
  b.source_vocab = Vocabulary::load(dir / "source.vocab");
  b.target_vocab = Vocabulary::load(dir / "target.vocab");
  b.model = load_checkpoint(dir / "model.ckpt");
  if (b.model.config.source_vocab_size != b.source_vocab.size() ||
      b.model.config.target_vocab_size != b.target_vocab.size()) {
    throw CheckpointError("vocabulary sizes do not match the model in " + dir.string());
  }
  return b;
}

Translation translate(std::string_view text, Language source_language, const ModelBundle& bundle,
                      int beam_size, int max_len) {
  if (source_language != bundle.source_language) {
    throw InputError("bundle translates from " + std::string(language_name(bundle.source_language)));
  }
  const TokenStream tokens = tokenize(text, source_language);
  const Substitution sub =
      substitute_numbers(tokens, formula_seed(bundle.number_seed, text), OverflowPolicy::SplitDigits);
  const std::vector<int> ids = encode(sub.stream, bundle.source_vocab, true);
  if (static_cast<int>(ids.size()) > bundle.model.config.max_positions) {
    throw LengthError("source has " + std::to_string(ids.size()) + " tokens, limit is " +
                      std::to_string(bundle.model.config.max_positions));
  }
  const int limit = max_len > 0 ? max_len : default_max_len(bundle.model.config, ids.size());
  const auto hyps = beam_search(bundle.model, ids, beam_size, limit);
  Translation out;
  out.tagged = decode_ids(hyps.front().ids, bundle.target_vocab, bundle.target_language);
  out.stream = restore_numbers(out.tagged, sub.map);
  out.text = detokenize(out.stream);
  out.numbers = sub.map;
  out.score = hyps.front().normalized_score;
  return out;
}

std::string translation_record_json(std::string_view id, std::string_view source,
                                    const Translation& translation) {
  json numbers = json::object();
  for (const auto& [tag, literal] : translation.numbers.assignments) {
    numbers[number_tag_text(tag)] = literal;
  }
  return json{{"id", id},
              {"source", source},
              {"prediction", translation.text},
              {"score", translation.score},
              {"number_map", numbers}}
      .dump();
}

}  // namespace formt
