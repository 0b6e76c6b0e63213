#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "formt/model.hpp"
#include "formt/preprocess.hpp"
#include "formt/tokenizer.hpp"

namespace formt {

struct Hypothesis {
  std::vector<int> ids;  // ends in EOS unless truncated at max_len
  double score = 0.0;    // sum of token log-probabilities
  double normalized_score = 0.0;  // score / ids.size()
};

inline constexpr int kDefaultBeamSize = 5;

// min(max_positions, 2 * source_length + 50)
int default_max_len(const ModelConfig& config, std::size_t source_length);

// Argmax decoding; ties go to the smallest id. Returns at most max_len ids.
template <typename Scalar>
std::vector<int> greedy_decode(const Model<Scalar>& model, std::span<const int> source_ids,
                               int max_len);

// Greedy decoding of many sources at once; max_len <= 0 selects default_max_len.
template <typename Scalar>
std::vector<std::vector<int>> greedy_decode_batch(const Model<Scalar>& model,
                                                  std::span<const std::vector<int>> sources,
                                                  int max_len = 0);

// Returns up to beam_size hypotheses, best first: normalized score descending,
// then smaller final id, then shorter length.
template <typename Scalar>
std::vector<Hypothesis> beam_search(const Model<Scalar>& model, std::span<const int> source_ids,
                                    int beam_size, int max_len);

// Trained model with its dictionaries and language pair.
struct ModelBundle {
  Model<float> model;
  Vocabulary source_vocab;
  Vocabulary target_vocab;
  Language source_language = Language::LatexPresentation;
  Language target_language = Language::MathematicaInput;
  std::uint64_t number_seed = 0;  // tag draws for substitution at translation time

  // Directory with model.ckpt, source.vocab, target.vocab and bundle.json.
  void save(const std::filesystem::path& dir) const;
  static ModelBundle load(const std::filesystem::path& dir);
};

struct Translation {
  std::string text;       // detokenized, numbers restored
  TokenStream stream;     // restored token stream
  TokenStream tagged;     // model output before restoration
  NumberMap numbers;
  double score = 0.0;     // normalized score of the chosen hypothesis
};

// tokenize -> substitute numbers -> encode -> beam search -> decode -> restore
// -> detokenize. A source longer than max_positions raises LengthError.
Translation translate(std::string_view text, Language source_language, const ModelBundle& bundle,
                      int beam_size = kDefaultBeamSize, int max_len = 0);

// {"id", "source", "prediction", "score", "number_map"}
std::string translation_record_json(std::string_view id, std::string_view source,
                                    const Translation& translation);

}  // namespace formt
