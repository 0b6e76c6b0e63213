#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "formt/model.hpp"
#include "formt/preprocess.hpp"

namespace formt {

enum class Optimizer { Nesterov, Sgd };

std::string_view optimizer_name(Optimizer o);
Optimizer parse_optimizer(std::string_view name);

struct TrainConfig {
  double learning_rate = 0.25;
  double clip_threshold = 0.1;
  std::size_t max_tokens_per_batch = 48000;
  int max_epochs = 100;
  int patience = 5;
  double momentum = 0.99;
  std::uint64_t seed = 1;
  Optimizer optimizer = Optimizer::Nesterov;
  // Stop as soon as validation EM reaches this value.
  std::optional<double> target_em;
  // Forward/backward sub-batch size; bounds memory without changing the step.
  std::size_t chunk_tokens = 16384;

  // Throws ConfigError.
  void validate() const;
};

struct Batch {
  std::vector<std::size_t> indices;  // into the input pair list
  std::size_t max_length = 0;        // longest side of any member
  std::size_t padded_tokens() const { return indices.size() * max_length; }
};

// Shuffles by seed, orders by source length, then fills batches greedily so that
// batch size times the longest sequence stays within max_tokens. Batches come out
// in shuffled order. Throws BatchingError when one pair alone exceeds the budget.
std::vector<Batch> make_batches(std::span<const EncodedPair> pairs, std::size_t max_tokens,
                                std::uint64_t seed);

// Global L2 norm over every tensor.
template <typename Scalar>
double global_norm(const Parameters<Scalar>& grads);

// Rescales to norm `threshold` when the global norm exceeds it. Returns the norm
// before clipping. Throws NumericError on non-finite gradients.
template <typename Scalar>
double clip_gradients(Parameters<Scalar>& grads, double threshold);

// Momentum SGD state. Nesterov uses the form
//   p += mu^2 v - (1 + mu) lr g,  v = mu v - lr g.
class OptimizerState {
 public:
  OptimizerState(const ModelConfig& config, const TrainConfig& train);
  void step(Parameters<float>& params, const Parameters<float>& grads);

 private:
  TrainConfig config_;
  Parameters<float> velocity_;
};

// Keeps the epoch with the highest validation EM (earliest on ties) and signals
// a stop after `patience` epochs without improvement. Perplexity plays no part.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience);
  // Records one epoch; returns true when training should stop.
  bool update(int epoch, double em);
  int best_epoch() const { return best_epoch_; }
  double best_em() const { return best_em_; }
  bool improved_last() const { return improved_last_; }

 private:
  int patience_;
  int best_epoch_ = 0;
  double best_em_ = -1.0;
  int since_best_ = 0;
  bool improved_last_ = false;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double valid_em = 0.0;
  double valid_perplexity = 0.0;
  std::string checkpoint;
  std::size_t steps = 0;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

std::string epoch_record_json(const EpochRecord& record);

struct ValidationResult {
  double em = 0.0;
  double perplexity = 0.0;
  double token_accuracy = 0.0;  // teacher-forced argmax agreement
};

// Greedy-decodes every source and compares token streams with the references;
// perplexity is measured teacher-forced against the references.
ValidationResult validate(const Model<float>& model, std::span<const EncodedPair> valid,
                          const Vocabulary& target_vocab, Language target_language);

struct TrainResult {
  Model<float> best;
  int best_epoch = 0;
  std::vector<EpochRecord> records;
};

struct TrainOptions {
  // When set: log.jsonl, epoch_<n>.ckpt and best.ckpt are written here.
  std::optional<std::filesystem::path> output_dir;
  // Progress messages (one line each).
  std::function<void(const std::string&)> log;
};

TrainResult train(Model<float> model, std::span<const EncodedPair> train_set,
                  std::span<const EncodedPair> valid_set, const Vocabulary& target_vocab,
                  Language target_language, const TrainConfig& config,
                  const TrainOptions& options = {});

}  // namespace formt
