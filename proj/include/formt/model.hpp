#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace formt {

struct ModelConfig {
  int state_size = 512;  // also the embedding size
  int num_layers = 11;   // encoder and decoder alike
  int kernel_size = 3;
  double dropout = 0.2;
  double label_smoothing = 0.1;
  int max_positions = 1024;
  int source_vocab_size = 0;
  int target_vocab_size = 0;
  std::uint64_t seed = 1;

  // Learned position rows: max_positions plus room for EOS/BOS.
  int position_rows() const { return max_positions + 2; }

  // Throws ConfigError.
  void validate() const;
  // Keys sorted; used verbatim in checkpoint headers.
  std::string canonical_json() const;
  static ModelConfig from_json(std::string_view text);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Number of scalar parameters a model of this shape holds.
std::int64_t parameter_count(const ModelConfig& config);

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
struct EncoderLayer {
  Matrix<Scalar> conv_weight;  // (kernel * state) x (2 * state)
  Matrix<Scalar> conv_bias;    // 1 x (2 * state)
};

template <typename Scalar>
struct DecoderLayer {
  Matrix<Scalar> conv_weight;
  Matrix<Scalar> conv_bias;
  Matrix<Scalar> query_weight;   // state x state
  Matrix<Scalar> query_bias;     // 1 x state
  Matrix<Scalar> output_weight;  // state x state, attention context back to the state
  Matrix<Scalar> output_bias;
};

// Every tensor of the network. Also used as the gradient container.
template <typename Scalar>
struct Parameters {
  Matrix<Scalar> source_embedding;    // source_vocab x state
  Matrix<Scalar> target_embedding;    // target_vocab x state
  Matrix<Scalar> source_positions;    // position_rows x state
  Matrix<Scalar> target_positions;
  std::vector<EncoderLayer<Scalar>> encoder;
  std::vector<DecoderLayer<Scalar>> decoder;
  Matrix<Scalar> output_weight;       // state x target_vocab
  Matrix<Scalar> output_bias;         // 1 x target_vocab

  // Zero tensors shaped for `config`.
  static Parameters zeros(const ModelConfig& config);

  // Visits tensors in a fixed order with stable names.
  void for_each(const std::function<void(const std::string&, Matrix<Scalar>&)>& fn);
  void for_each(const std::function<void(const std::string&, const Matrix<Scalar>&)>& fn) const;

  std::int64_t size() const;
  void set_zero();
  double squared_norm() const;
  bool all_finite() const;
  void scale(Scalar factor);
  // this += factor * other
  void add_scaled(const Parameters& other, Scalar factor);
};

template <typename Scalar>
struct Model {
  ModelConfig config;
  Parameters<Scalar> params;

  template <typename Other>
  Model<Other> cast() const;
};

// Normal(0, sqrt(gain / fan_in)) weights, zero biases, seeded by config.seed.
template <typename Scalar>
Model<Scalar> init_model(const ModelConfig& config);

template <typename Scalar>
struct ForwardOutput {
  Matrix<Scalar> logits;                      // target_len x target_vocab
  std::vector<Matrix<Scalar>> attention;      // per decoder layer, target_len x source_len
};

// Teacher-forced forward pass for one pair. Row t of the logits depends on
// source_ids and target_prefix_ids[0..t] only.
template <typename Scalar>
ForwardOutput<Scalar> forward(const Model<Scalar>& model, std::span<const int> source_ids,
                              std::span<const int> target_prefix_ids, bool training = false,
                              std::uint64_t dropout_seed = 0);

// A training example: decoder input is BOS followed by target[0..n-2].
struct SequencePair {
  std::span<const int> source;
  std::span<const int> target;
};

template <typename Scalar>
struct LossResult {
  double loss = 0.0;            // mean smoothed NLL per non-PAD target position
  double nll = 0.0;             // mean unsmoothed NLL (natural log)
  std::size_t tokens = 0;       // non-PAD target positions
  std::size_t correct = 0;      // positions whose argmax equals the reference
  Parameters<Scalar> gradients; // d loss / d parameters (empty when not requested)
};

struct LossOptions {
  double label_smoothing = 0.1;
  bool training = false;          // enables dropout
  std::uint64_t dropout_seed = 0;
  bool compute_gradients = true;
  // Sub-batches of at most this many source+target tokens bound peak memory; the
  // result is the same as one pass up to floating-point summation order.
  std::size_t chunk_tokens = 16384;
};

// Label-smoothed cross-entropy over a batch and its exact gradients. Reference
// mass is 1 - eps; eps is spread evenly over the other target ids.
template <typename Scalar>
LossResult<Scalar> loss_and_gradients(const Model<Scalar>& model,
                                      std::span<const SequencePair> batch,
                                      const LossOptions& options);

template <typename Scalar>
LossResult<Scalar> loss_and_gradients(const Model<Scalar>& model, std::span<const int> source_ids,
                                      std::span<const int> target_ids, double label_smoothing);

// Encoder states shared by every decoding step of one source.
template <typename Scalar>
struct EncoderOutput {
  Matrix<Scalar> keys;    // source_len x state
  Matrix<Scalar> values;  // (keys + embeddings) * sqrt(1/2)
};

template <typename Scalar>
EncoderOutput<Scalar> encode_source(const Model<Scalar>& model, std::span<const int> source_ids);

// Step-wise decoder without dropout. Each row is one hypothesis attending to one
// encoder output; rows advance one position per step().
template <typename Scalar>
class IncrementalDecoder {
 public:
  IncrementalDecoder(const Model<Scalar>& model,
                     std::vector<const EncoderOutput<Scalar>*> row_sources);

  std::size_t rows() const { return sources_.size(); }
  int position() const { return position_; }

  // Feeds one token per row at the current position; returns log-probabilities
  // (rows x target_vocab) of the next token.
  Matrix<Scalar> step(std::span<const int> tokens);

  // Keeps only rows listed in `parents` (may repeat), in that order.
  void reorder(std::span<const std::size_t> parents);

 private:
  const Model<Scalar>* model_;
  std::vector<const EncoderOutput<Scalar>*> sources_;
  std::vector<Matrix<Scalar>> history_;  // per layer, rows x ((kernel-1) * state)
  int position_ = 0;
};

}  // namespace formt
