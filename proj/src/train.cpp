#include "formt/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "formt/checkpoint.hpp"
#include "formt/decode.hpp"
#include "formt/error.hpp"
#include "formt/metrics.hpp"
#include "json.hpp"

namespace formt {

std::string_view optimizer_name(Optimizer o) {
  return o == Optimizer::Nesterov ? "nesterov" : "sgd";
}

Optimizer parse_optimizer(std::string_view name) {
  if (name == "nesterov") return Optimizer::Nesterov;
  if (name == "sgd") return Optimizer::Sgd;
  throw ConfigError("unknown optimizer '" + std::string(name) + "' (nesterov, sgd)");
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(clip_threshold > 0.0)) throw ConfigError("clip_threshold must be positive");
  if (max_tokens_per_batch < 1) throw ConfigError("max_tokens_per_batch must be positive");
  if (max_epochs < 1) throw ConfigError("max_epochs must be positive");
  if (patience < 1) throw ConfigError("patience must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (chunk_tokens < 1) throw ConfigError("chunk_tokens must be positive");
}

std::vector<Batch> make_batches(std::span<const EncodedPair> pairs, std::size_t max_tokens,
                                std::uint64_t seed) {
  if (max_tokens < 1) throw BatchingError("token budget must be positive");
  std::vector<std::size_t> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return pairs[a].source.size() < pairs[b].source.size();
  });
  std::vector<Batch> batches;
  Batch current;
  for (std::size_t i : order) {
    const std::size_t len = std::max(pairs[i].source.size(), pairs[i].target.size());
    if (len > max_tokens) {
      throw BatchingError("pair '" + pairs[i].id + "' has " + std::to_string(len) +
                          " tokens, over the batch budget of " + std::to_string(max_tokens));
    }
    const std::size_t grown = std::max(current.max_length, len);
    if (!current.indices.empty() && (current.indices.size() + 1) * grown > max_tokens) {
      batches.push_back(std::move(current));
      current = Batch{};
    }
    current.indices.push_back(i);
    current.max_length = std::max(current.max_length, len);
  }
  if (!current.indices.empty()) batches.push_back(std::move(current));
  rng.shuffle(std::span<Batch>(batches));
  return batches;
}

template <typename S>
double global_norm(const Parameters<S>& grads) {
  return std::sqrt(grads.squared_norm());
}

template <typename S>
double clip_gradients(Parameters<S>& grads, double threshold) {
  if (!(threshold > 0.0)) throw ConfigError("clip threshold must be positive");
  if (!grads.all_finite()) throw NumericError("non-finite gradient");
  const double norm = global_norm(grads);
  if (!std::isfinite(norm)) throw NumericError("gradient norm overflow");
  if (norm > threshold) grads.scale(static_cast<S>(threshold / norm));
  return norm;
}

template double global_norm<float>(const Parameters<float>&);
template double global_norm<double>(const Parameters<double>&);
template double clip_gradients<float>(Parameters<float>&, double);
template double clip_gradients<double>(Parameters<double>&, double);

OptimizerState::OptimizerState(const ModelConfig& config, const TrainConfig& train)
    : config_(train), velocity_(Parameters<float>::zeros(config)) {}

void OptimizerState::step(Parameters<float>& params, const Parameters<float>& grads) {
  const auto lr = static_cast<float>(config_.learning_rate);
  const auto mu = static_cast<float>(config_.momentum);
  if (config_.optimizer == Optimizer::Sgd) {
    params.add_scaled(grads, -lr);
    return;
  }
  std::vector<Matrix<float>*> p, v;
  std::vector<const Matrix<float>*> g;
  params.for_each([&](const std::string&, Matrix<float>& m) { p.push_back(&m); });
  velocity_.for_each([&](const std::string&, Matrix<float>& m) { v.push_back(&m); });
  grads.for_each([&](const std::string&, const Matrix<float>& m) { g.push_back(&m); });
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i]->array() += mu * mu * v[i]->array() - (1.0f + mu) * lr * g[i]->array();
    v[i]->array() = mu * v[i]->array() - lr * g[i]->array();
  }
}

EarlyStopping::EarlyStopping(int patience) : patience_(patience) {
  if (patience < 1) throw ConfigError("patience must be positive");
}

bool EarlyStopping::update(int epoch, double em) {
  improved_last_ = em > best_em_;
  if (improved_last_) {
    best_em_ = em;
    best_epoch_ = epoch;
    since_best_ = 0;
  } else {
    ++since_best_;
  }
  return since_best_ >= patience_;
}

std::string epoch_record_json(const EpochRecord& r) {
  return nlohmann::json{{"epoch", r.epoch},
                        {"train_loss", r.train_loss},
                        {"valid_em", r.valid_em},
                        {"valid_perplexity", r.valid_perplexity},
                        {"checkpoint", r.checkpoint},
                        {"steps", r.steps}}
      .dump();
}

ValidationResult validate(const Model<float>& model, std::span<const EncodedPair> valid,
                          const Vocabulary& target_vocab, Language target_language) {
  if (valid.empty()) throw InputError("validation set is empty");
  std::vector<std::vector<int>> sources;
  std::vector<SequencePair> pairs;
  for (const auto& p : valid) {
    sources.push_back(p.source);
    pairs.push_back({p.source, p.target});
  }
  const auto predictions = greedy_decode_batch(model, std::span<const std::vector<int>>(sources));
  std::vector<StreamPair> streams;
  for (std::size_t i = 0; i < valid.size(); ++i) {
    streams.emplace_back(decode_ids(predictions[i], target_vocab, target_language),
                         decode_ids(valid[i].target, target_vocab, target_language));
  }
  LossOptions options;
  options.label_smoothing = 0.0;
  options.compute_gradients = false;
  const auto scored = loss_and_gradients(model, std::span<const SequencePair>(pairs), options);
  ValidationResult out;
  out.em = em_accuracy(streams);
  out.perplexity = std::exp(scored.nll);
  out.token_accuracy = static_cast<double>(scored.correct) / static_cast<double>(scored.tokens);
  return out;
}

TrainResult train(Model<float> model, std::span<const EncodedPair> train_set,
                  std::span<const EncodedPair> valid_set, const Vocabulary& target_vocab,
                  Language target_language, const TrainConfig& config,
                  const TrainOptions& options) {
  config.validate();
  if (train_set.empty()) throw InputError("training set is empty");
  if (valid_set.empty()) throw InputError("validation set is empty");
  auto say = [&](const std::string& line) {
    if (options.log) options.log(line);
  };
  std::ofstream log_file;
  if (options.output_dir) {
    std::filesystem::create_directories(*options.output_dir);
    log_file.open(*options.output_dir / "log.jsonl", std::ios::trunc);
    if (!log_file) throw InputError("cannot write training log in " + options.output_dir->string());
  }

  OptimizerState optimizer(model.config, config);
  EarlyStopping stopper(config.patience);
  TrainResult result;
  result.best = model;
  std::size_t global_step = 0;

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto batches =
        make_batches(train_set, config.max_tokens_per_batch, mix_seed(config.seed, 2 * epoch));
    double loss_sum = 0.0;
    std::size_t token_sum = 0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      std::vector<SequencePair> batch;
      for (std::size_t i : batches[b].indices) batch.push_back({train_set[i].source, train_set[i].target});
      LossOptions lo;
      lo.label_smoothing = model.config.label_smoothing;
      lo.training = true;
      lo.dropout_seed = mix_seed(config.seed, 2 * global_step + 1);
      lo.chunk_tokens = config.chunk_tokens;
      auto step = loss_and_gradients(model, std::span<const SequencePair>(batch), lo);
      try {
        if (!std::isfinite(step.loss)) throw NumericError("non-finite loss");
        clip_gradients(step.gradients, config.clip_threshold);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " at epoch " + std::to_string(epoch) +
                           ", step " + std::to_string(b + 1));
      }
      optimizer.step(model.params, step.gradients);
      loss_sum += step.loss * static_cast<double>(step.tokens);
      token_sum += step.tokens;
      ++global_step;
    }
    const ValidationResult v = validate(model, valid_set, target_vocab, target_language);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(token_sum);
    rec.valid_em = v.em;
    rec.valid_perplexity = v.perplexity;
    rec.steps = batches.size();
    const bool stop = stopper.update(epoch, v.em);
    if (options.output_dir) {
      rec.checkpoint = "epoch_" + std::to_string(epoch) + ".ckpt";
      save_checkpoint(*options.output_dir / rec.checkpoint, model);
      if (stopper.improved_last()) save_checkpoint(*options.output_dir / "best.ckpt", model);
      log_file << epoch_record_json(rec) << '\n' << std::flush;
    }
    if (stopper.improved_last()) {
      result.best = model;
      result.best_epoch = epoch;
    }
    result.records.push_back(rec);
    say("epoch " + std::to_string(epoch) + " loss " + std::to_string(rec.train_loss) +
        " valid_em " + std::to_string(v.em) + " ppl " + std::to_string(v.perplexity));
    if (stop) break;
    if (config.target_em && v.em >= *config.target_em) break;
  }
  return result;
}

}  // namespace formt
