#include "formt/model.hpp"

#include <algorithm>
#include <cmath>

#include "formt/error.hpp"
#include "formt/preprocess.hpp"
#include "formt/rng.hpp"
#include "json.hpp"

namespace formt {

using json = nlohmann::json;

void ModelConfig::validate() const {
  if (state_size < 1) throw ConfigError("state_size must be positive");
  if (num_layers < 1) throw ConfigError("num_layers must be positive");
  if (kernel_size < 1 || kernel_size % 2 == 0) {
    throw ConfigError("kernel_size must be a positive odd integer, got " +
                      std::to_string(kernel_size));
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) {
    throw ConfigError("label_smoothing must lie in [0, 1)");
  }
  if (max_positions < 1) throw ConfigError("max_positions must be at least 1");
  if (source_vocab_size < 1 || target_vocab_size < 2) {
    throw ConfigError("vocabulary sizes must be positive");
  }
}

std::string ModelConfig::canonical_json() const {
  // nlohmann::json objects keep keys sorted, so dump() is canonical.
  return json{{"state_size", state_size},
              {"num_layers", num_layers},
              {"kernel_size", kernel_size},
              {"dropout", dropout},
              {"label_smoothing", label_smoothing},
              {"max_positions", max_positions},
              {"source_vocab_size", source_vocab_size},
              {"target_vocab_size", target_vocab_size},
              {"seed", seed}}
      .dump();
}

ModelConfig ModelConfig::from_json(std::string_view text) {
  ModelConfig c;
  try {
    const json j = json::parse(text);
    c.state_size = j.at("state_size").get<int>();
    c.num_layers = j.at("num_layers").get<int>();
    c.kernel_size = j.at("kernel_size").get<int>();
    c.dropout = j.at("dropout").get<double>();
    c.label_smoothing = j.at("label_smoothing").get<double>();
    c.max_positions = j.at("max_positions").get<int>();
    c.source_vocab_size = j.at("source_vocab_size").get<int>();
    c.target_vocab_size = j.at("target_vocab_size").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed model config: ") + e.what());
  }
  return c;
}

std::int64_t parameter_count(const ModelConfig& c) {
  const std::int64_t d = c.state_size;
  const std::int64_t k = c.kernel_size;
  const std::int64_t layers = c.num_layers;
  const std::int64_t conv = k * d * 2 * d + 2 * d;
  const std::int64_t attention = 2 * (d * d + d);
  return c.source_vocab_size * d + c.target_vocab_size * d + 2 * c.position_rows() * d +
         layers * conv + layers * (conv + attention) + d * c.target_vocab_size +
         c.target_vocab_size;
}

// ---------------------------------------------------------------------------
// Parameters

template <typename S>
Parameters<S> Parameters<S>::zeros(const ModelConfig& c) {
  const int d = c.state_size;
  const int k = c.kernel_size;
  Parameters p;
  p.source_embedding = Matrix<S>::Zero(c.source_vocab_size, d);
  p.target_embedding = Matrix<S>::Zero(c.target_vocab_size, d);
  p.source_positions = Matrix<S>::Zero(c.position_rows(), d);
  p.target_positions = Matrix<S>::Zero(c.position_rows(), d);
  p.encoder.resize(static_cast<std::size_t>(c.num_layers));
  for (auto& layer : p.encoder) {
    layer.conv_weight = Matrix<S>::Zero(k * d, 2 * d);
    layer.conv_bias = Matrix<S>::Zero(1, 2 * d);
  }
  p.decoder.resize(static_cast<std::size_t>(c.num_layers));
  for (auto& layer : p.decoder) {
    layer.conv_weight = Matrix<S>::Zero(k * d, 2 * d);
    layer.conv_bias = Matrix<S>::Zero(1, 2 * d);
    layer.query_weight = Matrix<S>::Zero(d, d);
    layer.query_bias = Matrix<S>::Zero(1, d);
    layer.output_weight = Matrix<S>::Zero(d, d);
    layer.output_bias = Matrix<S>::Zero(1, d);
  }
  p.output_weight = Matrix<S>::Zero(d, c.target_vocab_size);
  p.output_bias = Matrix<S>::Zero(1, c.target_vocab_size);
  return p;
}

namespace {

template <typename P, typename Fn>
void visit(P& p, Fn&& fn) {
  fn(std::string("source_embedding"), p.source_embedding);
  fn(std::string("target_embedding"), p.target_embedding);
  fn(std::string("source_positions"), p.source_positions);
  fn(std::string("target_positions"), p.target_positions);
  for (std::size_t l = 0; l < p.encoder.size(); ++l) {
    const std::string prefix = "encoder." + std::to_string(l) + ".";
    fn(prefix + "conv_weight", p.encoder[l].conv_weight);
    fn(prefix + "conv_bias", p.encoder[l].conv_bias);
  }
  for (std::size_t l = 0; l < p.decoder.size(); ++l) {
    const std::string prefix = "decoder." + std::to_string(l) + ".";
    fn(prefix + "conv_weight", p.decoder[l].conv_weight);
    fn(prefix + "conv_bias", p.decoder[l].conv_bias);
    fn(prefix + "query_weight", p.decoder[l].query_weight);
    fn(prefix + "query_bias", p.decoder[l].query_bias);
    fn(prefix + "output_weight", p.decoder[l].output_weight);
    fn(prefix + "output_bias", p.decoder[l].output_bias);
  }
  fn(std::string("output_weight"), p.output_weight);
  fn(std::string("output_bias"), p.output_bias);
}

}  // namespace

template <typename S>
void Parameters<S>::for_each(const std::function<void(const std::string&, Matrix<S>&)>& fn) {
  visit(*this, fn);
}

template <typename S>
void Parameters<S>::for_each(
    const std::function<void(const std::string&, const Matrix<S>&)>& fn) const {
  visit(*this, fn);
}

template <typename S>
std::int64_t Parameters<S>::size() const {
  std::int64_t n = 0;
  for_each([&](const std::string&, const Matrix<S>& m) { n += m.size(); });
  return n;
}

template <typename S>
void Parameters<S>::set_zero() {
  for_each([](const std::string&, Matrix<S>& m) { m.setZero(); });
}

template <typename S>
double Parameters<S>::squared_norm() const {
  double total = 0.0;
  for_each([&](const std::string&, const Matrix<S>& m) {
    total += static_cast<double>(m.squaredNorm());
  });
  return total;
}

template <typename S>
bool Parameters<S>::all_finite() const {
  bool ok = true;
  for_each([&](const std::string&, const Matrix<S>& m) { ok = ok && m.allFinite(); });
  return ok;
}

template <typename S>
void Parameters<S>::scale(S factor) {
  for_each([&](const std::string&, Matrix<S>& m) { m *= factor; });
}

template <typename S>
void Parameters<S>::add_scaled(const Parameters& other, S factor) {
  std::vector<const Matrix<S>*> rhs;
  other.for_each([&](const std::string&, const Matrix<S>& m) { rhs.push_back(&m); });
  std::size_t i = 0;
  for_each([&](const std::string&, Matrix<S>& m) { m.noalias() += factor * *rhs[i++]; });
}

template <typename S>
template <typename Other>
Model<Other> Model<S>::cast() const {
  Model<Other> out;
  out.config = config;
  out.params = Parameters<Other>::zeros(config);
  std::vector<const Matrix<S>*> src;
  params.for_each([&](const std::string&, const Matrix<S>& m) { src.push_back(&m); });
  std::size_t i = 0;
  out.params.for_each(
      [&](const std::string&, Matrix<Other>& m) { m = src[i++]->template cast<Other>(); });
  return out;
}

template <typename S>
Model<S> init_model(const ModelConfig& config) {
  config.validate();
  Model<S> model;
  model.config = config;
  model.params = Parameters<S>::zeros(config);
  Rng rng(config.seed);
  const double d = config.state_size;
  const double keep = 1.0 - config.dropout;
  auto fill = [&](Matrix<S>& m, double stddev) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(stddev * rng.normal());
  };
  // Embeddings see a one-hot input, so they get a fixed small scale.
  constexpr double kEmbeddingStd = 0.1;
  auto& p = model.params;
  fill(p.source_embedding, kEmbeddingStd);
  fill(p.target_embedding, kEmbeddingStd);
  fill(p.source_positions, kEmbeddingStd);
  fill(p.target_positions, kEmbeddingStd);
  // A GLU halves its input variance, hence the factor 4 on the conv fan-in scale.
  const double conv_std = std::sqrt(4.0 * keep / (config.kernel_size * d));
  for (auto& layer : p.encoder) fill(layer.conv_weight, conv_std);
  for (auto& layer : p.decoder) {
    fill(layer.conv_weight, conv_std);
    fill(layer.query_weight, std::sqrt(1.0 / d));
    fill(layer.output_weight, std::sqrt(1.0 / d));
  }
  fill(p.output_weight, std::sqrt(keep / d));
  return model;
}

// ---------------------------------------------------------------------------
// Batched forward/backward over ragged sequences (no padding).

namespace {

template <typename S>
void check_ids(std::span<const int> ids, int vocab, const char* side) {
  for (int id : ids) {
    if (id < 0 || id >= vocab) {
      throw EncodingError(std::string(side) + " id " + std::to_string(id) +
                          " outside vocabulary of size " + std::to_string(vocab));
    }
  }
}

template <typename S>
S sqrt_half() {
  return static_cast<S>(std::sqrt(0.5));
}

template <typename S>
void sigmoid_inplace(Matrix<S>& m) {
  m = (S(1) + (-m.array()).exp()).inverse().matrix();
}

struct Segment {
  Eigen::Index offset = 0;
  Eigen::Index length = 0;
};

template <typename S>
struct ConvCache {
  Matrix<S> mask;   // dropout multipliers, empty when inactive
  Matrix<S> input;  // dropped-out block input
  Matrix<S> linear; // GLU linear half
  Matrix<S> gate;   // sigmoid of the GLU gate half
};

template <typename S>
struct AttentionCache {
  Matrix<S> conv_out;  // GLU output h
  Matrix<S> query;
  std::vector<Matrix<S>> probs;  // per sequence, target_len x source_len
  Matrix<S> context;             // scaled attention context
};

template <typename S>
class BatchPass {
 public:
  BatchPass(const Model<S>& model, bool training, std::uint64_t dropout_seed)
      : m_(model), cfg_(model.config), training_(training && model.config.dropout > 0.0),
        rng_(dropout_seed) {}

  // Decoder inputs are explicit; the caller shifts targets.
  void run(std::span<const std::span<const int>> sources,
           std::span<const std::span<const int>> decoder_inputs) {
    build_segments(sources, decoder_inputs);
    encode(sources);
    decode(decoder_inputs);
    logits_.noalias() = dec_out_ * m_.params.output_weight;
    logits_.rowwise() += m_.params.output_bias.row(0);
  }

  const Matrix<S>& logits() const { return logits_; }
  const std::vector<Segment>& target_segments() const { return tgt_seg_; }
  Matrix<S> attention(std::size_t layer, std::size_t seq) const {
    return attn_[layer].probs[seq];
  }

  // Accumulates gradients of sum(loss) given d loss / d logits.
  void backward(const Matrix<S>& d_logits, std::span<const std::span<const int>> sources,
                std::span<const std::span<const int>> decoder_inputs, Parameters<S>& g) {
    const auto& p = m_.params;
    const S s = sqrt_half<S>();
    g.output_weight.noalias() += dec_out_.transpose() * d_logits;
    g.output_bias += d_logits.colwise().sum();
    Matrix<S> dy = d_logits * p.output_weight.transpose();

    Matrix<S> d_target_embed = Matrix<S>::Zero(dec_in_.rows(), dec_in_.cols());
    Matrix<S> d_keys = Matrix<S>::Zero(enc_out_.rows(), enc_out_.cols());
    Matrix<S> d_values = Matrix<S>::Zero(enc_out_.rows(), enc_out_.cols());

    for (std::size_t li = p.decoder.size(); li-- > 0;) {
      const auto& layer = p.decoder[li];
      auto& gl = g.decoder[li];
      const auto& cc = dec_conv_[li];
      const auto& ac = attn_[li];
      // y_next = s*(h2 + y); h2 = s*(h + o)
      Matrix<S> d_residual = s * dy;
      Matrix<S> d_h2 = s * dy;
      Matrix<S> d_h = s * d_h2;
      Matrix<S> d_o = s * d_h2;
      gl.output_weight.noalias() += ac.context.transpose() * d_o;
      gl.output_bias += d_o.colwise().sum();
      Matrix<S> d_context = d_o * layer.output_weight.transpose();
      Matrix<S> d_query(ac.query.rows(), ac.query.cols());
      for (std::size_t b = 0; b < tgt_seg_.size(); ++b) {
        const auto ts = tgt_seg_[b];
        const auto ss = src_seg_[b];
        const S scale = std::sqrt(static_cast<S>(ss.length));
        const Matrix<S>& probs = ac.probs[b];
        Matrix<S> dctx = scale * d_context.middleRows(ts.offset, ts.length);
        Matrix<S> d_probs = dctx * values_.middleRows(ss.offset, ss.length).transpose();
        d_values.middleRows(ss.offset, ss.length).noalias() += probs.transpose() * dctx;
        Matrix<S> d_scores = probs.cwiseProduct(d_probs);
        const auto row_dot = d_scores.rowwise().sum();
        d_scores -= probs.cwiseProduct(row_dot.replicate(1, probs.cols()));
        d_query.middleRows(ts.offset, ts.length).noalias() =
            d_scores * enc_out_.middleRows(ss.offset, ss.length);
        d_keys.middleRows(ss.offset, ss.length).noalias() +=
            d_scores.transpose() * ac.query.middleRows(ts.offset, ts.length);
      }
      // query = s*(h W + b + target_embed)
      Matrix<S> d_q = s * d_query;
      d_h.noalias() += d_q * layer.query_weight.transpose();
      gl.query_weight.noalias() += ac.conv_out.transpose() * d_q;
      gl.query_bias += d_q.colwise().sum();
      d_target_embed += d_q;
      Matrix<S> d_input = conv_backward(cc, d_h, layer.conv_weight, gl.conv_weight, gl.conv_bias,
                                        tgt_seg_, true);
      dy = d_residual + d_input;
    }
    dy += d_target_embed;
    if (dec_embed_mask_.size()) dy = dy.cwiseProduct(dec_embed_mask_);
    scatter_embeddings(dy, decoder_inputs, tgt_seg_, g.target_embedding, g.target_positions);

    // values = s*(keys + embed)
    Matrix<S> dx = d_keys + s * d_values;
    Matrix<S> d_embed = s * d_values;
    for (std::size_t li = p.encoder.size(); li-- > 0;) {
      const auto& layer = p.encoder[li];
      auto& gl = g.encoder[li];
      Matrix<S> d_h = s * dx;
      Matrix<S> d_input = conv_backward(enc_conv_[li], d_h, layer.conv_weight, gl.conv_weight,
                                        gl.conv_bias, src_seg_, false);
      dx = s * dx + d_input;
    }
    dx += d_embed;
    if (enc_embed_mask_.size()) dx = dx.cwiseProduct(enc_embed_mask_);
    scatter_embeddings(dx, sources, src_seg_, g.source_embedding, g.source_positions);
  }

 private:
  void build_segments(std::span<const std::span<const int>> sources,
                      std::span<const std::span<const int>> decoder_inputs) {
    Eigen::Index so = 0, to = 0;
    for (std::size_t b = 0; b < sources.size(); ++b) {
      const auto sl = static_cast<Eigen::Index>(sources[b].size());
      const auto tl = static_cast<Eigen::Index>(decoder_inputs[b].size());
      if (sl == 0) throw InputError("empty source sequence");
      if (tl == 0) throw InputError("empty target sequence");
      if (sl > cfg_.position_rows() || tl > cfg_.position_rows()) {
        throw LengthError("sequence length exceeds max_positions (" +
                          std::to_string(cfg_.max_positions) + ")");
      }
      check_ids<S>(sources[b], cfg_.source_vocab_size, "source");
      check_ids<S>(decoder_inputs[b], cfg_.target_vocab_size, "target");
      src_seg_.push_back({so, sl});
      tgt_seg_.push_back({to, tl});
      so += sl;
      to += tl;
    }
    src_rows_ = so;
    tgt_rows_ = to;
  }

  Matrix<S> dropout_mask(Eigen::Index rows, Eigen::Index cols) {
    if (!training_) return {};
    const double p = cfg_.dropout;
    const S keep = static_cast<S>(1.0 / (1.0 - p));
    Matrix<S> mask(rows, cols);
    for (Eigen::Index i = 0; i < mask.size(); ++i) {
      mask.data()[i] = rng_.uniform() < p ? S(0) : keep;
    }
    return mask;
  }

  Matrix<S> embed(std::span<const std::span<const int>> ids, const std::vector<Segment>& segs,
                  const Matrix<S>& table, const Matrix<S>& positions, Eigen::Index rows) {
    Matrix<S> x(rows, cfg_.state_size);
    for (std::size_t b = 0; b < segs.size(); ++b) {
      for (Eigen::Index t = 0; t < segs[b].length; ++t) {
        x.row(segs[b].offset + t) = table.row(ids[b][static_cast<std::size_t>(t)]) + positions.row(t);
      }
    }
    return x;
  }

  void scatter_embeddings(const Matrix<S>& grad, std::span<const std::span<const int>> ids,
                          const std::vector<Segment>& segs, Matrix<S>& table,
                          Matrix<S>& positions) {
    for (std::size_t b = 0; b < segs.size(); ++b) {
      for (Eigen::Index t = 0; t < segs[b].length; ++t) {
        const auto row = grad.row(segs[b].offset + t);
        table.row(ids[b][static_cast<std::size_t>(t)]) += row;
        positions.row(t) += row;
      }
    }
  }

  // Unfolds kernel windows; causal windows end at the current position, centered
  // windows are symmetric. Windows never cross sequence boundaries.
  Matrix<S> im2col(const Matrix<S>& u, const std::vector<Segment>& segs, bool causal) const {
    const int k = cfg_.kernel_size;
    const int d = cfg_.state_size;
    const int lead = causal ? k - 1 : (k - 1) / 2;
    Matrix<S> col = Matrix<S>::Zero(u.rows(), static_cast<Eigen::Index>(k) * d);
    for (const auto& seg : segs) {
      for (Eigen::Index t = 0; t < seg.length; ++t) {
        for (int q = 0; q < k; ++q) {
          const Eigen::Index src = t + q - lead;
          if (src < 0 || src >= seg.length) continue;
          col.row(seg.offset + t).segment(static_cast<Eigen::Index>(q) * d, d) =
              u.row(seg.offset + src);
        }
      }
    }
    return col;
  }

  Matrix<S> col2im(const Matrix<S>& dcol, const std::vector<Segment>& segs, bool causal) const {
    const int k = cfg_.kernel_size;
    const int d = cfg_.state_size;
    const int lead = causal ? k - 1 : (k - 1) / 2;
    Matrix<S> du = Matrix<S>::Zero(dcol.rows(), d);
    for (const auto& seg : segs) {
      for (Eigen::Index t = 0; t < seg.length; ++t) {
        for (int q = 0; q < k; ++q) {
          const Eigen::Index src = t + q - lead;
          if (src < 0 || src >= seg.length) continue;
          du.row(seg.offset + src) +=
              dcol.row(seg.offset + t).segment(static_cast<Eigen::Index>(q) * d, d);
        }
      }
    }
    return du;
  }

  // GLU convolution block: returns h = A * sigmoid(B) for [A B] = conv(dropout(x)).
  Matrix<S> conv_forward(const Matrix<S>& x, const Matrix<S>& weight, const Matrix<S>& bias,
                         const std::vector<Segment>& segs, bool causal, ConvCache<S>& cache) {
    const int d = cfg_.state_size;
    cache.mask = dropout_mask(x.rows(), x.cols());
    cache.input = cache.mask.size() ? Matrix<S>(x.cwiseProduct(cache.mask)) : x;
    Matrix<S> c = im2col(cache.input, segs, causal) * weight;
    c.rowwise() += bias.row(0);
    cache.linear = c.leftCols(d);
    cache.gate = c.rightCols(d);
    sigmoid_inplace(cache.gate);
    return cache.linear.cwiseProduct(cache.gate);
  }

  // Returns d loss / d x (through the dropout mask) and accumulates conv gradients.
  Matrix<S> conv_backward(const ConvCache<S>& cache, const Matrix<S>& d_h,
                          const Matrix<S>& weight, Matrix<S>& g_weight, Matrix<S>& g_bias,
                          const std::vector<Segment>& segs, bool causal) const {
    const int d = cfg_.state_size;
    Matrix<S> dc(d_h.rows(), 2 * d);
    dc.leftCols(d) = d_h.cwiseProduct(cache.gate);
    dc.rightCols(d) = (d_h.array() * cache.linear.array() * cache.gate.array() *
                       (S(1) - cache.gate.array()))
                          .matrix();
    g_weight.noalias() += im2col(cache.input, segs, causal).transpose() * dc;
    g_bias += dc.colwise().sum();
    Matrix<S> du = col2im(dc * weight.transpose(), segs, causal);
    if (cache.mask.size()) du = du.cwiseProduct(cache.mask);
    return du;
  }

  void encode(std::span<const std::span<const int>> sources) {
    const auto& p = m_.params;
    const S s = sqrt_half<S>();
    Matrix<S> x = embed(sources, src_seg_, p.source_embedding, p.source_positions, src_rows_);
    enc_embed_mask_ = dropout_mask(x.rows(), x.cols());
    if (enc_embed_mask_.size()) x = x.cwiseProduct(enc_embed_mask_);
    const Matrix<S> embedded = x;
    enc_conv_.resize(p.encoder.size());
    for (std::size_t l = 0; l < p.encoder.size(); ++l) {
      Matrix<S> h = conv_forward(x, p.encoder[l].conv_weight, p.encoder[l].conv_bias, src_seg_,
                                 false, enc_conv_[l]);
      x = s * (h + x);
    }
    enc_out_ = std::move(x);
    values_ = s * (enc_out_ + embedded);
  }

  void decode(std::span<const std::span<const int>> inputs) {
    const auto& p = m_.params;
    const S s = sqrt_half<S>();
    Matrix<S> y = embed(inputs, tgt_seg_, p.target_embedding, p.target_positions, tgt_rows_);
    dec_embed_mask_ = dropout_mask(y.rows(), y.cols());
    if (dec_embed_mask_.size()) y = y.cwiseProduct(dec_embed_mask_);
    dec_in_ = y;
    dec_conv_.resize(p.decoder.size());
    attn_.resize(p.decoder.size());
    for (std::size_t l = 0; l < p.decoder.size(); ++l) {
      const auto& layer = p.decoder[l];
      auto& ac = attn_[l];
      ac.conv_out = conv_forward(y, layer.conv_weight, layer.conv_bias, tgt_seg_, true, dec_conv_[l]);
      ac.query.noalias() = ac.conv_out * layer.query_weight;
      ac.query.rowwise() += layer.query_bias.row(0);
      ac.query = s * (ac.query + dec_in_);
      ac.context.resize(tgt_rows_, cfg_.state_size);
      ac.probs.resize(tgt_seg_.size());
      for (std::size_t b = 0; b < tgt_seg_.size(); ++b) {
        const auto ts = tgt_seg_[b];
        const auto ss = src_seg_[b];
        Matrix<S> scores = ac.query.middleRows(ts.offset, ts.length) *
                           enc_out_.middleRows(ss.offset, ss.length).transpose();
        const auto row_max = scores.rowwise().maxCoeff();
        scores = (scores - row_max.replicate(1, scores.cols())).array().exp().matrix();
        const auto row_sum = scores.rowwise().sum();
        scores = scores.cwiseQuotient(row_sum.replicate(1, scores.cols()));
        const S scale = std::sqrt(static_cast<S>(ss.length));
        ac.context.middleRows(ts.offset, ts.length).noalias() =
            scale * (scores * values_.middleRows(ss.offset, ss.length));
        ac.probs[b] = std::move(scores);
      }
      Matrix<S> o = ac.context * layer.output_weight;
      o.rowwise() += layer.output_bias.row(0);
      y = s * (s * (ac.conv_out + o) + y);
    }
    dec_out_ = std::move(y);
  }

  const Model<S>& m_;
  const ModelConfig& cfg_;
  bool training_;
  Rng rng_;
  std::vector<Segment> src_seg_, tgt_seg_;
  Eigen::Index src_rows_ = 0, tgt_rows_ = 0;
  Matrix<S> enc_embed_mask_, dec_embed_mask_;
  std::vector<ConvCache<S>> enc_conv_, dec_conv_;
  std::vector<AttentionCache<S>> attn_;
  Matrix<S> enc_out_, values_, dec_in_, dec_out_, logits_;
};

// Row-wise log-softmax.
template <typename S>
Matrix<S> log_softmax(const Matrix<S>& logits) {
  Matrix<S> out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const S mx = logits.row(r).maxCoeff();
    const S lse = mx + std::log((logits.row(r).array() - mx).exp().sum());
    out.row(r) = logits.row(r).array() - lse;
  }
  return out;
}

}  // namespace

template <typename S>
ForwardOutput<S> forward(const Model<S>& model, std::span<const int> source_ids,
                         std::span<const int> target_prefix_ids, bool training,
                         std::uint64_t dropout_seed) {
  BatchPass<S> pass(model, training, dropout_seed);
  const std::span<const int> src[] = {source_ids};
  const std::span<const int> dec[] = {target_prefix_ids};
  pass.run(src, dec);
  ForwardOutput<S> out;
  out.logits = pass.logits();
  for (std::size_t l = 0; l < model.params.decoder.size(); ++l) {
    out.attention.push_back(pass.attention(l, 0));
  }
  return out;
}

template <typename S>
LossResult<S> loss_and_gradients(const Model<S>& model, std::span<const SequencePair> batch,
                                 const LossOptions& options) {
  const int vocab = model.config.target_vocab_size;
  const double eps = options.label_smoothing;
  LossResult<S> result;
  if (options.compute_gradients) result.gradients = Parameters<S>::zeros(model.config);

  // Decoder inputs: BOS + target[0..n-2].
  std::vector<std::vector<int>> shifted(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& tgt = batch[b].target;
    if (tgt.empty()) throw InputError("empty target sequence");
    check_ids<S>(tgt, vocab, "target");
    shifted[b].reserve(tgt.size());
    shifted[b].push_back(Vocabulary::kBos);
    shifted[b].insert(shifted[b].end(), tgt.begin(), tgt.end() - 1);
  }

  double loss_sum = 0.0;
  double nll_sum = 0.0;
  std::size_t begin = 0;
  std::uint64_t chunk_index = 0;
  while (begin < batch.size()) {
    std::size_t end = begin;
    std::size_t tokens = 0;
    do {
      tokens += batch[end].source.size() + batch[end].target.size();
      ++end;
    } while (end < batch.size() &&
             tokens + batch[end].source.size() + batch[end].target.size() <= options.chunk_tokens);

    std::vector<std::span<const int>> src, dec;
    for (std::size_t b = begin; b < end; ++b) {
      src.push_back(batch[b].source);
      dec.push_back(shifted[b]);
    }
    BatchPass<S> pass(model, options.training, mix_seed(options.dropout_seed, chunk_index++));
    pass.run(src, dec);
    const Matrix<S> logp = log_softmax(pass.logits());
    Matrix<S> d_logits;
    if (options.compute_gradients) d_logits = Matrix<S>::Zero(logp.rows(), logp.cols());
    const auto other_mass = static_cast<S>(vocab > 1 ? eps / (vocab - 1) : 0.0);
    const auto ref_mass = static_cast<S>(1.0 - eps);
    const auto& segs = pass.target_segments();
    for (std::size_t b = begin; b < end; ++b) {
      const auto seg = segs[b - begin];
      for (Eigen::Index t = 0; t < seg.length; ++t) {
        const int ref = batch[b].target[static_cast<std::size_t>(t)];
        if (ref == Vocabulary::kPad) continue;
        const Eigen::Index row = seg.offset + t;
        const auto lp = logp.row(row);
        const double ref_lp = static_cast<double>(lp(ref));
        const double total_lp = static_cast<double>(lp.sum());
        loss_sum += -(static_cast<double>(ref_mass) * ref_lp +
                      static_cast<double>(other_mass) * (total_lp - ref_lp));
        nll_sum -= ref_lp;
        Eigen::Index best;
        lp.maxCoeff(&best);
        result.correct += best == ref;
        ++result.tokens;
        if (options.compute_gradients) {
          d_logits.row(row) = lp.array().exp() - other_mass;
          d_logits(row, ref) -= ref_mass - other_mass;
        }
      }
    }
    if (options.compute_gradients) pass.backward(d_logits, src, dec, result.gradients);
    begin = end;
  }
  if (result.tokens == 0) throw DegenerateBatchError("batch has no non-PAD target positions");
  const double n = static_cast<double>(result.tokens);
  result.loss = loss_sum / n;
  result.nll = nll_sum / n;
  if (options.compute_gradients) result.gradients.scale(static_cast<S>(1.0 / n));
  return result;
}

template <typename S>
LossResult<S> loss_and_gradients(const Model<S>& model, std::span<const int> source_ids,
                                 std::span<const int> target_ids, double label_smoothing) {
  const SequencePair pair{source_ids, target_ids};
  LossOptions options;
  options.label_smoothing = label_smoothing;
  return loss_and_gradients(model, std::span<const SequencePair>(&pair, 1), options);
}

// ---------------------------------------------------------------------------
// Incremental decoding

template <typename S>
EncoderOutput<S> encode_source(const Model<S>& model, std::span<const int> source_ids) {
  const auto& cfg = model.config;
  if (source_ids.empty()) throw InputError("empty source sequence");
  if (static_cast<int>(source_ids.size()) > cfg.position_rows()) {
    throw LengthError("source length exceeds max_positions (" + std::to_string(cfg.max_positions) +
                      ")");
  }
  check_ids<S>(source_ids, cfg.source_vocab_size, "source");
  const auto& p = model.params;
  const S s = sqrt_half<S>();
  const int d = cfg.state_size;
  const int k = cfg.kernel_size;
  const int lead = (k - 1) / 2;
  const auto len = static_cast<Eigen::Index>(source_ids.size());
  Matrix<S> x(len, d);
  for (Eigen::Index t = 0; t < len; ++t) {
    x.row(t) = p.source_embedding.row(source_ids[static_cast<std::size_t>(t)]) +
               p.source_positions.row(t);
  }
  const Matrix<S> embedded = x;
  for (const auto& layer : p.encoder) {
    Matrix<S> col = Matrix<S>::Zero(len, static_cast<Eigen::Index>(k) * d);
    for (Eigen::Index t = 0; t < len; ++t) {
      for (int q = 0; q < k; ++q) {
        const Eigen::Index src = t + q - lead;
        if (src >= 0 && src < len) col.row(t).segment(static_cast<Eigen::Index>(q) * d, d) = x.row(src);
      }
    }
    Matrix<S> c = col * layer.conv_weight;
    c.rowwise() += layer.conv_bias.row(0);
    Matrix<S> gate = c.rightCols(d);
    sigmoid_inplace(gate);
    x = s * (c.leftCols(d).cwiseProduct(gate) + x);
  }
  EncoderOutput<S> out;
  out.keys = x;
  out.values = s * (x + embedded);
  return out;
}

template <typename S>
IncrementalDecoder<S>::IncrementalDecoder(const Model<S>& model,
                                          std::vector<const EncoderOutput<S>*> row_sources)
    : model_(&model), sources_(std::move(row_sources)) {
  const auto& cfg = model.config;
  const auto width = static_cast<Eigen::Index>(cfg.kernel_size - 1) * cfg.state_size;
  history_.assign(model.params.decoder.size(),
                  Matrix<S>::Zero(static_cast<Eigen::Index>(sources_.size()), width));
}

template <typename S>
Matrix<S> IncrementalDecoder<S>::step(std::span<const int> tokens) {
  const auto& cfg = model_->config;
  const auto& p = model_->params;
  if (tokens.size() != sources_.size()) throw InputError("one token per decoder row expected");
  if (position_ >= cfg.position_rows()) {
    throw LengthError("decoder position exceeds max_positions (" +
                      std::to_string(cfg.max_positions) + ")");
  }
  check_ids<S>(tokens, cfg.target_vocab_size, "target");
  const S s = sqrt_half<S>();
  const int d = cfg.state_size;
  const Eigen::Index width = static_cast<Eigen::Index>(cfg.kernel_size - 1) * d;
  const auto rows = static_cast<Eigen::Index>(sources_.size());

  Matrix<S> y(rows, d);
  for (Eigen::Index r = 0; r < rows; ++r) {
    y.row(r) = p.target_embedding.row(tokens[static_cast<std::size_t>(r)]) +
               p.target_positions.row(position_);
  }
  const Matrix<S> embedded = y;
  Matrix<S> col(rows, width + d);
  Matrix<S> context(rows, d);
  for (std::size_t l = 0; l < p.decoder.size(); ++l) {
    const auto& layer = p.decoder[l];
    auto& hist = history_[l];
    col.leftCols(width) = hist;
    col.rightCols(d) = y;
    Matrix<S> c = col * layer.conv_weight;
    c.rowwise() += layer.conv_bias.row(0);
    Matrix<S> gate = c.rightCols(d);
    sigmoid_inplace(gate);
    const Matrix<S> h = c.leftCols(d).cwiseProduct(gate);
    Matrix<S> query = h * layer.query_weight;
    query.rowwise() += layer.query_bias.row(0);
    query = s * (query + embedded);
    for (Eigen::Index r = 0; r < rows; ++r) {
      const auto* src = sources_[static_cast<std::size_t>(r)];
      Eigen::Matrix<S, 1, Eigen::Dynamic> scores = query.row(r) * src->keys.transpose();
      scores = (scores.array() - scores.maxCoeff()).exp().matrix();
      scores /= scores.sum();
      const S scale = std::sqrt(static_cast<S>(src->keys.rows()));
      context.row(r).noalias() = scale * (scores * src->values);
    }
    Matrix<S> o = context * layer.output_weight;
    o.rowwise() += layer.output_bias.row(0);
    if (width > 0) {
      if (width > d) hist.leftCols(width - d) = hist.rightCols(width - d).eval();
      hist.rightCols(d) = y;
    }
    y = s * (s * (h + o) + y);
  }
  Matrix<S> logits = y * p.output_weight;
  logits.rowwise() += p.output_bias.row(0);
  ++position_;
  return log_softmax(logits);
}

template <typename S>
void IncrementalDecoder<S>::reorder(std::span<const std::size_t> parents) {
  std::vector<const EncoderOutput<S>*> sources;
  sources.reserve(parents.size());
  for (std::size_t parent : parents) sources.push_back(sources_.at(parent));
  for (auto& hist : history_) {
    Matrix<S> next(static_cast<Eigen::Index>(parents.size()), hist.cols());
    for (std::size_t i = 0; i < parents.size(); ++i) {
      next.row(static_cast<Eigen::Index>(i)) = hist.row(static_cast<Eigen::Index>(parents[i]));
    }
    hist = std::move(next);
  }
  sources_ = std::move(sources);
}

#define FORMT_INSTANTIATE(S)                                                                     \
  template struct Parameters<S>;                                                                 \
  template Model<S> init_model<S>(const ModelConfig&);                                           \
  template ForwardOutput<S> forward<S>(const Model<S>&, std::span<const int>,                    \
                                       std::span<const int>, bool, std::uint64_t);               \
  template LossResult<S> loss_and_gradients<S>(const Model<S>&, std::span<const SequencePair>,   \
                                               const LossOptions&);                              \
  template LossResult<S> loss_and_gradients<S>(const Model<S>&, std::span<const int>,            \
                                               std::span<const int>, double);                    \
  template EncoderOutput<S> encode_source<S>(const Model<S>&, std::span<const int>);             \
  template class IncrementalDecoder<S>;

FORMT_INSTANTIATE(float)
FORMT_INSTANTIATE(double)
#undef FORMT_INSTANTIATE

template Model<double> Model<float>::cast<double>() const;
template Model<float> Model<double>::cast<float>() const;
template Model<float> Model<float>::cast<float>() const;
template Model<double> Model<double>::cast<double>() const;

}  // namespace formt
