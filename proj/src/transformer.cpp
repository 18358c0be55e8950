#include "vhm/transformer.hpp"

#include <cmath>

namespace vhm {

void BackboneConfig::validate() const {
  if (n_encoder_layers <= 0 || n_decoder_layers <= 0 || d_model <= 0 ||
      n_heads <= 0 || d_ff <= 0 || max_len <= 0) {
    throw ConfigError("backbone dimensions must be positive");
  }
  if (d_model % n_heads != 0) {
    throw ConfigError("model.d_model (" + std::to_string(d_model) +
                      ") must be divisible by model.n_heads (" +
                      std::to_string(n_heads) + ")");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw ConfigError("model.dropout must lie in [0, 1)");
  }
}

PackedBatch PackedBatch::pack(const std::vector<TokenSeq>& sequences) {
  PackedBatch batch;
  for (const auto& seq : sequences) {
    if (seq.empty()) throw EmptySequenceError("cannot pack an empty sequence");
    batch.segments.push_back({batch.rows(), Index(seq.size())});
    for (std::size_t i = 0; i < seq.size(); ++i) {
      batch.ids.push_back(seq[i]);
      batch.positions.push_back(Index(i));
    }
  }
  return batch;
}

MatrixXd sinusoidal_positions(Index max_len, Index d_model) {
  MatrixXd table(max_len, d_model);
  for (Index pos = 0; pos < max_len; ++pos) {
    for (Index i = 0; i < d_model; ++i) {
      const double rate =
          std::pow(10000.0, -double(2 * (i / 2)) / double(d_model));
      table(pos, i) = (i % 2 == 0) ? std::sin(double(pos) * rate)
                                   : std::cos(double(pos) * rate);
    }
  }
  return table;
}

LayerNorm::LayerNorm(ParameterStore& store, const std::string& prefix,
                     Index width)
    : gain(store.ones(prefix + ".gain", width)),
      bias(store.zeros(prefix + ".bias", width)) {}

MultiHeadAttention::MultiHeadAttention(ParameterStore& store,
                                       const std::string& prefix, Index d_model,
                                       Rng& rng)
    : wq(store.xavier(prefix + ".wq", d_model, d_model, rng)),
      bq(store.zeros(prefix + ".bq", d_model)),
      wk(store.xavier(prefix + ".wk", d_model, d_model, rng)),
      bk(store.zeros(prefix + ".bk", d_model)),
      wv(store.xavier(prefix + ".wv", d_model, d_model, rng)),
      bv(store.zeros(prefix + ".bv", d_model)),
      wo(store.xavier(prefix + ".wo", d_model, d_model, rng)),
      bo(store.zeros(prefix + ".bo", d_model)) {}

Tensor MultiHeadAttention::operator()(const Tensor& queries,
                                      const Tensor& memory,
                                      const AttentionLayout& layout, Index heads,
                                      double dropout, Rng* rng) const {
  Tensor q = linear(queries, wq, bq);
  Tensor k = linear(memory, wk, bk);
  Tensor v = linear(memory, wv, bv);
  Tensor mixed = multi_head_attention(q, k, v, layout, heads, dropout, rng);
  return linear(mixed, wo, bo);
}

FeedForward::FeedForward(ParameterStore& store, const std::string& prefix,
                         Index d_model, Index d_ff, Rng& rng)
    : w1(store.xavier(prefix + ".w1", d_model, d_ff, rng)),
      b1(store.zeros(prefix + ".b1", d_ff)),
      w2(store.xavier(prefix + ".w2", d_ff, d_model, rng)),
      b2(store.zeros(prefix + ".b2", d_model)) {}

Tensor FeedForward::operator()(const Tensor& x, double dropout, Rng* rng) const {
  Tensor hidden = dropout_or_identity(relu(linear(x, w1, b1)), dropout, rng);
  return linear(hidden, w2, b2);
}

Transformer::Transformer(const BackboneConfig& config, Index vocab_size,
                         ParameterStore& store, Rng& init_rng)
    : config_(config) {
  config_.validate();
  const Index d = config_.d_model;
  embedding_ = store.xavier("embedding", vocab_size, d, init_rng);
  positional_ = sinusoidal_positions(config_.max_len, d);
  for (Index l = 0; l < config_.n_encoder_layers; ++l) {
    const std::string p = "encoder." + std::to_string(l);
    EncoderLayer layer;
    layer.self_attention = MultiHeadAttention(store, p + ".self_attention", d, init_rng);
    layer.norm1 = LayerNorm(store, p + ".norm1", d);
    layer.ffn = FeedForward(store, p + ".ffn", d, config_.d_ff, init_rng);
    layer.norm2 = LayerNorm(store, p + ".norm2", d);
    encoder_.push_back(std::move(layer));
  }
  for (Index l = 0; l < config_.n_decoder_layers; ++l) {
    const std::string p = "decoder." + std::to_string(l);
    DecoderLayer layer;
    layer.self_attention = MultiHeadAttention(store, p + ".self_attention", d, init_rng);
    layer.norm1 = LayerNorm(store, p + ".norm1", d);
    layer.cross_attention = MultiHeadAttention(store, p + ".cross_attention", d, init_rng);
    layer.norm2 = LayerNorm(store, p + ".norm2", d);
    layer.ffn = FeedForward(store, p + ".ffn", d, config_.d_ff, init_rng);
    layer.norm3 = LayerNorm(store, p + ".norm3", d);
    decoder_.push_back(std::move(layer));
  }
}

void Transformer::check_tokens(const std::vector<TokenSeq>& sequences,
                               const char* what) const {
  if (sequences.empty()) throw EmptySequenceError(std::string(what) + ": no sequences");
  for (const auto& seq : sequences) {
    if (seq.empty()) throw EmptySequenceError(std::string(what) + ": empty sequence");
    if (Index(seq.size()) > config_.max_len) {
      throw DataError(std::string(what) + ": sequence of length " +
                      std::to_string(seq.size()) + " exceeds max_len " +
                      std::to_string(config_.max_len));
    }
    for (TokenId id : seq) {
      if (id < 0 || id >= embedding_.rows()) {
        throw VocabularyError(std::string(what) + ": token id " +
                              std::to_string(id) + " outside vocabulary of size " +
                              std::to_string(embedding_.rows()));
      }
    }
  }
}

Tensor Transformer::embed(const PackedBatch& batch, Rng* rng) const {
  const Index d = config_.d_model;
  MatrixXd pos(batch.rows(), d);
  for (Index r = 0; r < batch.rows(); ++r) {
    pos.row(r) = positional_.row(batch.positions[std::size_t(r)]);
  }
  Tensor tokens = scale(embedding(embedding_, batch.ids), std::sqrt(double(d)));
  Tensor x = add(tokens, Tensor::from_matrix(std::move(pos)));
  return dropout_or_identity(x, config_.dropout, rng);
}

EncoderStates Transformer::encode(const std::vector<TokenSeq>& sequences,
                                  Rng* rng) const {
  check_tokens(sequences, "encode");
  const PackedBatch batch = PackedBatch::pack(sequences);
  AttentionLayout layout;
  for (const Segment& s : batch.segments) layout.blocks.push_back({s, s});

  const double p = config_.dropout;
  Tensor x = embed(batch, rng);
  for (const EncoderLayer& layer : encoder_) {
    Tensor attended = layer.self_attention(x, x, layout, config_.n_heads, p, rng);
    x = layer.norm1(add(x, dropout_or_identity(attended, p, rng)));
    Tensor fed = layer.ffn(x, p, rng);
    x = layer.norm2(add(x, dropout_or_identity(fed, p, rng)));
  }
  return {x, batch.segments};
}

EncoderStates Transformer::encode(const TokenSeq& tokens) const {
  return encode(std::vector<TokenSeq>{tokens}, nullptr);
}

Tensor Transformer::decode(const std::vector<TokenSeq>& prefixes,
                           const EncoderStates& enc,
                           const std::vector<Index>& memory_of, Rng* rng) const {
  check_tokens(prefixes, "decode");
  if (memory_of.size() != prefixes.size()) {
    throw ContractError("decode: one memory index per prefix is required");
  }
  const PackedBatch batch = PackedBatch::pack(prefixes);
  AttentionLayout self_layout;
  self_layout.causal = true;
  AttentionLayout cross_layout;
  for (std::size_t i = 0; i < batch.segments.size(); ++i) {
    const Index m = memory_of[i];
    if (m < 0 || m >= Index(enc.segments.size())) {
      throw ContractError("decode: memory index out of range");
    }
    self_layout.blocks.push_back({batch.segments[i], batch.segments[i]});
    cross_layout.blocks.push_back({batch.segments[i], enc.segments[std::size_t(m)]});
  }

  const double p = config_.dropout;
  Tensor x = embed(batch, rng);
  for (const DecoderLayer& layer : decoder_) {
    Tensor s = layer.self_attention(x, x, self_layout, config_.n_heads, p, rng);
    x = layer.norm1(add(x, dropout_or_identity(s, p, rng)));
    Tensor c = layer.cross_attention(x, enc.states, cross_layout, config_.n_heads, p, rng);
    x = layer.norm2(add(x, dropout_or_identity(c, p, rng)));
    Tensor f = layer.ffn(x, p, rng);
    x = layer.norm3(add(x, dropout_or_identity(f, p, rng)));
  }
  return x;
}

Tensor Transformer::decode(const TokenSeq& prefix, const EncoderStates& enc) const {
  return decode(std::vector<TokenSeq>{prefix}, enc, {0}, nullptr);
}

}  // namespace vhm
