#pragma once

// Shared transformer encoder and decoder (post-norm residual sublayers,
// sinusoidal positions, one embedding table for both sides).

#include <string>
#include <vector>

#include "vhm/attention.hpp"
#include "vhm/parameters.hpp"
#include "vhm/random.hpp"
#include "vhm/tensor.hpp"

namespace vhm {

using TokenId = int;
using TokenSeq = std::vector<TokenId>;

struct BackboneConfig {
  Index n_encoder_layers = 2;
  Index n_decoder_layers = 2;
  Index d_model = 64;
  Index n_heads = 4;
  Index d_ff = 128;
  Index max_len = 64;
  double dropout = 0.1;

  void validate() const;
};

// Sequences laid end to end; each occupies one segment of rows.
struct PackedBatch {
  std::vector<TokenId> ids;
  std::vector<Index> positions;
  std::vector<Segment> segments;

  static PackedBatch pack(const std::vector<TokenSeq>& sequences);
  Index rows() const { return Index(ids.size()); }
};

struct EncoderStates {
  Tensor states;                  // [total_len x d_model]
  std::vector<Segment> segments;  // one per encoded sequence

  // Row mask of a single-sequence encoding (all true).
  std::vector<bool> mask() const { return std::vector<bool>(states.rows(), true); }
};

inline Tensor dropout_or_identity(const Tensor& x, double rate, Rng* rng) {
  return dropout(x, rate, rng);
}

inline Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  return add_bias(matmul(x, weight), bias);
}

struct LayerNorm {
  Tensor gain;
  Tensor bias;
  LayerNorm() = default;
  LayerNorm(ParameterStore& store, const std::string& prefix, Index width);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, bias); }
};

struct MultiHeadAttention {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterStore& store, const std::string& prefix,
                     Index d_model, Rng& rng);
  Tensor operator()(const Tensor& queries, const Tensor& memory,
                    const AttentionLayout& layout, Index heads, double dropout,
                    Rng* rng) const;
};

struct FeedForward {
  Tensor w1, b1, w2, b2;
  FeedForward() = default;
  FeedForward(ParameterStore& store, const std::string& prefix, Index d_model,
              Index d_ff, Rng& rng);
  Tensor operator()(const Tensor& x, double dropout, Rng* rng) const;
};

class Transformer {
 public:
  Transformer(const BackboneConfig& config, Index vocab_size,
              ParameterStore& store, Rng& init_rng);

  const BackboneConfig& config() const { return config_; }
  Index vocab_size() const { return embedding_.rows(); }

  // Encodes every sequence in one packed pass. A null rng disables dropout.
  EncoderStates encode(const std::vector<TokenSeq>& sequences,
                       Rng* rng = nullptr) const;
  EncoderStates encode(const TokenSeq& tokens) const;

  // Decoder top-layer states for each prefix; prefix i cross-attends to
  // encoder segment memory_of[i]. Self-attention is causal.
  Tensor decode(const std::vector<TokenSeq>& prefixes, const EncoderStates& enc,
                const std::vector<Index>& memory_of, Rng* rng = nullptr) const;
  Tensor decode(const TokenSeq& prefix, const EncoderStates& enc) const;

 private:
  struct EncoderLayer {
    MultiHeadAttention self_attention;
    LayerNorm norm1;
    FeedForward ffn;
    LayerNorm norm2;
  };
  struct DecoderLayer {
    MultiHeadAttention self_attention;
    LayerNorm norm1;
    MultiHeadAttention cross_attention;
    LayerNorm norm2;
    FeedForward ffn;
    LayerNorm norm3;
  };

  Tensor embed(const PackedBatch& batch, Rng* rng) const;
  void check_tokens(const std::vector<TokenSeq>& sequences, const char* what) const;

  BackboneConfig config_;
  Tensor embedding_;
  MatrixXd positional_;
  std::vector<EncoderLayer> encoder_;
  std::vector<DecoderLayer> decoder_;
};

// [max_len x d_model] sinusoidal table: sin on even columns, cos on odd.
MatrixXd sinusoidal_positions(Index max_len, Index d_model);

}  // namespace vhm
