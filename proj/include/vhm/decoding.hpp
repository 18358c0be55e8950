#pragma once

// Greedy and beam-search decoding over any next-token scorer.

#include <vector>

#include "vhm/tensor.hpp"
#include "vhm/transformer.hpp"

namespace vhm {

struct DecodeConfig {
  Index beam_size = 4;
  double length_penalty = 0.6;
  // Maximum number of generated tokens, the end-of-sequence token included.
  Index max_len = 32;

  void validate() const;
};

// Produces next-token log-probabilities for a batch of partial outputs.
// Prefixes hold generated tokens only (no start symbol).
class StepScorer {
 public:
  virtual ~StepScorer() = default;
  // [prefixes x vocab] row-wise log-probabilities.
  virtual MatrixXd log_probs(const std::vector<TokenSeq>& prefixes) = 0;
  virtual Index vocab_size() const = 0;
  virtual TokenId eos() const = 0;
};

// GNMT length normalizer ((5 + length) / 6)^alpha.
double length_normalizer(Index length, double alpha);

struct Hypothesis {
  TokenSeq tokens;  // generated tokens; finished ones end with eos
  double log_prob = 0.0;
  double score = 0.0;  // log_prob / length_normalizer(|tokens|)
  bool finished = false;
};

// Argmax at every step, lower token id on ties; stops at eos or max_len.
Hypothesis greedy_decode(StepScorer& scorer, Index max_len);

// Beam search. Each step ranks all expansions by cumulative log-probability
// (ties: lower token id, then earlier parent); eos expansions ranked within
// the top beam_size become finished, the first beam_size others stay live.
// Stops at max_len, or once beam_size hypotheses finished and no live one
// can still outscore the best of them. Returns the best
// finished hypothesis by normalized score (ties: shorter, then
// lexicographically smaller), else the best unfinished one.
Hypothesis beam_search(StepScorer& scorer, const DecodeConfig& config);

}  // namespace vhm
