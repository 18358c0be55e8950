#pragma once

// ROUGE-N / ROUGE-L F1 over token ids, and exact-match scores against an
// oracle.

#include <cstdint>
#include <vector>

#include "vhm/transformer.hpp"

namespace vhm {

struct RougeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Harmonic mean, 0 when both inputs are 0.
RougeScore make_rouge(double precision, double recall);

// Clipped n-gram overlap.
RougeScore rouge_n(const TokenSeq& candidate, const TokenSeq& reference, int n);

// Longest-common-subsequence based P/R/F1.
RougeScore rouge_l(const TokenSeq& candidate, const TokenSeq& reference);
Index lcs_length(const TokenSeq& a, const TokenSeq& b);

// Fraction of outputs equal to their reference. Empty input is an error.
double exact_match_rate(const std::vector<TokenSeq>& outputs,
                        const std::vector<TokenSeq>& references);

// Per pair: matches at aligned positions below min(|o|, |r|), divided by
// max(|o|, |r|) (1 when both are empty); averaged over pairs.
double token_accuracy(const std::vector<TokenSeq>& outputs,
                      const std::vector<TokenSeq>& references);

struct Interval {
  double mean = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

// Percentile bootstrap of the mean (95% by default).
Interval bootstrap_interval(const std::vector<double>& values, int resamples,
                            std::uint64_t seed, double confidence = 0.95);

}  // namespace vhm
