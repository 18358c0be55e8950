#include "vhm/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace vhm {

void DecodeConfig::validate() const {
  if (beam_size < 1) {
    throw ConfigError("decode.beam_size must be >= 1, got " +
                      std::to_string(beam_size));
  }
  if (!(length_penalty >= 0.0)) {
    throw ConfigError("decode.length_penalty must be non-negative");
  }
  if (max_len < 1) throw ConfigError("decode.max_len must be >= 1");
}

double length_normalizer(Index length, double alpha) {
  if (alpha == 0.0) return 1.0;
  return std::pow((5.0 + double(length)) / 6.0, alpha);
}

namespace {

bool better_final(const Hypothesis& a, const Hypothesis& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.tokens.size() != b.tokens.size()) return a.tokens.size() < b.tokens.size();
  return a.tokens < b.tokens;
}

void check_scores(const MatrixXd& scores, Index rows, Index vocab) {
  if (scores.rows() != rows || scores.cols() != vocab) {
    throw ContractError("scorer returned " + std::to_string(scores.rows()) + "x" +
                        std::to_string(scores.cols()) + " log-probabilities");
  }
}

// Log-probabilities only fall, so a live hypothesis scores at most
// log_prob / lp(max_len).
bool can_improve(const std::vector<Hypothesis>& live,
                 const std::vector<Hypothesis>& finished, double alpha, Index max_len) {
  double best = -INFINITY;
  for (const auto& h : finished) best = std::max(best, h.score);
  const double norm = length_normalizer(max_len, alpha);
  for (const auto& h : live) {
    if (h.log_prob / norm > best) return true;
  }
  return false;
}

}  // namespace

Hypothesis greedy_decode(StepScorer& scorer, Index max_len) {
  if (max_len < 1) throw ConfigError("decode.max_len must be >= 1");
  Hypothesis hyp;
  for (Index step = 0; step < max_len; ++step) {
    const MatrixXd scores = scorer.log_probs({hyp.tokens});
    check_scores(scores, 1, scorer.vocab_size());
    Index best = 0;
    for (Index v = 1; v < scores.cols(); ++v) {
      if (scores(0, v) > scores(0, best)) best = v;
    }
    hyp.tokens.push_back(TokenId(best));
    hyp.log_prob += scores(0, best);
    if (TokenId(best) == scorer.eos()) {
      hyp.finished = true;
      break;
    }
  }
  hyp.score = hyp.log_prob / length_normalizer(Index(hyp.tokens.size()), 0.0);
  return hyp;
}

Hypothesis beam_search(StepScorer& scorer, const DecodeConfig& config) {
  config.validate();
  const Index vocab = scorer.vocab_size();
  const TokenId eos = scorer.eos();
  const double alpha = config.length_penalty;
  const std::size_t width = std::size_t(config.beam_size);

  struct Candidate {
    double log_prob;
    std::size_t parent;
    TokenId token;
  };

  std::vector<Hypothesis> live(1);
  std::vector<Hypothesis> finished;
  for (Index step = 0; step < config.max_len && !live.empty(); ++step) {
    std::vector<TokenSeq> prefixes;
    prefixes.reserve(live.size());
    for (const auto& h : live) prefixes.push_back(h.tokens);
    const MatrixXd scores = scorer.log_probs(prefixes);
    check_scores(scores, Index(live.size()), vocab);

    std::vector<Candidate> cands;
    cands.reserve(live.size() * std::size_t(vocab));
    for (std::size_t p = 0; p < live.size(); ++p) {
      for (Index v = 0; v < vocab; ++v) {
        cands.push_back({live[p].log_prob + scores(Index(p), v), p, TokenId(v)});
      }
    }
    std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
      if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
      if (a.token != b.token) return a.token < b.token;
      return a.parent < b.parent;
    });

    std::vector<Hypothesis> next;
    for (std::size_t rank = 0; rank < cands.size(); ++rank) {
      const Candidate& c = cands[rank];
      if (c.token == eos) {
        if (rank >= width) continue;
        Hypothesis h = live[c.parent];
        h.tokens.push_back(c.token);
        h.log_prob = c.log_prob;
        h.finished = true;
        h.score = h.log_prob / length_normalizer(Index(h.tokens.size()), alpha);
        finished.push_back(std::move(h));
      } else if (next.size() < width) {
        Hypothesis h = live[c.parent];
        h.tokens.push_back(c.token);
        h.log_prob = c.log_prob;
        h.score = h.log_prob / length_normalizer(Index(h.tokens.size()), alpha);
        next.push_back(std::move(h));
      } else if (rank >= width) {
        break;
      }
    }
    live = std::move(next);
    if (finished.size() >= width && !can_improve(live, finished, alpha, config.max_len)) break;
  }

  const auto& pool = finished.empty() ? live : finished;
  if (pool.empty()) return {};
  return *std::min_element(pool.begin(), pool.end(),
                           [](const Hypothesis& a, const Hypothesis& b) {
                             return better_final(a, b);
                           });
}

}  // namespace vhm
