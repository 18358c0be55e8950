#include "vhm/metrics.hpp"

#include <algorithm>
#include <map>
#include <numeric>

#include "vhm/random.hpp"

namespace vhm {

RougeScore make_rouge(double precision, double recall) {
  RougeScore s{precision, recall, 0.0};
  if (precision + recall > 0.0) {
    s.f1 = 2.0 * precision * recall / (precision + recall);
  }
  return s;
}

namespace {

std::map<TokenSeq, Index> ngram_counts(const TokenSeq& seq, int n) {
  std::map<TokenSeq, Index> counts;
  for (std::size_t i = 0; i + std::size_t(n) <= seq.size(); ++i) {
    ++counts[TokenSeq(seq.begin() + long(i), seq.begin() + long(i) + n)];
  }
  return counts;
}

void require_pairs(const std::vector<TokenSeq>& outputs,
                   const std::vector<TokenSeq>& references) {
  if (outputs.empty()) throw DataError("metric over an empty evaluation set");
  if (outputs.size() != references.size()) {
    throw ContractError("metric: " + std::to_string(outputs.size()) +
                        " outputs for " + std::to_string(references.size()) +
                        " references");
  }
}

}  // namespace

RougeScore rouge_n(const TokenSeq& candidate, const TokenSeq& reference, int n) {
  if (n < 1) throw ContractError("rouge_n: n must be >= 1");
  const auto cand = ngram_counts(candidate, n);
  const auto ref = ngram_counts(reference, n);
  Index overlap = 0;
  for (const auto& [gram, count] : cand) {
    auto it = ref.find(gram);
    if (it != ref.end()) overlap += std::min(count, it->second);
  }
  const Index cand_total = std::max<Index>(0, Index(candidate.size()) - n + 1);
  const Index ref_total = std::max<Index>(0, Index(reference.size()) - n + 1);
  const double p = cand_total > 0 ? double(overlap) / double(cand_total) : 0.0;
  const double r = ref_total > 0 ? double(overlap) / double(ref_total) : 0.0;
  return make_rouge(p, r);
}

Index lcs_length(const TokenSeq& a, const TokenSeq& b) {
  std::vector<Index> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

RougeScore rouge_l(const TokenSeq& candidate, const TokenSeq& reference) {
  const double l = double(lcs_length(candidate, reference));
  const double p = candidate.empty() ? 0.0 : l / double(candidate.size());
  const double r = reference.empty() ? 0.0 : l / double(reference.size());
  return make_rouge(p, r);
}

double exact_match_rate(const std::vector<TokenSeq>& outputs,
                        const std::vector<TokenSeq>& references) {
  require_pairs(outputs, references);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    if (outputs[i] == references[i]) ++hits;
  }
  return double(hits) / double(outputs.size());
}

double token_accuracy(const std::vector<TokenSeq>& outputs,
                      const std::vector<TokenSeq>& references) {
  require_pairs(outputs, references);
  double total = 0.0;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    const auto& o = outputs[i];
    const auto& r = references[i];
    const std::size_t longest = std::max(o.size(), r.size());
    if (longest == 0) {
      total += 1.0;
      continue;
    }
    std::size_t matches = 0;
    for (std::size_t t = 0; t < std::min(o.size(), r.size()); ++t) {
      if (o[t] == r[t]) ++matches;
    }
    total += double(matches) / double(longest);
  }
  return total / double(outputs.size());
}

Interval bootstrap_interval(const std::vector<double>& values, int resamples,
                            std::uint64_t seed, double confidence) {
  if (values.empty()) throw DataError("bootstrap over an empty evaluation set");
  if (resamples < 1) throw ContractError("bootstrap needs at least one resample");
  Interval out;
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) / double(values.size());
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, values.size() - 1);
  std::vector<double> means(static_cast<std::size_t>(resamples));
  for (auto& m : means) {
    double s = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) s += values[pick(rng)];
    m = s / double(values.size());
  }
  std::sort(means.begin(), means.end());
  const double tail = (1.0 - confidence) / 2.0;
  auto at = [&](double q) {
    const auto idx = std::size_t(std::clamp(q * double(resamples - 1), 0.0,
                                            double(resamples - 1)));
    return means[idx];
  };
  out.lower = at(tail);
  out.upper = at(1.0 - tail);
  return out;
}

}  // namespace vhm
