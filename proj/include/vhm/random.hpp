#pragma once

#include <cstdint>
#include <random>

#include "vhm/tensor.hpp"

namespace vhm {

// One generator type for every stochastic path, so a single seed reproduces
// a run bit-for-bit on a given standard library.
using Rng = std::mt19937_64;

// Independent stream derived from a base seed and a fixed stream tag.
inline Rng make_stream(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32),
                    std::uint32_t(stream), std::uint32_t(stream >> 32)};
  return Rng(seq);
}

inline MatrixXd standard_normal(Index rows, Index cols, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  MatrixXd m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

}  // namespace vhm
