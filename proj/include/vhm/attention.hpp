#pragma once

// Scaled dot-product attention over packed sequences.
//
// Queries and keys live in packed [N x (heads * d_k)] matrices; each block
// pairs one query segment with the key segment it may attend to. The op
// splits heads by column ranges, so Q/K/V must already be projected.

#include <Eigen/Core>

#include <cmath>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "vhm/ops.hpp"
#include "vhm/tensor.hpp"

namespace vhm {

struct AttentionBlock {
  Segment query;
  Segment key;
};

struct AttentionLayout {
  std::vector<AttentionBlock> blocks;
  // Query i of a block sees keys j <= i of the same block.
  bool causal = false;
  // Optional explicit [q x k] mask for single-block layouts; true = attendable.
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> mask;
};

namespace detail {

template <typename Scalar>
struct AttentionCache {
  // Per (block, head): softmax weights and dropout multipliers.
  std::vector<Matrix<Scalar>> weights;
  std::vector<Matrix<Scalar>> keep;
};

}  // namespace detail

template <typename Scalar, typename Rng = std::mt19937_64>
BasicTensor<Scalar> multi_head_attention(const BasicTensor<Scalar>& q,
                                         const BasicTensor<Scalar>& k,
                                         const BasicTensor<Scalar>& v,
                                         const AttentionLayout& layout,
                                         Index heads, Scalar dropout_rate = 0,
                                         Rng* rng = nullptr) {
  if (heads <= 0 || q.cols() % heads != 0 || v.cols() % heads != 0 ||
      q.cols() != k.cols()) {
    throw ShapeError("attention: Q " + shape_string(q.shape()) + ", K " +
                     shape_string(k.shape()) + ", V " + shape_string(v.shape()) +
                     " incompatible with " + std::to_string(heads) + " heads");
  }
  if (k.rows() != v.rows()) {
    throw ShapeError("attention: K " + shape_string(k.shape()) + " and V " +
                     shape_string(v.shape()) + " differ in length");
  }
  const bool explicit_mask = layout.mask.size() != 0;
  if (explicit_mask && layout.blocks.size() != 1) {
    throw ContractError("attention: explicit masks need a single block");
  }
  const Index dk = q.cols() / heads;
  const Index dv = v.cols() / heads;
  const Scalar scale_factor = Scalar(1) / std::sqrt(Scalar(dk));
  const bool use_dropout = rng != nullptr && dropout_rate > Scalar(0);
  std::bernoulli_distribution keep_dist(1.0 - double(dropout_rate));
  const Scalar keep_scale = use_dropout ? Scalar(1) / (Scalar(1) - dropout_rate)
                                        : Scalar(1);

  auto cache = std::make_shared<detail::AttentionCache<Scalar>>();
  Matrix<Scalar> out = Matrix<Scalar>::Zero(q.rows(), v.cols());
  const auto& qv = q.value();
  const auto& kv = k.value();
  const auto& vv = v.value();

  for (const AttentionBlock& block : layout.blocks) {
    const Segment qs = block.query;
    const Segment ks = block.key;
    if (qs.length <= 0 || ks.length <= 0 || qs.offset + qs.length > q.rows() ||
        ks.offset + ks.length > k.rows()) {
      throw ShapeError("attention: block outside packed inputs");
    }
    if (explicit_mask &&
        (layout.mask.rows() != qs.length || layout.mask.cols() != ks.length)) {
      throw ShapeError("attention: mask shape does not match the block");
    }
    for (Index h = 0; h < heads; ++h) {
      Matrix<Scalar> scores =
          qv.block(qs.offset, h * dk, qs.length, dk) *
          kv.block(ks.offset, h * dk, ks.length, dk).transpose() * scale_factor;
      for (Index i = 0; i < qs.length; ++i) {
        Scalar mx = -std::numeric_limits<Scalar>::infinity();
        for (Index j = 0; j < ks.length; ++j) {
          const bool allowed = (!layout.causal || j <= i) &&
                               (!explicit_mask || layout.mask(i, j));
          if (!allowed) {
            scores(i, j) = -std::numeric_limits<Scalar>::infinity();
          } else {
            mx = std::max(mx, scores(i, j));
          }
        }
        if (mx == -std::numeric_limits<Scalar>::infinity()) {
          throw ContractError("attention: query row " + std::to_string(i) +
                              " has no attendable keys");
        }
        Scalar z = 0;
        for (Index j = 0; j < ks.length; ++j) {
          const Scalar e = std::exp(scores(i, j) - mx);
          scores(i, j) = e;
          z += e;
        }
        scores.row(i) /= z;
      }
      Matrix<Scalar> keep;
      if (use_dropout) {
        keep.resize(qs.length, ks.length);
        for (Index x = 0; x < keep.size(); ++x) {
          keep.data()[x] = keep_dist(*rng) ? keep_scale : Scalar(0);
        }
        out.block(qs.offset, h * dv, qs.length, dv).noalias() +=
            scores.cwiseProduct(keep) * vv.block(ks.offset, h * dv, ks.length, dv);
      } else {
        out.block(qs.offset, h * dv, qs.length, dv).noalias() +=
            scores * vv.block(ks.offset, h * dv, ks.length, dv);
      }
      cache->weights.push_back(std::move(scores));
      cache->keep.push_back(std::move(keep));
    }
  }

  auto pq = q.node_ptr();
  auto pk = k.node_ptr();
  auto pv = v.node_ptr();
  std::vector<AttentionBlock> blocks = layout.blocks;
  return BasicTensor<Scalar>::make_op(
      Shape{q.rows(), v.cols()}, std::move(out), {q, k, v},
      [pq, pk, pv, blocks, cache, heads, dk, dv,
       scale_factor](Node<Scalar>& self) {
        const Matrix<Scalar>& dout = self.grad;
        Matrix<Scalar> dq = Matrix<Scalar>::Zero(pq->value.rows(), pq->value.cols());
        Matrix<Scalar> dk_m = Matrix<Scalar>::Zero(pk->value.rows(), pk->value.cols());
        Matrix<Scalar> dv_m = Matrix<Scalar>::Zero(pv->value.rows(), pv->value.cols());
        std::size_t slot = 0;
        for (const AttentionBlock& block : blocks) {
          const Segment qs = block.query;
          const Segment ks = block.key;
          for (Index h = 0; h < heads; ++h, ++slot) {
            const Matrix<Scalar>& w = cache->weights[slot];
            const Matrix<Scalar>& keep = cache->keep[slot];
            const auto g = dout.block(qs.offset, h * dv, qs.length, dv);
            const auto vb = pv->value.block(ks.offset, h * dv, ks.length, dv);
            Matrix<Scalar> dw = g * vb.transpose();
            if (keep.size() != 0) {
              dv_m.block(ks.offset, h * dv, ks.length, dv).noalias() +=
                  w.cwiseProduct(keep).transpose() * g;
              dw = dw.cwiseProduct(keep);
            } else {
              dv_m.block(ks.offset, h * dv, ks.length, dv).noalias() +=
                  w.transpose() * g;
            }
            Matrix<Scalar> row_dot = dw.cwiseProduct(w).rowwise().sum();
            Matrix<Scalar> ds =
                w.cwiseProduct(dw - row_dot.replicate(1, w.cols())) * scale_factor;
            dq.block(qs.offset, h * dk, qs.length, dk).noalias() +=
                ds * pk->value.block(ks.offset, h * dk, ks.length, dk);
            dk_m.block(ks.offset, h * dk, ks.length, dk).noalias() +=
                ds.transpose() * pq->value.block(qs.offset, h * dk, qs.length, dk);
          }
        }
        pq->accumulate(dq);
        pk->accumulate(dk_m);
        pv->accumulate(dv_m);
      });
}

// Single-sequence, single-head attention: softmax(Q K^T / sqrt(d_k) + mask) V.
// `mask` is [q x k] with true marking attendable keys; empty means all.
template <typename Scalar>
BasicTensor<Scalar> attention(
    const BasicTensor<Scalar>& q, const BasicTensor<Scalar>& k,
    const BasicTensor<Scalar>& v,
    const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>& mask = {}) {
  AttentionLayout layout;
  layout.blocks.push_back({{0, q.rows()}, {0, k.rows()}});
  layout.mask = mask;
  return multi_head_attention<Scalar>(q, k, v, layout, 1);
}

}  // namespace vhm
