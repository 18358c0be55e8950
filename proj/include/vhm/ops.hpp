#pragma once

// Differentiable free functions over BasicTensor<Scalar>.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "vhm/tensor.hpp"

namespace vhm {

namespace detail {

template <typename Scalar>
void require_same_shape(const char* op, const BasicTensor<Scalar>& a,
                        const BasicTensor<Scalar>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes differ: " +
                     shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

template <typename Scalar>
void require_finite(const char* op, const Matrix<Scalar>& m) {
  if (!m.allFinite()) {
    throw NumericsError(std::string(op) + ": non-finite input");
  }
}

// Numerically safe ln(1 + e^x), strictly positive for every finite x.
template <typename Scalar>
Scalar softplus_scalar(Scalar x) {
  Scalar y = x > Scalar(30) ? x + std::log1p(std::exp(-x))
                            : std::log1p(std::exp(x));
  return std::max(y, std::numeric_limits<Scalar>::min());
}

template <typename Scalar>
Scalar sigmoid_scalar(Scalar x) {
  if (x >= 0) return Scalar(1) / (Scalar(1) + std::exp(-x));
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <typename Scalar>
BasicTensor<Scalar> add(const BasicTensor<Scalar>& a,
                        const BasicTensor<Scalar>& b) {
  detail::require_same_shape("add", a, b);
  auto pa = a.node_ptr();
  auto pb = b.node_ptr();
  return BasicTensor<Scalar>::make_op(
      a.shape(), a.value() + b.value(), {a, b}, [pa, pb](Node<Scalar>& self) {
        pa->accumulate(self.grad);
        pb->accumulate(self.grad);
      });
}

template <typename Scalar>
BasicTensor<Scalar> sub(const BasicTensor<Scalar>& a,
                        const BasicTensor<Scalar>& b) {
  detail::require_same_shape("sub", a, b);
  auto pa = a.node_ptr();
  auto pb = b.node_ptr();
  return BasicTensor<Scalar>::make_op(
      a.shape(), a.value() - b.value(), {a, b}, [pa, pb](Node<Scalar>& self) {
        pa->accumulate(self.grad);
        pb->accumulate(-self.grad);
      });
}

template <typename Scalar>
BasicTensor<Scalar> mul(const BasicTensor<Scalar>& a,
                        const BasicTensor<Scalar>& b) {
  detail::require_same_shape("mul", a, b);
  auto pa = a.node_ptr();
  auto pb = b.node_ptr();
  return BasicTensor<Scalar>::make_op(
      a.shape(), a.value().cwiseProduct(b.value()), {a, b},
      [pa, pb](Node<Scalar>& self) {
        pa->accumulate(self.grad.cwiseProduct(pb->value));
        pb->accumulate(self.grad.cwiseProduct(pa->value));
      });
}

template <typename Scalar>
BasicTensor<Scalar> div(const BasicTensor<Scalar>& a,
                        const BasicTensor<Scalar>& b) {
  detail::require_same_shape("div", a, b);
  auto pa = a.node_ptr();
  auto pb = b.node_ptr();
  return BasicTensor<Scalar>::make_op(
      a.shape(), a.value().cwiseQuotient(b.value()), {a, b},
      [pa, pb](Node<Scalar>& self) {
        pa->accumulate(self.grad.cwiseQuotient(pb->value));
        pb->accumulate(
            -self.grad.cwiseProduct(self.value).cwiseQuotient(pb->value));
      });
}

template <typename Scalar>
BasicTensor<Scalar> scale(const BasicTensor<Scalar>& a, Scalar factor) {
  auto pa = a.node_ptr();
  return BasicTensor<Scalar>::make_op(
      a.shape(), a.value() * factor, {a},
      [pa, factor](Node<Scalar>& self) { pa->accumulate(self.grad * factor); });
}

template <typename Scalar>
BasicTensor<Scalar> add_scalar(const BasicTensor<Scalar>& a, Scalar c) {
  auto pa = a.node_ptr();
  return BasicTensor<Scalar>::make_op(
      a.shape(), (a.value().array() + c).matrix(), {a},
      [pa](Node<Scalar>& self) { pa->accumulate(self.grad); });
}

template <typename Scalar>
BasicTensor<Scalar> square(const BasicTensor<Scalar>& a) {
  auto pa = a.node_ptr();
  return BasicTensor<Scalar>::make_op(
      a.shape(), a.value().array().square().matrix(), {a},
      [pa](Node<Scalar>& self) {
        pa->accumulate(Scalar(2) * self.grad.cwiseProduct(pa->value));
      });
}

template <typename Scalar>
BasicTensor<Scalar> tanh(const BasicTensor<Scalar>& a) {
  auto pa = a.node_ptr();
  return BasicTensor<Scalar>::make_op(
      a.shape(), a.value().array().tanh().matrix(), {a},
      [pa](Node<Scalar>& self) {
        pa->accumulate((self.grad.array() *
                        (Scalar(1) - self.value.array().square()))
                           .matrix());
      });
}

template <typename Scalar>
BasicTensor<Scalar> relu(const BasicTensor<Scalar>& a) {
  auto pa = a.node_ptr();
  return BasicTensor<Scalar>::make_op(
      a.shape(), a.value().cwiseMax(Scalar(0)), {a}, [pa](Node<Scalar>& self) {
        pa->accumulate(
            (pa->value.array() > Scalar(0)).select(self.grad.array(), Scalar(0))
                .matrix());
      });
}

template <typename Scalar>
BasicTensor<Scalar> exp(const BasicTensor<Scalar>& a) {
  auto pa = a.node_ptr();
  return BasicTensor<Scalar>::make_op(
      a.shape(), a.value().array().exp().matrix(), {a},
      [pa](Node<Scalar>& self) {
        pa->accumulate(self.grad.cwiseProduct(self.value));
      });
}

// Natural log; the domain is strictly positive input.
template <typename Scalar>
BasicTensor<Scalar> log(const BasicTensor<Scalar>& a) {
  if ((a.value().array() <= Scalar(0)).any()) {
    throw NumericsError("log: input must be strictly positive");
  }
  auto pa = a.node_ptr();
  return BasicTensor<Scalar>::make_op(
      a.shape(), a.value().array().log().matrix(), {a},
      [pa](Node<Scalar>& self) {
        pa->accumulate(self.grad.cwiseQuotient(pa->value));
      });
}

template <typename Scalar>
BasicTensor<Scalar> softplus(const BasicTensor<Scalar>& a) {
  auto pa = a.node_ptr();
  Matrix<Scalar> out =
      a.value().unaryExpr([](Scalar x) { return detail::softplus_scalar(x); });
  return BasicTensor<Scalar>::make_op(
      a.shape(), std::move(out), {a}, [pa](Node<Scalar>& self) {
        pa->accumulate(self.grad.cwiseProduct(pa->value.unaryExpr(
            [](Scalar x) { return detail::sigmoid_scalar(x); })));
      });
}

// max(a, floor); gradient passes only where the input is above the floor.
template <typename Scalar>
BasicTensor<Scalar> clamp_min(const BasicTensor<Scalar>& a, Scalar floor) {
  auto pa = a.node_ptr();
  return BasicTensor<Scalar>::make_op(
      a.shape(), a.value().cwiseMax(floor), {a},
      [pa, floor](Node<Scalar>& self) {
        pa->accumulate(
            (pa->value.array() > floor).select(self.grad.array(), Scalar(0))
                .matrix());
      });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename Scalar>
BasicTensor<Scalar> sum(const BasicTensor<Scalar>& a) {
  auto pa = a.node_ptr();
  Matrix<Scalar> out(1, 1);
  out(0, 0) = a.value().sum();
  return BasicTensor<Scalar>::make_op(
      Shape{}, std::move(out), {a}, [pa](Node<Scalar>& self) {
        pa->accumulate(Matrix<Scalar>::Constant(
            pa->value.rows(), pa->value.cols(), self.grad(0, 0)));
      });
}

template <typename Scalar>
BasicTensor<Scalar> mean(const BasicTensor<Scalar>& a) {
  return scale(sum(a), Scalar(1) / Scalar(a.numel()));
}

// ---------------------------------------------------------------------------
// Linear algebra and layout

template <typename Scalar>
BasicTensor<Scalar> matmul(const BasicTensor<Scalar>& a,
                           const BasicTensor<Scalar>& b) {
  if (a.rank() > 2 || b.rank() != 2 || a.rank() == 0 || a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ: " +
                     shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  Shape shape = a.rank() == 1 ? Shape{b.cols()} : Shape{a.rows(), b.cols()};
  auto pa = a.node_ptr();
  auto pb = b.node_ptr();
  Matrix<Scalar> out = a.value() * b.value();
  return BasicTensor<Scalar>::make_op(
      std::move(shape), std::move(out), {a, b}, [pa, pb](Node<Scalar>& self) {
        if (pa->requires_grad) pa->accumulate(self.grad * pb->value.transpose());
        if (pb->requires_grad) pb->accumulate(pa->value.transpose() * self.grad);
      });
}

// x[..., n] + bias[n], broadcast over rows.
template <typename Scalar>
BasicTensor<Scalar> add_bias(const BasicTensor<Scalar>& x,
                             const BasicTensor<Scalar>& bias) {
  if (bias.rank() != 1 || bias.cols() != x.cols()) {
    throw ShapeError("add_bias: bias " + shape_string(bias.shape()) +
                     " does not match " + shape_string(x.shape()));
  }
  auto px = x.node_ptr();
  auto pb = bias.node_ptr();
  Matrix<Scalar> out = x.value().rowwise() + bias.value().row(0);
  return BasicTensor<Scalar>::make_op(
      x.shape(), std::move(out), {x, bias}, [px, pb](Node<Scalar>& self) {
        px->accumulate(self.grad);
        pb->accumulate(self.grad.colwise().sum());
      });
}

template <typename Scalar>
BasicTensor<Scalar> reshape(const BasicTensor<Scalar>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: " + shape_string(a.shape()) + " cannot become " +
                     shape_string(shape));
  }
  const auto [rows, cols] = storage_dims(shape);
  Matrix<Scalar> out =
      Eigen::Map<const Matrix<Scalar>>(a.value().data(), rows, cols);
  auto pa = a.node_ptr();
  return BasicTensor<Scalar>::make_op(
      std::move(shape), std::move(out), {a}, [pa](Node<Scalar>& self) {
        pa->accumulate(Eigen::Map<const Matrix<Scalar>>(
            self.grad.data(), pa->value.rows(), pa->value.cols()));
      });
}

template <typename Scalar>
BasicTensor<Scalar> transpose(const BasicTensor<Scalar>& a) {
  if (a.rank() != 2) {
    throw ShapeError("transpose: needs a rank-2 tensor, got " +
                     shape_string(a.shape()));
  }
  auto pa = a.node_ptr();
  return BasicTensor<Scalar>::make_op(
      Shape{a.cols(), a.rows()}, a.value().transpose(), {a},
      [pa](Node<Scalar>& self) { pa->accumulate(self.grad.transpose()); });
}

// Concatenation along the last axis; all parts share the leading shape.
template <typename Scalar>
BasicTensor<Scalar> concat(const std::vector<BasicTensor<Scalar>>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Index rows = parts.front().rows();
  Shape lead(parts.front().shape().begin(), parts.front().shape().end() - 1);
  Index cols = 0;
  for (const auto& p : parts) {
    Shape pl(p.shape().begin(), p.shape().end() - 1);
    if (p.rank() == 0 || pl != lead) {
      throw ShapeError("concat: leading dims differ: " +
                       shape_string(parts.front().shape()) + " vs " +
                       shape_string(p.shape()));
    }
    cols += p.cols();
  }
  Matrix<Scalar> out(rows, cols);
  std::vector<std::shared_ptr<Node<Scalar>>> nodes;
  Index offset = 0;
  for (const auto& p : parts) {
    out.middleCols(offset, p.cols()) = p.value();
    offset += p.cols();
    nodes.push_back(p.node_ptr());
  }
  Shape shape = lead;
  shape.push_back(cols);
  return BasicTensor<Scalar>::make_op(
      std::move(shape), std::move(out), parts, [nodes](Node<Scalar>& self) {
        Index off = 0;
        for (const auto& n : nodes) {
          const Index c = n->value.cols();
          n->accumulate(self.grad.middleCols(off, c));
          off += c;
        }
      });
}

// Stacks rank-2 (or rank-1, as single rows) tensors vertically.
template <typename Scalar>
BasicTensor<Scalar> concat_rows(const std::vector<BasicTensor<Scalar>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const Index cols = parts.front().cols();
  Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols || p.rank() > 2) {
      throw ShapeError("concat_rows: widths differ: " +
                       shape_string(parts.front().shape()) + " vs " +
                       shape_string(p.shape()));
    }
    rows += p.rows();
  }
  Matrix<Scalar> out(rows, cols);
  std::vector<std::shared_ptr<Node<Scalar>>> nodes;
  Index offset = 0;
  for (const auto& p : parts) {
    out.middleRows(offset, p.rows()) = p.value();
    offset += p.rows();
    nodes.push_back(p.node_ptr());
  }
  return BasicTensor<Scalar>::make_op(
      Shape{rows, cols}, std::move(out), parts, [nodes](Node<Scalar>& self) {
        Index off = 0;
        for (const auto& n : nodes) {
          const Index r = n->value.rows();
          n->accumulate(self.grad.middleRows(off, r));
          off += r;
        }
      });
}

// Gathers rows by index (repeats allowed); the backward pass scatter-adds.
template <typename Scalar>
BasicTensor<Scalar> take_rows(const BasicTensor<Scalar>& a,
                              const std::vector<Index>& rows) {
  if (rows.empty()) throw ShapeError("take_rows: empty index list");
  Matrix<Scalar> out(Index(rows.size()), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= a.rows()) {
      throw ShapeError("take_rows: row " + std::to_string(rows[i]) +
                       " outside " + shape_string(a.shape()));
    }
    out.row(Index(i)) = a.value().row(rows[i]);
  }
  auto pa = a.node_ptr();
  return BasicTensor<Scalar>::make_op(
      Shape{Index(rows.size()), a.cols()}, std::move(out), {a},
      [pa, rows](Node<Scalar>& self) {
        if (!pa->requires_grad) return;
        Matrix<Scalar> g = Matrix<Scalar>::Zero(pa->value.rows(), pa->value.cols());
        for (std::size_t i = 0; i < rows.size(); ++i) {
          g.row(rows[i]) += self.grad.row(Index(i));
        }
        pa->accumulate(g);
      });
}

// Rows of an embedding table for each id.
template <typename Scalar>
BasicTensor<Scalar> embedding(const BasicTensor<Scalar>& table,
                              const std::vector<int>& ids) {
  if (ids.empty()) throw EmptySequenceError("embedding: empty id sequence");
  std::vector<Index> rows;
  rows.reserve(ids.size());
  for (int id : ids) {
    if (id < 0 || id >= table.rows()) {
      throw VocabularyError("embedding: token id " + std::to_string(id) +
                            " outside vocabulary of size " +
                            std::to_string(table.rows()));
    }
    rows.push_back(id);
  }
  return take_rows(table, rows);
}

// ---------------------------------------------------------------------------
// Normalization

// Max-subtracted softmax along `axis` (last axis, or axis 0 of a matrix).
template <typename Scalar>
BasicTensor<Scalar> softmax(const BasicTensor<Scalar>& a, int axis = -1) {
  const int rank = int(a.rank());
  if (axis < 0) axis += std::max(rank, 1);
  if (rank == 2 && axis == 0) return transpose(softmax(transpose(a), 1));
  if (axis != std::max(rank, 1) - 1) {
    throw ShapeError("softmax: unsupported axis " + std::to_string(axis) +
                     " for " + shape_string(a.shape()));
  }
  Matrix<Scalar> out = a.value();
  for (Index r = 0; r < out.rows(); ++r) {
    out.row(r).array() -= out.row(r).maxCoeff();
    out.row(r) = out.row(r).array().exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  auto pa = a.node_ptr();
  return BasicTensor<Scalar>::make_op(
      a.shape(), std::move(out), {a}, [pa](Node<Scalar>& self) {
        const Matrix<Scalar>& out = self.value;
        Matrix<Scalar> dot = self.grad.cwiseProduct(out).rowwise().sum();
        Matrix<Scalar> g =
            out.cwiseProduct(self.grad - dot.replicate(1, out.cols()));
        pa->accumulate(g);
      });
}

// Row-wise layer normalization with affine gain and bias over the last axis.
template <typename Scalar>
BasicTensor<Scalar> layer_norm(const BasicTensor<Scalar>& x,
                               const BasicTensor<Scalar>& gain,
                               const BasicTensor<Scalar>& bias,
                               Scalar eps = Scalar(1e-6)) {
  const Index n = x.cols();
  if (gain.cols() != n || bias.cols() != n || gain.rank() != 1 ||
      bias.rank() != 1) {
    throw ShapeError("layer_norm: gain/bias " + shape_string(gain.shape()) +
                     " do not match " + shape_string(x.shape()));
  }
  Matrix<Scalar> xhat(x.rows(), n);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> rstd(x.rows());
  for (Index r = 0; r < x.rows(); ++r) {
    const Scalar mu = x.value().row(r).mean();
    auto centered = (x.value().row(r).array() - mu).matrix();
    const Scalar var = centered.squaredNorm() / Scalar(n);
    rstd(r) = Scalar(1) / std::sqrt(var + eps);
    xhat.row(r) = centered * rstd(r);
  }
  Matrix<Scalar> out =
      (xhat.array().rowwise() * gain.value().row(0).array()).matrix();
  out.rowwise() += bias.value().row(0);
  auto px = x.node_ptr();
  auto pg = gain.node_ptr();
  auto pb = bias.node_ptr();
  return BasicTensor<Scalar>::make_op(
      x.shape(), std::move(out), {x, gain, bias},
      [px, pg, pb, xhat, rstd](Node<Scalar>& self) {
        const Matrix<Scalar>& dy = self.grad;
        if (pg->requires_grad) pg->accumulate(dy.cwiseProduct(xhat).colwise().sum());
        if (pb->requires_grad) pb->accumulate(dy.colwise().sum());
        if (!px->requires_grad) return;
        const Index cols = xhat.cols();
        Matrix<Scalar> dxhat =
            (dy.array().rowwise() * pg->value.row(0).array()).matrix();
        Matrix<Scalar> dx(dy.rows(), cols);
        for (Index r = 0; r < dy.rows(); ++r) {
          const Scalar m1 = dxhat.row(r).mean();
          const Scalar m2 = dxhat.row(r).dot(xhat.row(r)) / Scalar(cols);
          dx.row(r) = rstd(r) * (dxhat.row(r).array() - m1 -
                                 xhat.row(r).array() * m2)
                                    .matrix();
        }
        px->accumulate(dx);
      });
}

// ---------------------------------------------------------------------------
// Sequence pooling

// Mean over unmasked rows of H[len x d]; returns a rank-1 tensor [d].
template <typename Scalar>
BasicTensor<Scalar> mean_pool(const BasicTensor<Scalar>& h,
                              const std::vector<bool>& mask) {
  if (Index(mask.size()) != h.rows()) {
    throw ShapeError("mean_pool: mask length " + std::to_string(mask.size()) +
                     " does not match " + shape_string(h.shape()));
  }
  std::vector<Index> keep;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) keep.push_back(Index(i));
  }
  if (keep.empty()) throw EmptySequenceError("mean_pool: every position masked");
  const Scalar inv = Scalar(1) / Scalar(keep.size());
  // Running mean, exact when every kept row is identical.
  Matrix<Scalar> out = Matrix<Scalar>::Zero(1, h.cols());
  Index seen = 0;
  for (Index r : keep) out += (h.value().row(r) - out) / Scalar(++seen);
  auto ph = h.node_ptr();
  return BasicTensor<Scalar>::make_op(
      Shape{h.cols()}, std::move(out), {h}, [ph, keep, inv](Node<Scalar>& self) {
        Matrix<Scalar> g = Matrix<Scalar>::Zero(ph->value.rows(), ph->value.cols());
        for (Index r : keep) g.row(r) = self.grad.row(0) * inv;
        ph->accumulate(g);
      });
}

// A contiguous run of rows belonging to one sequence in a packed batch.
struct Segment {
  Index offset = 0;
  Index length = 0;
};

// Per-segment means of a packed [N x d] tensor; returns [segments x d].
template <typename Scalar>
BasicTensor<Scalar> segment_mean(const BasicTensor<Scalar>& h,
                                 const std::vector<Segment>& segments) {
  if (segments.empty()) throw ShapeError("segment_mean: no segments");
  Matrix<Scalar> out(Index(segments.size()), h.cols());
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const Segment& seg = segments[s];
    if (seg.length <= 0) throw EmptySequenceError("segment_mean: empty segment");
    if (seg.offset < 0 || seg.offset + seg.length > h.rows()) {
      throw ShapeError("segment_mean: segment outside " + shape_string(h.shape()));
    }
    auto row = out.row(Index(s));
    row.setZero();
    for (Index i = 0; i < seg.length; ++i) {
      row += (h.value().row(seg.offset + i) - row) / Scalar(i + 1);
    }
  }
  auto ph = h.node_ptr();
  return BasicTensor<Scalar>::make_op(
      Shape{Index(segments.size()), h.cols()}, std::move(out), {h},
      [ph, segments](Node<Scalar>& self) {
        Matrix<Scalar> g = Matrix<Scalar>::Zero(ph->value.rows(), ph->value.cols());
        for (std::size_t s = 0; s < segments.size(); ++s) {
          const Segment& seg = segments[s];
          g.middleRows(seg.offset, seg.length).rowwise() +=
              self.grad.row(Index(s)) / Scalar(seg.length);
        }
        ph->accumulate(g);
      });
}

// ---------------------------------------------------------------------------
// Losses and regularization

// Mean token cross-entropy of logits[N x V] against target ids.
template <typename Scalar>
BasicTensor<Scalar> cross_entropy(const BasicTensor<Scalar>& logits,
                                  const std::vector<int>& targets) {
  if (Index(targets.size()) != logits.rows() || targets.empty()) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) +
                     " targets for logits " + shape_string(logits.shape()));
  }
  const Index n = logits.rows();
  Matrix<Scalar> probs = logits.value();
  Scalar total = 0;
  for (Index r = 0; r < n; ++r) {
    const int t = targets[std::size_t(r)];
    if (t < 0 || t >= logits.cols()) {
      throw VocabularyError("cross_entropy: target id " + std::to_string(t) +
                            " outside vocabulary");
    }
    const Scalar mx = probs.row(r).maxCoeff();
    probs.row(r).array() -= mx;
    probs.row(r) = probs.row(r).array().exp().matrix();
    const Scalar z = probs.row(r).sum();
    total += std::log(z) - (logits.value()(r, t) - mx);
    probs.row(r) /= z;
  }
  Matrix<Scalar> out(1, 1);
  out(0, 0) = total / Scalar(n);
  auto pl = logits.node_ptr();
  return BasicTensor<Scalar>::make_op(
      Shape{}, std::move(out), {logits},
      [pl, probs, targets](Node<Scalar>& self) {
        Matrix<Scalar> g = probs;
        for (std::size_t r = 0; r < targets.size(); ++r) {
          g(Index(r), targets[r]) -= Scalar(1);
        }
        g *= self.grad(0, 0) / Scalar(targets.size());
        pl->accumulate(g);
      });
}

// Inverted dropout. A null generator or zero rate is the identity.
template <typename Scalar, typename Rng>
BasicTensor<Scalar> dropout(const BasicTensor<Scalar>& a, Scalar rate,
                            Rng* rng) {
  if (rng == nullptr || rate <= Scalar(0)) return a;
  std::bernoulli_distribution keep(1.0 - double(rate));
  const Scalar inv = Scalar(1) / (Scalar(1) - rate);
  Matrix<Scalar> mask(a.rows(), a.cols());
  for (Index i = 0; i < mask.size(); ++i) {
    mask.data()[i] = keep(*rng) ? inv : Scalar(0);
  }
  auto pa = a.node_ptr();
  return BasicTensor<Scalar>::make_op(
      a.shape(), a.value().cwiseProduct(mask), {a},
      [pa, mask](Node<Scalar>& self) {
        pa->accumulate(self.grad.cwiseProduct(mask));
      });
}

}  // namespace vhm
