/* relm - reusing a monolingual language model for low-resource translation.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *   http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "relm/common.hpp"
#include "relm/rng.hpp"

namespace relm {

/// All dense values are row-major 2-D matrices templated on scalar; training
/// runs in float, gradient checks in double. Higher-rank data (batch, seq,
/// dim) is stored with leading dimensions flattened into rows.
template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using IntMat =
    Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename S>
std::string shape_str(const Mat<S>& m) {
  return "(" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ")";
}

/// A named model weight. Non-trainable parameters never receive gradient and
/// are never touched by the optimizer.
template <typename S>
struct Parameter {
  std::string name;
  Mat<S> value;
  Mat<S> grad;
  bool trainable = true;

  Parameter(std::string n, Mat<S> v)
      : name(std::move(n)), value(std::move(v)) {
    grad = Mat<S>::Zero(value.rows(), value.cols());
  }

  void zero_grad() { grad.setZero(); }
};

template <typename S>
using ParamPtr = std::shared_ptr<Parameter<S>>;

template <typename S>
ParamPtr<S> make_param(std::string name, Mat<S> value) {
  return std::make_shared<Parameter<S>>(std::move(name), std::move(value));
}

/// Handle to a tape node.
struct Var {
  int id = -1;
};

/// Reverse-mode tape. Ops append nodes during the forward pass; backward()
/// walks the nodes in reverse and accumulates gradients into parameters.
/// One tape lives for one training step.
template <typename S>
class Tape {
 public:
  struct Node {
    Mat<S> value;
    Mat<S> grad;  // allocated lazily on first contribution
    bool has_grad = false;
    ParamPtr<S> param;  // set for parameter leaves
    std::function<void(Tape&, const Node&)> back;
  };

  Var leaf(const ParamPtr<S>& p) {
    Node node;
    node.value = p->value;
    node.param = p;
    return push(std::move(node));
  }

  Var constant(Mat<S> v) {
    Node node;
    node.value = std::move(v);
    return push(std::move(node));
  }

  const Mat<S>& value(Var v) const { return nodes_[check(v)].value; }

  Mat<S>& grad_of(Var v) {
    Node& n = nodes_[check(v)];
    if (!n.has_grad) {
      n.grad = Mat<S>::Zero(n.value.rows(), n.value.cols());
      n.has_grad = true;
    }
    return n.grad;
  }

  /// Seeds d(loss)/d(loss) = 1 and propagates to every reachable parameter.
  /// Repeated calls accumulate into parameter gradients.
  void backward(Var loss) {
    Node& top = nodes_[check(loss)];
    if (top.value.rows() != 1 || top.value.cols() != 1)
      fail(ErrorCode::Shape,
           "backward: loss must be scalar, got " + shape_str(top.value));
    grad_of(loss)(0, 0) += S(1);

    for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
      Node& node = nodes_[id];
      if (!node.has_grad) continue;
      if (node.param) {
        if (node.param->trainable) node.param->grad += node.grad;
        continue;
      }
      if (node.back) node.back(*this, node);
    }
  }

  std::size_t size() const { return nodes_.size(); }

  Var push(Node node) {
    nodes_.push_back(std::move(node));
    return Var{static_cast<int>(nodes_.size() - 1)};
  }

 private:
  int check(Var v) const {
    if (v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
      fail(ErrorCode::Shape, "invalid tape variable");
    return v.id;
  }

  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Expression-style free functions building tape nodes
// ---------------------------------------------------------------------------

namespace detail {
template <typename S>
void require(bool ok, const char* op, const Mat<S>& a, const Mat<S>& b) {
  if (!ok)
    fail(ErrorCode::Shape, std::string(op) + ": incompatible shapes " +
                               shape_str(a) + " and " + shape_str(b));
}
}  // namespace detail

/// C = A * B
template <typename S>
Var matmul(Tape<S>& t, Var a, Var b) {
  const Mat<S>&A = t.value(a), &B = t.value(b);
  detail::require(A.cols() == B.rows(), "matmul", A, B);
  typename Tape<S>::Node node;
  node.value = A * B;
  node.back = [a, b](Tape<S>& t, const typename Tape<S>::Node& n) {
    t.grad_of(a).noalias() += n.grad * t.value(b).transpose();
    t.grad_of(b).noalias() += t.value(a).transpose() * n.grad;
  };
  return t.push(std::move(node));
}

/// C = A * B^T  (also the tied output projection: logits = h * E^T)
template <typename S>
Var matmul_nt(Tape<S>& t, Var a, Var b) {
  const Mat<S>&A = t.value(a), &B = t.value(b);
  detail::require(A.cols() == B.cols(), "matmul_nt", A, B);
  typename Tape<S>::Node node;
  node.value = A * B.transpose();
  node.back = [a, b](Tape<S>& t, const typename Tape<S>::Node& n) {
    t.grad_of(a).noalias() += n.grad * t.value(b);
    t.grad_of(b).noalias() += n.grad.transpose() * t.value(a);
  };
  return t.push(std::move(node));
}

template <typename S>
Var add(Tape<S>& t, Var a, Var b) {
  const Mat<S>&A = t.value(a), &B = t.value(b);
  detail::require(A.rows() == B.rows() && A.cols() == B.cols(), "add", A, B);
  typename Tape<S>::Node node;
  node.value = A + B;
  node.back = [a, b](Tape<S>& t, const typename Tape<S>::Node& n) {
    t.grad_of(a) += n.grad;
    t.grad_of(b) += n.grad;
  };
  return t.push(std::move(node));
}

/// Adds a 1 x C row vector to every row of A.
template <typename S>
Var add_rowvec(Tape<S>& t, Var a, Var v) {
  const Mat<S>&A = t.value(a), &V = t.value(v);
  detail::require(V.rows() == 1 && V.cols() == A.cols(), "add_rowvec", A, V);
  typename Tape<S>::Node node;
  node.value = A.rowwise() + V.row(0);
  node.back = [a, v](Tape<S>& t, const typename Tape<S>::Node& n) {
    t.grad_of(a) += n.grad;
    t.grad_of(v).row(0) += n.grad.colwise().sum();
  };
  return t.push(std::move(node));
}

template <typename S>
Var mul_elem(Tape<S>& t, Var a, Var b) {
  const Mat<S>&A = t.value(a), &B = t.value(b);
  detail::require(A.rows() == B.rows() && A.cols() == B.cols(), "mul_elem", A,
                  B);
  typename Tape<S>::Node node;
  node.value = A.cwiseProduct(B);
  node.back = [a, b](Tape<S>& t, const typename Tape<S>::Node& n) {
    t.grad_of(a) += n.grad.cwiseProduct(t.value(b));
    t.grad_of(b) += n.grad.cwiseProduct(t.value(a));
  };
  return t.push(std::move(node));
}

template <typename S>
Var scale(Tape<S>& t, Var a, S factor) {
  typename Tape<S>::Node node;
  node.value = t.value(a) * factor;
  node.back = [a, factor](Tape<S>& t, const typename Tape<S>::Node& n) {
    t.grad_of(a) += n.grad * factor;
  };
  return t.push(std::move(node));
}

/// Adds a constant matrix (no gradient), e.g. an attention mask.
template <typename S>
Var add_const(Tape<S>& t, Var a, Mat<S> c) {
  const Mat<S>& A = t.value(a);
  detail::require(A.rows() == c.rows() && A.cols() == c.cols(), "add_const", A,
                  c);
  typename Tape<S>::Node node;
  node.value = A + c;
  node.back = [a](Tape<S>& t, const typename Tape<S>::Node& n) {
    t.grad_of(a) += n.grad;
  };
  return t.push(std::move(node));
}

/// Exact Gaussian-CDF GELU: x * Phi(x).
template <typename S>
Var gelu(Tape<S>& t, Var a) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  typename Tape<S>::Node node;
  node.value = t.value(a).unaryExpr([](S x) {
    double xd = static_cast<double>(x);
    return static_cast<S>(xd * 0.5 * std::erfc(-xd * kInvSqrt2));
  });
  node.back = [a](Tape<S>& t, const typename Tape<S>::Node& n) {
    const Mat<S>& X = t.value(a);
    t.grad_of(a) += n.grad.cwiseProduct(X.unaryExpr([](S x) {
      double xd = static_cast<double>(x);
      double phi = 0.5 * std::erfc(-xd * kInvSqrt2);
      double pdf = kInvSqrt2Pi * std::exp(-0.5 * xd * xd);
      return static_cast<S>(phi + xd * pdf);
    }));
  };
  return t.push(std::move(node));
}

/// Row-wise softmax (numerically stable).
template <typename S>
Var softmax_rows(Tape<S>& t, Var a) {
  const Mat<S>& A = t.value(a);
  Mat<S> y(A.rows(), A.cols());
  for (Eigen::Index r = 0; r < A.rows(); ++r) {
    S m = A.row(r).maxCoeff();
    y.row(r) = (A.row(r).array() - m).exp();
    y.row(r) /= y.row(r).sum();
  }
  typename Tape<S>::Node node;
  node.value = std::move(y);
  node.back = [a](Tape<S>& t, const typename Tape<S>::Node& n) {
    Mat<S>& da = t.grad_of(a);
    for (Eigen::Index r = 0; r < n.value.rows(); ++r) {
      S dot = n.grad.row(r).dot(n.value.row(r));
      da.row(r) += (n.grad.row(r).array() - dot).matrix().cwiseProduct(
          n.value.row(r));
    }
  };
  return t.push(std::move(node));
}

/// Per-row layer normalization over the feature axis with learned gain/bias
/// (1 x C each). Variance is the biased estimate.
template <typename S>
Var layer_norm(Tape<S>& t, Var x, Var gain, Var bias, S eps = S(1e-5)) {
  const Mat<S>& X = t.value(x);
  const Mat<S>&G = t.value(gain), &B = t.value(bias);
  detail::require(G.rows() == 1 && G.cols() == X.cols(), "layer_norm", X, G);
  detail::require(B.rows() == 1 && B.cols() == X.cols(), "layer_norm", X, B);

  const Eigen::Index R = X.rows(), C = X.cols();
  Mat<S> xhat(R, C);
  Mat<S> inv_std(R, 1);
  for (Eigen::Index r = 0; r < R; ++r) {
    S mean = X.row(r).mean();
    auto centered = (X.row(r).array() - mean);
    S var = centered.square().sum() / static_cast<S>(C);
    S is = S(1) / std::sqrt(var + eps);
    inv_std(r, 0) = is;
    xhat.row(r) = (centered * is).matrix();
  }
  typename Tape<S>::Node node;
  node.value = (xhat.array().rowwise() * G.row(0).array()).matrix();
  node.value.rowwise() += B.row(0);

  // Keep xhat and 1/std for the backward pass.
  auto ctx = std::make_shared<std::pair<Mat<S>, Mat<S>>>(std::move(xhat),
                                                         std::move(inv_std));
  node.back = [x, gain, bias, ctx](Tape<S>& t,
                                   const typename Tape<S>::Node& n) {
    const Mat<S>& Xh = ctx->first;
    const Mat<S>& Is = ctx->second;
    const Mat<S>& G = t.value(gain);
    const Eigen::Index R = Xh.rows(), C = Xh.cols();

    t.grad_of(bias).row(0) += n.grad.colwise().sum();
    t.grad_of(gain).row(0) += (n.grad.cwiseProduct(Xh)).colwise().sum();

    Mat<S>& dx = t.grad_of(x);
    for (Eigen::Index r = 0; r < R; ++r) {
      auto dy = n.grad.row(r).array();
      auto g = G.row(0).array();
      auto xh = Xh.row(r).array();
      auto dxhat = dy * g;
      S m1 = dxhat.sum() / static_cast<S>(C);
      S m2 = (dxhat * xh).sum() / static_cast<S>(C);
      dx.row(r) += ((dxhat - m1 - xh * m2) * Is(r, 0)).matrix();
    }
  };
  return t.push(std::move(node));
}

/// Inverted dropout: scales kept values by 1/(1-p) at train time, identity
/// at eval time. The mask is drawn once at graph build.
template <typename S>
Var dropout(Tape<S>& t, Var a, double p, RngStream& stream, bool train) {
  if (!train || p <= 0.0) return a;
  if (p >= 1.0) fail(ErrorCode::Config, "dropout: p must be < 1");
  const Mat<S>& A = t.value(a);
  auto mask = std::make_shared<Mat<S>>(A.rows(), A.cols());
  const S keep_scale = static_cast<S>(1.0 / (1.0 - p));
  for (Eigen::Index r = 0; r < A.rows(); ++r)
    for (Eigen::Index c = 0; c < A.cols(); ++c)
      (*mask)(r, c) = stream.bernoulli(p) ? S(0) : keep_scale;
  typename Tape<S>::Node node;
  node.value = A.cwiseProduct(*mask);
  node.back = [a, mask](Tape<S>& t, const typename Tape<S>::Node& n) {
    t.grad_of(a) += n.grad.cwiseProduct(*mask);
  };
  return t.push(std::move(node));
}

/// Gathers rows of a table: out.row(r) = table.row(ids[r]).
template <typename S>
Var embedding_rows(Tape<S>& t, Var table, const std::vector<int>& ids) {
  const Mat<S>& T = t.value(table);
  Mat<S> out(static_cast<Eigen::Index>(ids.size()), T.cols());
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || ids[r] >= T.rows())
      fail(ErrorCode::Shape,
           "embedding_rows: index " + std::to_string(ids[r]) +
               " out of range for table " + shape_str(T));
    out.row(static_cast<Eigen::Index>(r)) = T.row(ids[r]);
  }
  typename Tape<S>::Node node;
  node.value = std::move(out);
  auto ids_copy = std::make_shared<std::vector<int>>(ids);
  node.back = [table, ids_copy](Tape<S>& t, const typename Tape<S>::Node& n) {
    Mat<S>& dT = t.grad_of(table);
    for (std::size_t r = 0; r < ids_copy->size(); ++r)
      dT.row((*ids_copy)[r]) += n.grad.row(static_cast<Eigen::Index>(r));
  };
  return t.push(std::move(node));
}

/// Mean cross entropy over rows whose target is not `ignore_index`.
/// `out_count` reports how many rows contributed. Zero contributing rows
/// yield a zero loss.
template <typename S>
Var cross_entropy_mean(Tape<S>& t, Var logits, const std::vector<int>& targets,
                       int ignore_index = -1, int* out_count = nullptr) {
  const Mat<S>& L = t.value(logits);
  if (static_cast<Eigen::Index>(targets.size()) != L.rows())
    fail(ErrorCode::Shape, "cross_entropy: " + std::to_string(targets.size()) +
                               " targets for logits " + shape_str(L));

  int count = 0;
  double total = 0.0;
  Mat<S> logprob(L.rows(), L.cols());
  for (Eigen::Index r = 0; r < L.rows(); ++r) {
    int tgt = targets[r];
    if (tgt == ignore_index) continue;
    if (tgt < 0 || tgt >= L.cols())
      fail(ErrorCode::Shape,
           "cross_entropy: target " + std::to_string(tgt) +
               " out of range for logits " + shape_str(L));
    S m = L.row(r).maxCoeff();
    S lse = m + std::log((L.row(r).array() - m).exp().sum());
    logprob.row(r) = (L.row(r).array() - lse).matrix();
    total -= static_cast<double>(logprob(r, tgt));
    ++count;
  }
  if (out_count) *out_count = count;

  typename Tape<S>::Node node;
  node.value = Mat<S>::Zero(1, 1);
  if (count > 0)
    node.value(0, 0) = static_cast<S>(total / count);

  auto ctx = std::make_shared<std::pair<Mat<S>, std::vector<int>>>(
      std::move(logprob), targets);
  int divisor = std::max(count, 1);
  node.back = [logits, ctx, divisor, ignore_index](
                  Tape<S>& t, const typename Tape<S>::Node& n) {
    const S g = n.grad(0, 0) / static_cast<S>(divisor);
    Mat<S>& dL = t.grad_of(logits);
    const Mat<S>& logprob = ctx->first;
    const std::vector<int>& targets = ctx->second;
    for (Eigen::Index r = 0; r < dL.rows(); ++r) {
      int tgt = targets[r];
      if (tgt == ignore_index) continue;
      dL.row(r) += (logprob.row(r).array().exp() * g).matrix();
      dL(r, tgt) -= g;
    }
  };
  return t.push(std::move(node));
}

template <typename S>
Var sum_all(Tape<S>& t, Var a) {
  typename Tape<S>::Node node;
  node.value = Mat<S>::Zero(1, 1);
  node.value(0, 0) = t.value(a).sum();
  node.back = [a](Tape<S>& t, const typename Tape<S>::Node& n) {
    t.grad_of(a).array() += n.grad(0, 0);
  };
  return t.push(std::move(node));
}

/// Multi-head attention scores: q is (B*Tq x D), k is (B*Tk x D), D = H*dh.
/// Returns (B*H*Tq x Tk) with row ((b*H + h)*Tq + i) holding the scaled
/// scores of query i against all Tk keys in head h of batch item b.
template <typename S>
Var attn_scores(Tape<S>& t, Var q, Var k, int B, int Tq, int Tk, int H) {
  const Mat<S>&Q = t.value(q), &K = t.value(k);
  detail::require(Q.rows() == static_cast<Eigen::Index>(B) * Tq &&
                      K.rows() == static_cast<Eigen::Index>(B) * Tk &&
                      Q.cols() == K.cols() && Q.cols() % H == 0,
                  "attn_scores", Q, K);
  const int dh = static_cast<int>(Q.cols()) / H;
  const S inv_sqrt = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));

  Mat<S> scores(static_cast<Eigen::Index>(B) * H * Tq, Tk);
  for (int b = 0; b < B; ++b)
    for (int h = 0; h < H; ++h)
      scores.block(static_cast<Eigen::Index>(b * H + h) * Tq, 0, Tq, Tk)
          .noalias() = Q.block(static_cast<Eigen::Index>(b) * Tq, h * dh, Tq,
                               dh) *
                       K.block(static_cast<Eigen::Index>(b) * Tk, h * dh, Tk,
                               dh)
                           .transpose() *
                       inv_sqrt;

  typename Tape<S>::Node node;
  node.value = std::move(scores);
  node.back = [q, k, B, Tq, Tk, H, dh, inv_sqrt](
                  Tape<S>& t, const typename Tape<S>::Node& n) {
    const Mat<S>&Q = t.value(q), &K = t.value(k);
    Mat<S>& dQ = t.grad_of(q);
    Mat<S>& dK = t.grad_of(k);
    for (int b = 0; b < B; ++b)
      for (int h = 0; h < H; ++h) {
        auto dS = n.grad.block(static_cast<Eigen::Index>(b * H + h) * Tq, 0,
                               Tq, Tk);
        dQ.block(static_cast<Eigen::Index>(b) * Tq, h * dh, Tq, dh)
            .noalias() +=
            dS * K.block(static_cast<Eigen::Index>(b) * Tk, h * dh, Tk, dh) *
            inv_sqrt;
        dK.block(static_cast<Eigen::Index>(b) * Tk, h * dh, Tk, dh)
            .noalias() +=
            dS.transpose() *
            Q.block(static_cast<Eigen::Index>(b) * Tq, h * dh, Tq, dh) *
            inv_sqrt;
      }
  };
  return t.push(std::move(node));
}

/// Applies attention weights to values: probs is (B*H*Tq x Tk) as produced
/// by attn_scores+softmax, v is (B*Tk x D); returns (B*Tq x D).
template <typename S>
Var attn_mix(Tape<S>& t, Var probs, Var v, int B, int Tq, int Tk, int H) {
  const Mat<S>&P = t.value(probs), &V = t.value(v);
  detail::require(P.rows() == static_cast<Eigen::Index>(B) * H * Tq &&
                      P.cols() == Tk &&
                      V.rows() == static_cast<Eigen::Index>(B) * Tk &&
                      V.cols() % H == 0,
                  "attn_mix", P, V);
  const int dh = static_cast<int>(V.cols()) / H;

  Mat<S> out = Mat<S>::Zero(static_cast<Eigen::Index>(B) * Tq, V.cols());
  for (int b = 0; b < B; ++b)
    for (int h = 0; h < H; ++h)
      out.block(static_cast<Eigen::Index>(b) * Tq, h * dh, Tq, dh)
          .noalias() = P.block(static_cast<Eigen::Index>(b * H + h) * Tq, 0,
                               Tq, Tk) *
                       V.block(static_cast<Eigen::Index>(b) * Tk, h * dh, Tk,
                               dh);

  typename Tape<S>::Node node;
  node.value = std::move(out);
  node.back = [probs, v, B, Tq, Tk, H, dh](Tape<S>& t,
                                           const typename Tape<S>::Node& n) {
    const Mat<S>&P = t.value(probs), &V = t.value(v);
    Mat<S>& dP = t.grad_of(probs);
    Mat<S>& dV = t.grad_of(v);
    for (int b = 0; b < B; ++b)
      for (int h = 0; h < H; ++h) {
        auto dO = n.grad.block(static_cast<Eigen::Index>(b) * Tq, h * dh, Tq,
                               dh);
        dP.block(static_cast<Eigen::Index>(b * H + h) * Tq, 0, Tq, Tk)
            .noalias() +=
            dO *
            V.block(static_cast<Eigen::Index>(b) * Tk, h * dh, Tk, dh)
                .transpose();
        dV.block(static_cast<Eigen::Index>(b) * Tk, h * dh, Tk, dh)
            .noalias() +=
            P.block(static_cast<Eigen::Index>(b * H + h) * Tq, 0, Tq, Tk)
                .transpose() *
            dO;
      }
  };
  return t.push(std::move(node));
}

}  // namespace relm
