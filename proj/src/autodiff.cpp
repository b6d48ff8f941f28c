#include "mdgr/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Core>

namespace mdgr {

namespace {

// Eight independent double lanes, combined pairwise at the end. The order is
// fixed, so results are deterministic, and the lanes vectorize.
template <class T>
double dot(const T* __restrict a, const T* __restrict b, int n) {
  double lane[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  int i = 0;
  for (; i + 8 <= n; i += 8) {
    for (int j = 0; j < 8; ++j) {
      lane[j] += static_cast<double>(a[i + j]) * static_cast<double>(b[i + j]);
    }
  }
  for (; i < n; ++i) {
    lane[0] += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  }
  return ((lane[0] + lane[4]) + (lane[2] + lane[6])) + ((lane[1] + lane[5]) + (lane[3] + lane[7]));
}

template <class T>
void axpy(T* __restrict y, T alpha, const T* __restrict x, int n) {
  for (int i = 0; i < n; ++i) {
    y[i] += alpha * x[i];
  }
}

// Row-major views used for the dense products.
template <class T>
using MatrixMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <class T>
using ConstMatrixMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <class T>
MatrixMap<T> as_matrix(Tensor<T>& t, int rows, int cols) {
  return MatrixMap<T>(t.data(), rows, cols);
}
template <class T>
ConstMatrixMap<T> as_matrix(const Tensor<T>& t, int rows, int cols) {
  return ConstMatrixMap<T>(t.data(), rows, cols);
}

template <class T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src) {
  T* d = dst.data();
  const T* s = src.data();
  const std::size_t n = dst.size();
  for (std::size_t i = 0; i < n; ++i) {
    d[i] += s[i];
  }
}

void require_same_shape(const char* op, const Shape& a, const Shape& b) {
  if (a != b) {
    fail(ErrorKind::kShapeMismatch,
         std::string(op) + ": shapes " + shape_string(a) + " and " + shape_string(b) + " differ");
  }
}

template <class T>
void require_matrix(const char* op, const Tensor<T>& t) {
  if (t.rank() != 2) {
    fail(ErrorKind::kShapeMismatch,
         std::string(op) + ": expected a matrix, got shape " + shape_string(t.shape()));
  }
}

}  // namespace

template <class T>
std::vector<double> log_softmax(std::span<const T> logits) {
  double max_logit = -INFINITY;
  for (T z : logits) {
    max_logit = std::max(max_logit, static_cast<double>(z));
  }
  double total = 0.0;
  for (T z : logits) {
    total += std::exp(static_cast<double>(z) - max_logit);
  }
  const double lse = max_logit + std::log(total);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = static_cast<double>(logits[i]) - lse;
  }
  return out;
}

template <class T>
std::vector<double> softmax(std::span<const T> logits) {
  double max_logit = -INFINITY;
  for (T z : logits) {
    max_logit = std::max(max_logit, static_cast<double>(z));
  }
  std::vector<double> out(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(static_cast<double>(logits[i]) - max_logit);
    total += out[i];
  }
  for (double& p : out) {
    p /= total;
  }
  return out;
}

template std::vector<double> log_softmax<float>(std::span<const float>);
template std::vector<double> log_softmax<double>(std::span<const double>);
template std::vector<double> softmax<float>(std::span<const float>);
template std::vector<double> softmax<double>(std::span<const double>);

template <class T>
void Graph<T>::check(Var v) const {
  require(v.id >= 0 && static_cast<std::size_t>(v.id) < nodes_.size(), ErrorKind::kState,
          "variable does not belong to this graph");
}

template <class T>
Tensor<T>& Graph<T>::grad_buffer(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.empty()) {
    n.grad = Tensor<T>(val(id).shape());
  }
  return n.grad;
}

template <class T>
Var Graph<T>::push(Tensor<T> value, bool needs_grad, std::function<void(Graph&, int)> backward,
                   const char* op) {
  for (T x : value.values()) {
    if (!std::isfinite(x)) {
      fail(ErrorKind::kNumericOverflow, std::string(op) + ": non-finite output");
    }
  }
  Node node;
  node.value = std::move(value);
  node.needs_grad = record_ && needs_grad;
  if (node.needs_grad) {
    node.backward = std::move(backward);
  }
  nodes_.push_back(std::move(node));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <class T>
Var Graph<T>::param(const Tensor<T>& value, Tensor<T>* grad_sink) {
  if (grad_sink != nullptr) {
    require_same_shape("param", value.shape(), grad_sink->shape());
  }
  Node node;
  node.external = &value;
  node.sink = record_ ? grad_sink : nullptr;
  node.needs_grad = record_ && grad_sink != nullptr;
  nodes_.push_back(std::move(node));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <class T>
Var Graph<T>::constant(Tensor<T> value) {
  return push(std::move(value), false, nullptr, "constant");
}

template <class T>
Var Graph<T>::matmul(Var a, Var b) {
  check(a);
  check(b);
  const Tensor<T>& A = val(a.id);
  const Tensor<T>& Bm = val(b.id);
  require_matrix("matmul", A);
  require_matrix("matmul", Bm);
  if (A.dim(1) != Bm.dim(0)) {
    fail(ErrorKind::kShapeMismatch, "matmul: inner dimensions differ, " +
                                        shape_string(A.shape()) + " x " +
                                        shape_string(Bm.shape()));
  }
  const int m = A.dim(0), k = A.dim(1), n = Bm.dim(1);
  Tensor<T> out({m, n});
  as_matrix(out, m, n).noalias() = as_matrix(A, m, k) * as_matrix(Bm, k, n);
  return push(std::move(out), needs(a) || needs(b),
              [a, b, m, k, n](Graph& g, int self) {
                const auto dC = as_matrix(g.nodes_[self].grad, m, n);
                if (g.needs(a)) {
                  as_matrix(g.grad_buffer(a.id), m, k).noalias() +=
                      dC * as_matrix(g.val(b.id), k, n).transpose();
                }
                if (g.needs(b)) {
                  as_matrix(g.grad_buffer(b.id), k, n).noalias() +=
                      as_matrix(g.val(a.id), m, k).transpose() * dC;
                }
              },
              "matmul");
}

template <class T>
Var Graph<T>::linear(Var x, Var w, Var bias) {
  check(x);
  check(w);
  check(bias);
  const Tensor<T>& X = val(x.id);
  const Tensor<T>& W = val(w.id);
  const Tensor<T>& Bv = val(bias.id);
  require_matrix("linear", X);
  require_matrix("linear", W);
  if (X.dim(1) != W.dim(0) || static_cast<int>(Bv.size()) != W.dim(1)) {
    fail(ErrorKind::kShapeMismatch, "linear: input " + shape_string(X.shape()) + ", weight " +
                                        shape_string(W.shape()) + ", bias " +
                                        shape_string(Bv.shape()));
  }
  const int m = X.dim(0), k = X.dim(1), n = W.dim(1);
  Tensor<T> out({m, n});
  auto C = as_matrix(out, m, n);
  C.rowwise() = as_matrix(Bv, 1, n).row(0);
  C.noalias() += as_matrix(X, m, k) * as_matrix(W, k, n);
  return push(std::move(out), needs(x) || needs(w) || needs(bias),
              [x, w, bias, m, k, n](Graph& g, int self) {
                const auto dC = as_matrix(g.nodes_[self].grad, m, n);
                if (g.needs(x)) {
                  as_matrix(g.grad_buffer(x.id), m, k).noalias() +=
                      dC * as_matrix(g.val(w.id), k, n).transpose();
                }
                if (g.needs(w)) {
                  as_matrix(g.grad_buffer(w.id), k, n).noalias() +=
                      as_matrix(g.val(x.id), m, k).transpose() * dC;
                }
                if (g.needs(bias)) {
                  as_matrix(g.grad_buffer(bias.id), 1, n).row(0) += dC.colwise().sum();
                }
              },
              "linear");
}

template <class T>
Var Graph<T>::add(Var a, Var b) {
  check(a);
  check(b);
  const Tensor<T>& A = val(a.id);
  const Tensor<T>& Bt = val(b.id);
  require_same_shape("add", A.shape(), Bt.shape());
  Tensor<T> out = A;
  accumulate(out, Bt);
  return push(std::move(out), needs(a) || needs(b),
              [a, b](Graph& g, int self) {
                const Tensor<T>& d = g.nodes_[self].grad;
                if (g.needs(a)) accumulate(g.grad_buffer(a.id), d);
                if (g.needs(b)) accumulate(g.grad_buffer(b.id), d);
              },
              "add");
}

template <class T>
Var Graph<T>::mul(Var a, Var b) {
  check(a);
  check(b);
  const Tensor<T>& A = val(a.id);
  const Tensor<T>& Bt = val(b.id);
  require_same_shape("mul", A.shape(), Bt.shape());
  Tensor<T> out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= Bt[i];
  return push(std::move(out), needs(a) || needs(b),
              [a, b](Graph& g, int self) {
                const Tensor<T>& d = g.nodes_[self].grad;
                const Tensor<T>& A = g.val(a.id);
                const Tensor<T>& Bt = g.val(b.id);
                if (g.needs(a)) {
                  Tensor<T>& dA = g.grad_buffer(a.id);
                  for (std::size_t i = 0; i < d.size(); ++i) dA[i] += d[i] * Bt[i];
                }
                if (g.needs(b)) {
                  Tensor<T>& dB = g.grad_buffer(b.id);
                  for (std::size_t i = 0; i < d.size(); ++i) dB[i] += d[i] * A[i];
                }
              },
              "mul");
}

template <class T>
Var Graph<T>::scale(Var a, double factor) {
  check(a);
  Tensor<T> out = val(a.id);
  const T f = static_cast<T>(factor);
  for (T& x : out.values()) x *= f;
  return push(std::move(out), needs(a),
              [a, f](Graph& g, int self) {
                const Tensor<T>& d = g.nodes_[self].grad;
                Tensor<T>& dA = g.grad_buffer(a.id);
                for (std::size_t i = 0; i < d.size(); ++i) dA[i] += f * d[i];
              },
              "scale");
}

// d|x|/dx taken as sign(x) with sign(0) = 0.
template <class T>
Var Graph<T>::abs(Var a) {
  check(a);
  Tensor<T> out = val(a.id);
  for (T& x : out.values()) x = std::abs(x);
  return push(std::move(out), needs(a),
              [a](Graph& g, int self) {
                const Tensor<T>& d = g.nodes_[self].grad;
                const Tensor<T>& A = g.val(a.id);
                Tensor<T>& dA = g.grad_buffer(a.id);
                for (std::size_t i = 0; i < d.size(); ++i) {
                  const T s = A[i] > T{0} ? T{1} : (A[i] < T{0} ? T{-1} : T{0});
                  dA[i] += s * d[i];
                }
              },
              "abs");
}

// Exact (erf) GELU.
template <class T>
Var Graph<T>::gelu(Var a) {
  check(a);
  const Tensor<T>& A = val(a.id);
  Tensor<T> out(A.shape());
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  for (std::size_t i = 0; i < A.size(); ++i) {
    const double x = A[i];
    out[i] = static_cast<T>(0.5 * x * (1.0 + std::erf(x * kInvSqrt2)));
  }
  return push(std::move(out), needs(a),
              [a](Graph& g, int self) {
                const Tensor<T>& d = g.nodes_[self].grad;
                const Tensor<T>& A = g.val(a.id);
                Tensor<T>& dA = g.grad_buffer(a.id);
                constexpr double kInvSqrt2Pi = 0.39894228040143267794;
                for (std::size_t i = 0; i < d.size(); ++i) {
                  const double x = A[i];
                  const double cdf = 0.5 * (1.0 + std::erf(x * 0.70710678118654752440));
                  const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
                  dA[i] += static_cast<T>(d[i] * (cdf + x * pdf));
                }
              },
              "gelu");
}

template <class T>
Var Graph<T>::softmax(Var a) {
  check(a);
  const Tensor<T>& A = val(a.id);
  Tensor<T> out(A.shape());
  const int rows = A.rows(), cols = A.cols();
  for (int r = 0; r < rows; ++r) {
    const auto p = mdgr::softmax<T>(A.row(r));
    for (int c = 0; c < cols; ++c) out.at(r, c) = static_cast<T>(p[c]);
  }
  return push(std::move(out), needs(a),
              [a, rows, cols](Graph& g, int self) {
                const Tensor<T>& d = g.nodes_[self].grad;
                const Tensor<T>& y = g.nodes_[self].value;
                Tensor<T>& dA = g.grad_buffer(a.id);
                for (int r = 0; r < rows; ++r) {
                  const double inner = dot(d.row(r).data(), y.row(r).data(), cols);
                  for (int c = 0; c < cols; ++c) {
                    dA.at(r, c) += static_cast<T>(y.at(r, c) * (d.at(r, c) - inner));
                  }
                }
              },
              "softmax");
}

template <class T>
Var Graph<T>::layer_norm(Var x, Var gamma, Var beta, double eps) {
  check(x);
  check(gamma);
  check(beta);
  const Tensor<T>& X = val(x.id);
  const int rows = X.rows(), cols = X.cols();
  require(static_cast<int>(val(gamma.id).size()) == cols &&
              static_cast<int>(val(beta.id).size()) == cols,
          ErrorKind::kShapeMismatch,
          "layer_norm: input " + shape_string(X.shape()) + ", gain " +
              shape_string(val(gamma.id).shape()));
  const T* G = val(gamma.id).data();
  const T* Bt = val(beta.id).data();
  Tensor<T> out(X.shape());
  std::vector<double> normalized(X.size());
  std::vector<double> rstd(static_cast<std::size_t>(rows));
  for (int r = 0; r < rows; ++r) {
    const T* xr = X.data() + static_cast<std::size_t>(r) * cols;
    double mean = 0.0;
    for (int c = 0; c < cols; ++c) mean += xr[c];
    mean /= cols;
    double var = 0.0;
    for (int c = 0; c < cols; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= cols;
    const double inv = 1.0 / std::sqrt(var + eps);
    rstd[r] = inv;
    for (int c = 0; c < cols; ++c) {
      const double xh = (xr[c] - mean) * inv;
      normalized[static_cast<std::size_t>(r) * cols + c] = xh;
      out.at(r, c) = static_cast<T>(xh * G[c] + Bt[c]);
    }
  }
  return push(std::move(out), needs(x) || needs(gamma) || needs(beta),
              [x, gamma, beta, rows, cols, normalized = std::move(normalized),
               rstd = std::move(rstd)](Graph& g, int self) {
                const Tensor<T>& d = g.nodes_[self].grad;
                const T* G = g.val(gamma.id).data();
                if (g.needs(gamma) || g.needs(beta)) {
                  for (int r = 0; r < rows; ++r) {
                    for (int c = 0; c < cols; ++c) {
                      const double dy = d.at(r, c);
                      if (g.needs(gamma))
                        g.grad_buffer(gamma.id)[c] +=
                            static_cast<T>(dy * normalized[static_cast<std::size_t>(r) * cols + c]);
                      if (g.needs(beta)) g.grad_buffer(beta.id)[c] += static_cast<T>(dy);
                    }
                  }
                }
                if (g.needs(x)) {
                  Tensor<T>& dX = g.grad_buffer(x.id);
                  std::vector<double> dxh(static_cast<std::size_t>(cols));
                  for (int r = 0; r < rows; ++r) {
                    const double* xh = normalized.data() + static_cast<std::size_t>(r) * cols;
                    double mean_d = 0.0, mean_dx = 0.0;
                    for (int c = 0; c < cols; ++c) {
                      dxh[c] = static_cast<double>(d.at(r, c)) * G[c];
                      mean_d += dxh[c];
                      mean_dx += dxh[c] * xh[c];
                    }
                    mean_d /= cols;
                    mean_dx /= cols;
                    for (int c = 0; c < cols; ++c) {
                      dX.at(r, c) +=
                          static_cast<T>(rstd[r] * (dxh[c] - mean_d - xh[c] * mean_dx));
                    }
                  }
                }
              },
              "layer_norm");
}

template <class T>
Var Graph<T>::dropout(Var x, double rate, Rng& rng) {
  check(x);
  require(rate >= 0.0 && rate < 1.0, ErrorKind::kInvalidArgument,
          "dropout rate must lie in [0, 1)");
  if (rate == 0.0) {
    return x;
  }
  const Tensor<T>& X = val(x.id);
  std::vector<T> mask(X.size());
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  Tensor<T> out(X.shape());
  for (std::size_t i = 0; i < X.size(); ++i) {
    mask[i] = rng.uniform() < rate ? T{0} : keep_scale;
    out[i] = X[i] * mask[i];
  }
  return push(std::move(out), needs(x),
              [x, mask = std::move(mask)](Graph& g, int self) {
                const Tensor<T>& d = g.nodes_[self].grad;
                Tensor<T>& dX = g.grad_buffer(x.id);
                for (std::size_t i = 0; i < d.size(); ++i) dX[i] += d[i] * mask[i];
              },
              "dropout");
}

template <class T>
Var Graph<T>::attention(Var q, Var k, Var v, int heads, int q_block, int k_block) {
  check(q);
  check(k);
  check(v);
  const Tensor<T>& Q = val(q.id);
  const Tensor<T>& K = val(k.id);
  const Tensor<T>& V = val(v.id);
  require_matrix("attention", Q);
  require_matrix("attention", K);
  require_same_shape("attention", K.shape(), V.shape());
  const int nq = Q.dim(0), d = Q.dim(1), nk = K.dim(0);
  if (K.dim(1) != d) {
    fail(ErrorKind::kShapeMismatch, "attention: query " + shape_string(Q.shape()) + ", key " +
                                        shape_string(K.shape()));
  }
  require(heads >= 1 && d % heads == 0, ErrorKind::kShapeMismatch,
          "attention: width " + std::to_string(d) + " not divisible by heads " +
              std::to_string(heads));
  const bool blocked = q_block > 0;
  if (blocked) {
    require(k_block > 0 && nq % q_block == 0 && nk == (nq / q_block) * k_block,
            ErrorKind::kShapeMismatch,
            "attention: blocked layout mismatch, query " + shape_string(Q.shape()) + ", key " +
                shape_string(K.shape()));
  }
  const int span = blocked ? k_block : nk;
  const int hd = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));

  // probs[(i * heads + h) * span + j]
  std::vector<double> probs(static_cast<std::size_t>(nq) * heads * span);
  Tensor<T> out({nq, d});
  std::vector<double> acc(static_cast<std::size_t>(hd));
  for (int i = 0; i < nq; ++i) {
    const int k0 = blocked ? (i / q_block) * k_block : 0;
    for (int h = 0; h < heads; ++h) {
      double* p = probs.data() + (static_cast<std::size_t>(i) * heads + h) * span;
      const T* qi = Q.data() + static_cast<std::size_t>(i) * d + h * hd;
      double max_s = -INFINITY;
      for (int j = 0; j < span; ++j) {
        const T* kj = K.data() + static_cast<std::size_t>(k0 + j) * d + h * hd;
        p[j] = dot(qi, kj, hd) * inv_sqrt;
        max_s = std::max(max_s, p[j]);
      }
      double total = 0.0;
      for (int j = 0; j < span; ++j) {
        p[j] = std::exp(p[j] - max_s);
        total += p[j];
      }
      std::fill(acc.begin(), acc.end(), 0.0);
      for (int j = 0; j < span; ++j) {
        p[j] /= total;
        const T* vj = V.data() + static_cast<std::size_t>(k0 + j) * d + h * hd;
        for (int c = 0; c < hd; ++c) acc[c] += p[j] * vj[c];
      }
      T* oi = out.data() + static_cast<std::size_t>(i) * d + h * hd;
      for (int c = 0; c < hd; ++c) oi[c] = static_cast<T>(acc[c]);
    }
  }
  return push(
      std::move(out), needs(q) || needs(k) || needs(v),
      [q, k, v, heads, q_block, k_block, blocked, span, hd, inv_sqrt, nq, d,
       probs = std::move(probs)](Graph& g, int self) {
        const Tensor<T>& dO = g.nodes_[self].grad;
        const Tensor<T>& Q = g.val(q.id);
        const Tensor<T>& K = g.val(k.id);
        const Tensor<T>& V = g.val(v.id);
        Tensor<T>* dQ = g.needs(q) ? &g.grad_buffer(q.id) : nullptr;
        Tensor<T>* dK = g.needs(k) ? &g.grad_buffer(k.id) : nullptr;
        Tensor<T>* dV = g.needs(v) ? &g.grad_buffer(v.id) : nullptr;
        std::vector<double> dscore(static_cast<std::size_t>(span));
        for (int i = 0; i < nq; ++i) {
          const int k0 = blocked ? (i / q_block) * k_block : 0;
          for (int h = 0; h < heads; ++h) {
            const double* p = probs.data() + (static_cast<std::size_t>(i) * heads + h) * span;
            const T* doi = dO.data() + static_cast<std::size_t>(i) * d + h * hd;
            const T* qi = Q.data() + static_cast<std::size_t>(i) * d + h * hd;
            double inner = 0.0;
            for (int j = 0; j < span; ++j) {
              const T* vj = V.data() + static_cast<std::size_t>(k0 + j) * d + h * hd;
              dscore[j] = dot(doi, vj, hd);
              inner += p[j] * dscore[j];
            }
            for (int j = 0; j < span; ++j) {
              const std::size_t krow = static_cast<std::size_t>(k0 + j) * d + h * hd;
              if (dV != nullptr) {
                axpy(dV->data() + krow, static_cast<T>(p[j]), doi, hd);
              }
              const double ds = p[j] * (dscore[j] - inner) * inv_sqrt;
              if (dQ != nullptr) {
                axpy(dQ->data() + static_cast<std::size_t>(i) * d + h * hd, static_cast<T>(ds),
                     K.data() + krow, hd);
              }
              if (dK != nullptr) {
                axpy(dK->data() + krow, static_cast<T>(ds), qi, hd);
              }
            }
          }
        }
      },
      "attention");
}

template <class T>
Var Graph<T>::embed_sum(std::span<const std::vector<RowRef>> rows) {
  require(!rows.empty(), ErrorKind::kShapeMismatch, "embed_sum: no rows");
  int width = -1;
  for (const auto& refs : rows) {
    require(!refs.empty(), ErrorKind::kShapeMismatch, "embed_sum: empty row reference list");
    for (const RowRef& ref : refs) {
      check(ref.table);
      const Tensor<T>& table = val(ref.table.id);
      require_matrix("embed_sum", table);
      if (width < 0) width = table.dim(1);
      if (table.dim(1) != width) {
        fail(ErrorKind::kShapeMismatch, "embed_sum: table width " + std::to_string(table.dim(1)) +
                                            " differs from " + std::to_string(width));
      }
      if (ref.row < 0 || ref.row >= table.dim(0)) {
        fail(ErrorKind::kOutOfRange, "embed_sum: row " + std::to_string(ref.row) +
                                         " outside table " + shape_string(table.shape()));
      }
    }
  }
  const int n = static_cast<int>(rows.size());
  Tensor<T> out({n, width});
  bool any_grad = false;
  for (int i = 0; i < n; ++i) {
    for (const RowRef& ref : rows[i]) {
      axpy(out.data() + static_cast<std::size_t>(i) * width, T{1},
           val(ref.table.id).data() + static_cast<std::size_t>(ref.row) * width, width);
      any_grad = any_grad || needs(ref.table);
    }
  }
  std::vector<std::vector<RowRef>> refs_copy;
  if (record_ && any_grad) refs_copy.assign(rows.begin(), rows.end());
  return push(std::move(out), any_grad,
              [refs = std::move(refs_copy), width](Graph& g, int self) {
                const Tensor<T>& d = g.nodes_[self].grad;
                for (std::size_t i = 0; i < refs.size(); ++i) {
                  for (const RowRef& ref : refs[i]) {
                    if (!g.needs(ref.table)) continue;
                    axpy(g.grad_buffer(ref.table.id).data() +
                             static_cast<std::size_t>(ref.row) * width,
                         T{1}, d.data() + i * width, width);
                  }
                }
              },
              "embed_sum");
}

template <class T>
Var Graph<T>::select_rows(Var x, std::span<const int> indices) {
  check(x);
  const Tensor<T>& X = val(x.id);
  require_matrix("select_rows", X);
  require(!indices.empty(), ErrorKind::kShapeMismatch, "select_rows: no indices");
  const int cols = X.dim(1);
  Tensor<T> out({static_cast<int>(indices.size()), cols});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const int r = indices[i];
    if (r < 0 || r >= X.dim(0)) {
      fail(ErrorKind::kOutOfRange, "select_rows: row " + std::to_string(r) + " outside " +
                                       shape_string(X.shape()));
    }
    std::copy(X.row(r).begin(), X.row(r).end(), out.row(static_cast<int>(i)).begin());
  }
  return push(std::move(out), needs(x),
              [x, idx = std::vector<int>(indices.begin(), indices.end()), cols](Graph& g,
                                                                               int self) {
                const Tensor<T>& d = g.nodes_[self].grad;
                Tensor<T>& dX = g.grad_buffer(x.id);
                for (std::size_t i = 0; i < idx.size(); ++i) {
                  axpy(dX.data() + static_cast<std::size_t>(idx[i]) * cols, T{1},
                       d.data() + i * cols, cols);
                }
              },
              "select_rows");
}

template <class T>
Var Graph<T>::cross_entropy(Var logits, std::span<const int> targets) {
  check(logits);
  const Tensor<T>& Z = val(logits.id);
  require_matrix("cross_entropy", Z);
  const int rows = Z.dim(0), cols = Z.dim(1);
  require(static_cast<int>(targets.size()) == rows, ErrorKind::kShapeMismatch,
          "cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
              shape_string(Z.shape()));
  double loss = 0.0;
  std::vector<double> probs(Z.size(), 0.0);
  for (int r = 0; r < rows; ++r) {
    const int t = targets[r];
    if (t < 0) continue;
    require(t < cols, ErrorKind::kOutOfRange,
            "cross_entropy: target " + std::to_string(t) + " outside " + std::to_string(cols));
    const auto lp = log_softmax<T>(Z.row(r));
    loss -= lp[t];
    for (int c = 0; c < cols; ++c) probs[static_cast<std::size_t>(r) * cols + c] = std::exp(lp[c]);
  }
  return push(Tensor<T>::scalar(static_cast<T>(loss)), needs(logits),
              [logits, rows, cols, probs = std::move(probs),
               tg = std::vector<int>(targets.begin(), targets.end())](Graph& g, int self) {
                const double upstream = g.nodes_[self].grad[0];
                Tensor<T>& dZ = g.grad_buffer(logits.id);
                for (int r = 0; r < rows; ++r) {
                  if (tg[r] < 0) continue;
                  for (int c = 0; c < cols; ++c) {
                    const double onehot = c == tg[r] ? 1.0 : 0.0;
                    dZ.at(r, c) += static_cast<T>(
                        upstream * (probs[static_cast<std::size_t>(r) * cols + c] - onehot));
                  }
                }
              },
              "cross_entropy");
}

template <class T>
Var Graph<T>::sum(Var a) {
  check(a);
  double total = 0.0;
  for (T x : val(a.id).values()) total += x;
  return push(Tensor<T>::scalar(static_cast<T>(total)), needs(a),
              [a](Graph& g, int self) {
                const T upstream = g.nodes_[self].grad[0];
                for (T& x : g.grad_buffer(a.id).values()) x += upstream;
              },
              "sum");
}

template <class T>
const Tensor<T>& Graph<T>::value(Var v) const {
  check(v);
  return val(v.id);
}

template <class T>
const Tensor<T>& Graph<T>::grad(Var v) const {
  check(v);
  return nodes_[static_cast<std::size_t>(v.id)].grad;
}

template <class T>
void Graph<T>::backward(Var loss) {
  check(loss);
  require(record_, ErrorKind::kState, "backward on a graph built without gradient recording");
  require(val(loss.id).size() == 1, ErrorKind::kShapeMismatch,
          "backward: loss must be scalar, got shape " + shape_string(val(loss.id).shape()));
  backward_visits_ = 0;
  if (!nodes_[static_cast<std::size_t>(loss.id)].needs_grad) {
    return;
  }
  grad_buffer(loss.id)[0] = T{1};
  for (int id = loss.id; id >= 0; --id) {
    Node& node = nodes_[static_cast<std::size_t>(id)];
    if (!node.needs_grad || node.grad.empty()) continue;
    ++backward_visits_;
    if (node.backward) {
      node.backward(*this, id);
    }
    if (node.sink != nullptr) {
      accumulate(*node.sink, node.grad);
    }
  }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace mdgr
