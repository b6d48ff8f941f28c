#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mdgr/rng.hpp"
#include "mdgr/tensor.hpp"

namespace mdgr {

// Handle to a node recorded on a Graph.
struct Var {
  int id = -1;
  bool valid() const noexcept { return id >= 0; }
};

// Tape-based reverse-mode differentiation over dense matrices.
//
// Nodes are appended in evaluation order, which is a topological order, and
// `backward` walks the tape once in reverse. Parameter leaves reference
// caller-owned tensors; their gradients are added into caller-owned sinks so
// one gradient buffer can collect contributions from many per-sample graphs.
//
// With `record_gradients == false` no backward closures are kept and the
// graph is a plain forward evaluator (used by decoding).
//
// All primitives reduce in double: dot products, softmax normalizers,
// layer-norm moments and the cross-entropy log-sum-exp.
template <class T>
class Graph {
 public:
  explicit Graph(bool record_gradients = true) : record_(record_gradients) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const noexcept { return record_; }

  // Leaf bound to an external tensor. A non-null sink makes it trainable.
  Var param(const Tensor<T>& value, Tensor<T>* grad_sink);
  Var constant(Tensor<T> value);

  Var matmul(Var a, Var b);
  // x[n,in] * w[in,out] + bias[out] broadcast over rows.
  Var linear(Var x, Var w, Var bias);
  Var add(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double factor);
  Var abs(Var a);
  Var gelu(Var a);
  Var softmax(Var a);
  Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
  Var dropout(Var x, double rate, Rng& rng);

  // Multi-head scaled dot-product attention over pre-projected q/k/v.
  // Query row i belongs to block i / q_block and attends to key rows
  // [block * k_block, (block + 1) * k_block). q_block == 0 means every query
  // attends to every key. No causal masking.
  Var attention(Var q, Var k, Var v, int heads, int q_block = 0, int k_block = 0);

  // Rows of a new [n, d] matrix; row i is the sum of the referenced table
  // rows listed for it. Used for token + position + difficulty embeddings.
  struct RowRef {
    Var table;
    int row;
  };
  Var embed_sum(std::span<const std::vector<RowRef>> rows);

  // out[i] = x[indices[i]].
  Var select_rows(Var x, std::span<const int> indices);

  // Sum over rows of -log softmax(logits[i])[targets[i]]; rows with a
  // negative target are skipped. Returns shape {1}.
  Var cross_entropy(Var logits, std::span<const int> targets);

  Var sum(Var a);

  const Tensor<T>& value(Var v) const;
  const Tensor<T>& grad(Var v) const;

  // Requires a {1}-shaped loss. Seeds d(loss)/d(loss) = 1.
  void backward(Var loss);

  std::size_t node_count() const noexcept { return nodes_.size(); }
  std::size_t backward_visits() const noexcept { return backward_visits_; }

 private:
  struct Node {
    Tensor<T> value;
    const Tensor<T>* external = nullptr;
    Tensor<T> grad;
    Tensor<T>* sink = nullptr;
    bool needs_grad = false;
    std::function<void(Graph&, int)> backward;
  };

  const Tensor<T>& val(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    return n.external != nullptr ? *n.external : n.value;
  }
  Tensor<T>& grad_buffer(int id);
  bool needs(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].needs_grad; }
  Var push(Tensor<T> value, bool needs_grad, std::function<void(Graph&, int)> backward,
           const char* op);
  void check(Var v) const;

  bool record_;
  std::vector<Node> nodes_;
  std::size_t backward_visits_ = 0;
};

extern template class Graph<float>;
extern template class Graph<double>;

// Plain forward helpers shared by the model and decoder.
template <class T>
std::vector<double> log_softmax(std::span<const T> logits);
template <class T>
std::vector<double> softmax(std::span<const T> logits);

}  // namespace mdgr
