#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "latflow/tensor.hpp"

namespace latflow::ad {

using latflow::Shape;
using latflow::Tensor;

/// One node of a dynamically built computation graph. Ops allocate nodes,
/// record parents and a pull-style backward closure, and backward() replays
/// the closures in reverse topological order. Nodes whose inputs do not
/// require gradients skip recording entirely, so pure inference pays only
/// for the forward arithmetic.
struct Node {
    Tensor val;
    Tensor grad; // materialized lazily, same shape as val
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    Tensor& ensure_grad();
};

using Value = std::shared_ptr<Node>;

/// Wraps a tensor as a graph constant (no gradient).
Value constant(Tensor t);

/// Wraps a tensor as a trainable leaf.
Value leaf(Tensor t);

// ----- elementwise, with right-aligned broadcasting -----
Value add(const Value& a, const Value& b);
Value sub(const Value& a, const Value& b);
Value mul(const Value& a, const Value& b);
Value scale(const Value& a, double s);
Value add_scalar(const Value& a, double s);

// ----- activations -----
Value silu(const Value& x);
Value gelu(const Value& x); // tanh approximation
Value tanh_op(const Value& x);

// ----- linear algebra -----
/// x [..., in] times W [in, out] plus optional bias [out].
Value linear(const Value& x, const Value& W, const Value& b);
Value linear(const Value& x, const Value& W);
/// a [..., M, K] times b [K, N].
Value matmul(const Value& a, const Value& b);

// ----- attention -----
/// Scaled dot-product attention over axis -2.
/// q [..., Sq, dh], k and v [..., Sk, dh], identical leading dims.
Value attention(const Value& q, const Value& k, const Value& v);

/// Rotary position embedding along axis -2 (positions 0..S-1), rotating
/// channel pairs (2j, 2j+1) of the last axis by pos * base^(-2j/dh).
Value rope(const Value& x, double base);

// ----- normalization -----
/// LayerNorm over the last axis, no learnable affine.
Value layer_norm(const Value& x, double eps = 1e-5);
Value softmax(const Value& x); // last axis

// ----- shape ops -----
Value reshape(const Value& x, Shape s);
Value permute(const Value& x, const std::vector<int>& axes);
Value slice(const Value& x, int axis, std::int64_t start, std::int64_t len);
Value concat(const std::vector<Value>& xs, int axis);

// ----- gather -----
/// Rows of table [V, D] selected by idx; output [idx.size(), D].
Value embed(const Value& table, const std::vector<std::int64_t>& idx);

// ----- reductions and losses -----
Value sum_all(const Value& x);
Value mean_all(const Value& x);
/// Mean squared error over all elements (shapes must match).
Value mse(const Value& a, const Value& b);
/// Mean over rows of -log softmax(logits)[label]. logits [N, K].
Value cross_entropy_mean(const Value& logits, const std::vector<std::int64_t>& labels);
/// Pairwise Euclidean distance matrix: x [..., N, D] -> [..., N, N].
/// Diagonal entries are exactly zero and receive no gradient.
Value pairwise_dist(const Value& x);

/// Runs reverse-mode accumulation from a scalar root.
void backward(const Value& root);

} // namespace latflow::ad
