#pragma once

#include "subtyper/matrix.hpp"

#include <cstddef>
#include <functional>
#include <vector>

namespace subtyper {

class Tape;

/// Handle to a node recorded on a `Tape`.
class Var {
public:
    Var() = default;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape() const { return tape_; }
    std::size_t id() const { return id_; }
    const Matrix& value() const;
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }

private:
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/**
 * Reverse-mode automatic differentiation over matrix-valued nodes.
 *
 * Nodes are appended in evaluation order, so the node list is always a
 * topological order and `backward()` is a single reverse sweep. One tape
 * belongs to one computation; it is not safe to record from several threads.
 */
class Tape {
public:
    using Pullback = std::function<void(Tape&, std::size_t)>;

    Var leaf(Matrix value);
    Var record(Matrix value, Pullback pullback);

    const Matrix& value(Var v) const { return nodes_[v.id()].value; }
    const Matrix& value(std::size_t id) const { return nodes_[id].value; }

    /// d(loss)/d(node) after `backward()`; zeros for nodes the loss does not reach.
    Matrix adjoint(Var v) const;
    const Matrix& adjoint_ref(std::size_t id) const { return nodes_[id].adjoint; }
    bool has_adjoint(std::size_t id) const { return !nodes_[id].adjoint.empty() || nodes_[id].value.empty(); }

    void accumulate(std::size_t id, const Matrix& grad);

    /// Seeds the 1x1 `loss` with 1 and propagates adjoints to every node.
    void backward(Var loss);

    std::size_t size() const { return nodes_.size(); }

    /// Sign bits (x > 0) of every ReLU input recorded so far, in recording order.
    const std::vector<bool>& relu_pattern() const { return relu_pattern_; }
    void note_relu_inputs(const Matrix& x);

private:
    struct Node {
        Matrix value;
        Matrix adjoint;
        Pullback pullback;
    };
    std::vector<Node> nodes_;
    std::vector<bool> relu_pattern_;
};

/// Differentiable counterparts of the `Matrix` operations.
namespace ad {

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var subtract(Var a, Var b);
Var add_row(Var a, Var row);
Var scale(Var a, double factor);
Var relu(Var x);
Var layer_norm(Var x, Var gamma, Var beta, double eps);
Var softmax_rows(Var x);
Var reshape(Var x, std::size_t rows, std::size_t cols);
Var concat_cols(const std::vector<Var>& parts);
Var sum(Var x);
/// Mean squared difference as a 1x1 node.
Var mse(Var a, Var b);

/**
 * Scaled dot-product attention applied independently to consecutive blocks
 * of `block` rows: for each block, softmax(Q K^T * scale) V.
 *
 * When `weights_out` is non-null it receives the (rows x block) stack of
 * per-block attention matrices.
 */
Var block_attention(Var q, Var k, Var v, std::size_t block, double scale, Matrix* weights_out = nullptr);

} // namespace ad

} // namespace subtyper
