// SPDX-License-Identifier: Apache-2.0
//
// Define-by-run reverse-mode differentiation over dense tensors.
//
// A Graph is built fresh for every forward pass. Each call to a primitive
// evaluates eagerly and appends a node; since a node can only reference nodes
// that already exist, the node list is a topological order by construction and
// backward() is a single reverse sweep.
#pragma once

#include <cstddef>
#include <initializer_list>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gmu/tensor.hpp"

namespace gmu {

/// Which weight vectors a max-norm constraint applies to.
enum class MaxNormAxis { none, rows, cols };

/// A named trainable tensor with its gradient accumulator.
struct Parameter {
    Parameter() = default;
    Parameter(std::string name, Tensor value, MaxNormAxis max_norm = MaxNormAxis::none);

    std::string name;
    Tensor value;
    Tensor grad;
    MaxNormAxis max_norm = MaxNormAxis::none;

    void zero_grad();
};

enum class Prim {
    matmul,       // [n,k] x [k,m] -> [n,m]
    transpose,    // [n,m] -> [m,n]
    add,          // same shape
    sub,          // same shape
    mul,          // elementwise, same shape
    add_bias,     // [n,m] + [m] broadcast over rows
    scale_cols,   // [n,m] * [m] broadcast over rows
    affine,       // a * x + b with scalar attrs
    tanh,
    sigmoid,
    softmax,      // along attr.axis
    concat,       // rank-2 inputs along the feature axis
    slice_cols,   // columns [offset, offset + width)
    reshape,      // to attr.shape
    max_pieces,   // [n, m*k] -> [n, m], max over k consecutive columns
    col_mean,     // [n,m] -> [m]
    square,
    rsqrt,        // 1 / sqrt(x + attr.b)
    sum,          // -> [1]
    mean,         // -> [1]
    bce_logits,   // mean binary cross-entropy from logits and targets -> [1]
    bce_probs,    // mean binary cross-entropy from probabilities and targets -> [1]
};

/// Static attributes for a primitive; only the fields a primitive uses matter.
struct Attr {
    std::size_t axis = 0;
    std::size_t offset = 0;
    std::size_t width = 0;
    double a = 1.0;
    double b = 0.0;
    Shape shape{};
};

std::string_view prim_name(Prim kind);
/// Throws std::invalid_argument for names that are not primitives.
Prim prim_from_name(std::string_view name);

struct NodeId {
    std::size_t index = static_cast<std::size_t>(-1);
    bool operator==(const NodeId&) const = default;
};

/// Evaluates a primitive on plain tensors without recording anything.
Tensor apply_primitive(Prim kind, std::span<const Tensor> inputs, const Attr& attr = {});

class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;
    Graph(Graph&&) = default;
    Graph& operator=(Graph&&) = default;

    /// Constant leaf. Rejects non-finite values.
    NodeId input(Tensor value);
    /// Trainable leaf; backward() accumulates into p.grad. `p` must outlive the graph.
    NodeId param(Parameter& p);

    NodeId apply(Prim kind, std::span<const NodeId> inputs, const Attr& attr = {});
    NodeId apply(Prim kind, std::initializer_list<NodeId> inputs, const Attr& attr = {}) {
        return apply(kind, std::span<const NodeId>(inputs.begin(), inputs.size()), attr);
    }

    NodeId matmul(NodeId a, NodeId b) { return apply(Prim::matmul, {a, b}); }
    NodeId transpose(NodeId a) { return apply(Prim::transpose, {a}); }
    NodeId add(NodeId a, NodeId b) { return apply(Prim::add, {a, b}); }
    NodeId sub(NodeId a, NodeId b) { return apply(Prim::sub, {a, b}); }
    NodeId mul(NodeId a, NodeId b) { return apply(Prim::mul, {a, b}); }
    NodeId add_bias(NodeId x, NodeId bias) { return apply(Prim::add_bias, {x, bias}); }
    NodeId scale_cols(NodeId x, NodeId s) { return apply(Prim::scale_cols, {x, s}); }
    NodeId affine(NodeId x, double a, double b) { return apply(Prim::affine, {x}, Attr{.a = a, .b = b}); }
    NodeId one_minus(NodeId x) { return affine(x, -1.0, 1.0); }
    NodeId tanh(NodeId x) { return apply(Prim::tanh, {x}); }
    NodeId sigmoid(NodeId x) { return apply(Prim::sigmoid, {x}); }
    NodeId softmax(NodeId x, std::size_t axis) { return apply(Prim::softmax, {x}, Attr{.axis = axis}); }
    NodeId concat(std::span<const NodeId> xs) { return apply(Prim::concat, xs); }
    NodeId slice_cols(NodeId x, std::size_t offset, std::size_t width) {
        return apply(Prim::slice_cols, {x}, Attr{.offset = offset, .width = width});
    }
    NodeId reshape(NodeId x, Shape shape) { return apply(Prim::reshape, {x}, Attr{.shape = std::move(shape)}); }
    NodeId max_pieces(NodeId x, std::size_t pieces) { return apply(Prim::max_pieces, {x}, Attr{.width = pieces}); }
    NodeId col_mean(NodeId x) { return apply(Prim::col_mean, {x}); }
    NodeId square(NodeId x) { return apply(Prim::square, {x}); }
    NodeId rsqrt(NodeId x, double eps) { return apply(Prim::rsqrt, {x}, Attr{.b = eps}); }
    NodeId sum(NodeId x) { return apply(Prim::sum, {x}); }
    NodeId mean(NodeId x) { return apply(Prim::mean, {x}); }
    NodeId bce_logits(NodeId logits, NodeId targets) { return apply(Prim::bce_logits, {logits, targets}); }
    NodeId bce_probs(NodeId probs, NodeId targets) { return apply(Prim::bce_probs, {probs, targets}); }
    /// x * W^T for a weight stored as [out, in].
    NodeId linear(NodeId x, NodeId weight) { return matmul(x, transpose(weight)); }

    const Tensor& value(NodeId id) const;
    /// Gradient of the last backward() loss with respect to node `id`
    /// (zeros if `id` does not influence the loss).
    const Tensor& grad(NodeId id) const;

    /// Reverse sweep from a scalar loss. Every node reachable from the loss is
    /// visited exactly once; parameter gradients are accumulated (+=).
    void backward(NodeId loss);

    std::size_t size() const { return nodes_.size(); }
    Prim kind(NodeId id) const;
    std::span<const NodeId> inputs(NodeId id) const { return node(id).inputs; }
    const Attr& attr(NodeId id) const { return node(id).attr; }
    const std::map<std::string, Parameter*>& parameters() const { return params_; }

private:
    enum class Leaf { none, input, param };
    struct Node {
        Prim kind = Prim::sum;
        Leaf leaf = Leaf::none;
        std::vector<NodeId> inputs;
        Attr attr;
        Tensor value;
        Tensor grad;
        Parameter* param = nullptr;
    };

    const Node& node(NodeId id) const;

    std::vector<Node> nodes_;
    std::map<std::string, Parameter*> params_;
};

}  // namespace gmu
