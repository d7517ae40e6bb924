#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "hdlab/tensor.hpp"

namespace hdlab::ad {

using ValueId = int;

enum class Op {
    Leaf,
    Const,
    Add,
    Sub,
    Mul,
    Div,
    Max,
    MatMul,
    TimeEmbed,
    Silu,
    Relu,
    Exp,
    Sqrt,
    RowNorm,
    Sum,
    Mean,
    StopGrad,
};

struct Node {
    Op op;
    ValueId a = -1;
    ValueId b = -1;
    std::vector<std::size_t> shape;
    std::shared_ptr<const Tensor> payload;  // Const value, shared not copied
    int leaf_index = -1;
    std::vector<double> freqs;  // TimeEmbed angular frequencies
    double embed_scale = 1.0;
};

// An append-only, topologically ordered record of primitive operations.
// Nodes are immutable once added; evaluation never mutates the record, so a
// record can be replayed any number of times and on any thread.
class Graph {
public:
    ValueId leaf(std::vector<std::size_t> shape, std::string name);
    ValueId constant(Tensor value);
    ValueId constant(std::shared_ptr<const Tensor> value);
    ValueId constant_scalar(double v);

    ValueId add(ValueId a, ValueId b);
    ValueId sub(ValueId a, ValueId b);
    ValueId mul(ValueId a, ValueId b);
    ValueId div(ValueId a, ValueId b);
    ValueId max(ValueId a, ValueId b);
    ValueId matmul(ValueId a, ValueId b);
    // Sinusoidal features of a column of scalars: [m,1] -> [m,dim]. The input
    // is multiplied by `scale` first; frequencies follow the usual geometric
    // schedule over `dim/2` sin/cos pairs.
    ValueId time_embed(ValueId t, int dim, double scale = 1000.0);
    ValueId silu(ValueId a);
    ValueId relu(ValueId a);
    ValueId exp(ValueId a);
    ValueId sqrt(ValueId a);
    ValueId row_norm(ValueId a);
    ValueId sum(ValueId a);
    ValueId mean(ValueId a);
    // Identity value whose gradient and tangent are both zero.
    ValueId stop_gradient(ValueId a);

    // Conveniences composed from the primitives above.
    ValueId scale(ValueId a, double s);
    ValueId add_scalar(ValueId a, double s);
    ValueId square(ValueId a);
    ValueId neg(ValueId a);

    std::size_t size() const { return nodes_.size(); }
    std::size_t leaf_count() const { return leaf_names_.size(); }
    const Node& node(ValueId id) const { return nodes_[static_cast<std::size_t>(id)]; }
    const std::vector<std::size_t>& shape(ValueId id) const { return node(id).shape; }
    std::size_t out_rows(ValueId id) const;
    std::size_t out_cols(ValueId id) const;
    const std::string& leaf_name(int leaf_index) const { return leaf_names_[leaf_index]; }

private:
    ValueId push(Node n);
    ValueId binary(Op op, ValueId a, ValueId b, const char* name);
    ValueId unary(Op op, ValueId a);
    void check_id(ValueId id, const char* ctx) const;

    std::vector<Node> nodes_;
    std::vector<std::string> leaf_names_;
};

// Forward pass results: one value per node, in record order. Const nodes are
// served from the record's shared payloads rather than copied.
class Evaluation {
public:
    Evaluation(const Graph& g, std::vector<Tensor> values)
        : graph_(&g), values_(std::move(values)) {}
    const Tensor& at(ValueId id) const;
    const Graph& graph() const { return *graph_; }

private:
    const Graph* graph_;
    std::vector<Tensor> values_;
};

// Evaluates every node. Leaves are bound positionally by leaf index; shapes
// must match the declared leaf shapes. Deterministic: identical leaves give
// bit-identical values.
Evaluation forward(const Graph& g, std::span<const Tensor> leaves);

// Reverse-mode gradients of seed·output with respect to every leaf, using
// the values of a prior forward pass. The seed must match the output shape.
std::vector<Tensor> backward(const Graph& g, const Evaluation& eval, ValueId output,
                             const Tensor& seed);

struct JvpResult {
    Tensor value;
    Tensor tangent;
};

// Forward-mode directional derivative of `output` along per-leaf tangents,
// implemented dual-number style over the same primitive set and entirely
// independent of the reverse pass. Empty tensors mean a zero tangent.
JvpResult jvp(const Graph& g, std::span<const Tensor> leaves, std::span<const Tensor> tangents,
              ValueId output);

// Helper to place a tensor at a leaf's position in a binding vector.
void set_leaf(std::vector<Tensor>& bindings, const Graph& g, ValueId leaf_id, Tensor value);

}  // namespace hdlab::ad
