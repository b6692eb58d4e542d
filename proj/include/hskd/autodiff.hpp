#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hskd/tensor.hpp"

namespace hskd {

// A named trainable tensor owned by a model. `grad` is filled by Graph::backward.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    bool trainable = true;

    void zero_grad() { grad = Tensor(value.shape(), 0.0); }
};

enum class Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    AddRowVector,  // [n x m] + [m]
    DivColumn,     // [n x m] / [n x 1]
    MatMul,        // [n x k] . [k x m]
    MatMulBT,      // [n x k] . [m x k]^T
    Relu,
    Exp,
    Log,
    Sqrt,
    Scale,
    Softmax,
    LogSoftmax,
    Sum,
    Mean,
    RowSum,
    RowL2Norm,
};

const char* op_name(Op op);

// Handle to a node of a Graph.
struct Var {
    std::size_t id = 0;
};

class GraphError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// Lazily evaluated reverse-mode graph. Nodes are recorded in creation order,
// which is also the evaluation order, so parents always precede children.
// forward() computes every node reachable from the root; backward() walks the
// same nodes in reverse and accumulates gradients into trainable leaves.
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;
    Graph(Graph&&) = default;
    Graph& operator=(Graph&&) = default;

    // Owned leaf. Trainable leaves receive gradients; frozen ones are skipped.
    Var leaf(Tensor value, bool trainable = true);
    Var constant(Tensor value) { return leaf(std::move(value), false); }
    // Non-owning constant; `value` must outlive the graph.
    Var constant_ref(const Tensor& value);
    // Leaf bound to a model parameter. Gradient is added into p.grad when p.trainable.
    Var parameter(Parameter& p);

    Var add(Var a, Var b) { return binary(Op::Add, a, b); }
    Var sub(Var a, Var b) { return binary(Op::Sub, a, b); }
    Var mul(Var a, Var b) { return binary(Op::Mul, a, b); }
    Var div(Var a, Var b) { return binary(Op::Div, a, b); }
    Var add_row_vector(Var a, Var row) { return binary(Op::AddRowVector, a, row); }
    Var div_column(Var a, Var column) { return binary(Op::DivColumn, a, column); }
    Var matmul(Var a, Var b) { return binary(Op::MatMul, a, b); }
    Var matmul_bt(Var a, Var b) { return binary(Op::MatMulBT, a, b); }
    Var relu(Var a) { return unary(Op::Relu, a); }
    Var exp(Var a) { return unary(Op::Exp, a); }
    Var log(Var a) { return unary(Op::Log, a); }
    Var sqrt(Var a) { return unary(Op::Sqrt, a); }
    Var scale(Var a, double factor);
    Var softmax(Var a) { return unary(Op::Softmax, a); }
    Var log_softmax(Var a) { return unary(Op::LogSoftmax, a); }
    Var sum(Var a) { return unary(Op::Sum, a); }
    Var mean(Var a) { return unary(Op::Mean, a); }
    Var row_sum(Var a) { return unary(Op::RowSum, a); }
    Var row_l2_norm(Var a) { return unary(Op::RowL2Norm, a); }

    const Tensor& forward(Var root);
    void backward(Var loss);

    const Tensor& value(Var v) const;
    const Tensor& grad(Var v) const;
    bool evaluated() const { return evaluated_; }

    // Replaces an owned leaf's value; invalidates the last forward pass.
    void set_leaf_value(Var v, Tensor value);

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Op op = Op::Leaf;
        std::size_t lhs = 0;
        std::size_t rhs = 0;
        int arity = 0;
        double factor = 1.0;
        Tensor owned;
        const Tensor* external = nullptr;
        Parameter* param = nullptr;
        bool trainable = false;
        bool needs_grad = false;
        bool fresh = false;
        bool has_grad = false;
        Tensor grad;
    };

    Var unary(Op op, Var a);
    Var binary(Op op, Var a, Var b);
    void check(Var v) const;
    const Tensor& node_value(const Node& n) const { return n.external ? *n.external : n.owned; }
    void evaluate(Node& n);
    void propagate(const Node& n);

    void invalidate();

    std::vector<Node> nodes_;
    bool evaluated_ = false;
};

// Builds a scalar from a graph leaf seeded with the probe point.
using ScalarFunction = std::function<Var(Graph&, Var)>;

// Max over coordinates of |analytic - numeric| / max(1, |analytic|, |numeric|),
// numeric via central differences with the given step.
double grad_check(const ScalarFunction& f, const Tensor& point, double step = 1e-6);

// Same check over every trainable parameter in `params`, perturbing values in
// place (restored afterwards). `build` must construct a fresh scalar loss.
double grad_check_parameters(std::span<Parameter* const> params, const std::function<Var(Graph&)>& build,
                             double step = 1e-6);

}  // namespace hskd
