#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <vector>

#include "kwsrl/nn/tensor.hpp"

namespace kwsrl::nn {

template <typename T>
class Graph;

// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
template <typename T>
struct Var {
    Graph<T>* graph = nullptr;
    std::size_t id = 0;

    const Tensor<T>& value() const { return graph->value(*this); }
    const Shape& shape() const { return value().shape(); }
};

// Tape of tensor-level operations for reverse-mode differentiation.
//
// Nodes are appended in evaluation order, so reverse creation order is a
// valid topological order and backward() visits each node once. Gradients
// from several consumers of one node are summed. Parameter leaves write
// their gradient straight into a caller-owned sink tensor, which lets one
// sink collect gradients over many graphs (e.g. every step of an episode).
//
// Node storage never moves, so references returned by value() stay valid
// for the graph's lifetime. A Graph is single-threaded; separate graphs
// are independent.
template <typename T>
class Graph {
public:
    // Receives the node's own value and upstream gradient; adds into the
    // gradients of the node's inputs.
    using BackwardFn =
        std::function<void(Graph&, const Tensor<T>& out, const Tensor<T>& grad_out)>;

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var<T> constant(Tensor<T> value)
    {
        Node n;
        n.owned = std::move(value);
        return push(std::move(n));
    }

    // Leaf bound to an external tensor that must outlive the graph. With a
    // null sink the parameter is treated as a constant.
    Var<T> param(const Tensor<T>& value, Tensor<T>* grad_sink)
    {
        Node n;
        n.ref = &value;
        n.sink = grad_sink;
        n.requires_grad = grad_sink != nullptr;
        if (grad_sink && grad_sink->shape() != value.shape())
            throw ShapeError("gradient sink shape " + shape_string(grad_sink->shape()) +
                             " does not match parameter " + shape_string(value.shape()));
        return push(std::move(n));
    }

    // Records an op result. The backward closure is kept only if some input
    // needs a gradient.
    Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn backward)
    {
        Node n;
        n.owned = std::move(value);
        for (const auto& in : inputs) n.requires_grad = n.requires_grad || nodes_[in.id].requires_grad;
        if (n.requires_grad) n.backward = std::move(backward);
        return push(std::move(n));
    }

    const Tensor<T>& value(Var<T> v) const { return nodes_[v.id].get(); }

    bool requires_grad(Var<T> v) const { return nodes_[v.id].requires_grad; }

    // Gradient accumulator of a node, allocated as zeros on first use.
    Tensor<T>& grad(Var<T> v)
    {
        Node& n = nodes_[v.id];
        if (n.sink) return *n.sink;
        if (n.grad.shape() != n.get().shape()) n.grad = Tensor<T>(n.get().shape());
        return n.grad;
    }

    // Propagates d(root)/d(node) to every node reachable from root; root must
    // hold a single element. `seed` scales the whole pass.
    void backward(Var<T> root, T seed = T{1})
    {
        if (value(root).size() != 1)
            throw ShapeError("backward() needs a scalar root, got " + shape_string(value(root).shape()));
        if (!nodes_[root.id].requires_grad) return;
        grad(root)[0] += seed;
        for (std::size_t i = root.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.backward || n.grad.empty()) continue;
            n.backward(*this, n.get(), n.grad);
        }
    }

    std::size_t size() const noexcept { return nodes_.size(); }

private:
    struct Node {
        Tensor<T> owned;
        const Tensor<T>* ref = nullptr;
        Tensor<T>* sink = nullptr;
        Tensor<T> grad;
        BackwardFn backward;
        bool requires_grad = false;

        const Tensor<T>& get() const { return ref ? *ref : owned; }
    };

    Var<T> push(Node n)
    {
        nodes_.push_back(std::move(n));
        return Var<T>{this, nodes_.size() - 1};
    }

    std::deque<Node> nodes_;
};

}  // namespace kwsrl::nn
