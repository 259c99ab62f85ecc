#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "tlm/tensor.hpp"

namespace tlm {

template <typename T>
class Graph;

/// Handle to a node on a Graph tape. Cheap to copy; valid as long as the
/// graph is alive.
template <typename T>
class Var {
public:
    Var() = default;
    Var(Graph<T>* g, size_t index) : graph_(g), index_(index) {}

    const Tensor<T>& value() const;
    /// Gradient accumulated by Graph::backward(); zeros if the node was
    /// never reached.
    const Tensor<T>& grad() const;

    const std::vector<size_t>& shape() const { return value().shape; }
    size_t index() const { return index_; }
    bool valid() const { return graph_ != nullptr; }
    Graph<T>* graph() const { return graph_; }

private:
    Graph<T>* graph_ = nullptr;
    size_t index_ = 0;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, which is a
/// topological order by construction; backward() replays them in reverse.
/// One Graph instance serves one forward/backward pass and is then reset
/// or discarded.
template <typename T>
class Graph {
public:
    struct Node {
        Tensor<T> owned;                 // op outputs
        Tensor<T>* external = nullptr;   // leaves bound to persistent parameters
        Tensor<T> grad;                  // lazily allocated
        bool requires_grad = false;
        std::function<void(Graph&)> backprop;  // pulls this node's grad into its inputs

        const Tensor<T>& value() const { return external ? *external : owned; }
    };

    explicit Graph(bool check_finite = true) : check_finite_(check_finite) {}

    /// Leaf bound to external parameter storage (no copy). The caller keeps
    /// the tensor alive for the lifetime of the graph.
    Var<T> parameter(Tensor<T>& t) {
        Node n;
        n.external = &t;
        n.requires_grad = true;
        nodes_.push_back(std::move(n));
        return Var<T>(this, nodes_.size() - 1);
    }

    /// Leaf with no gradient (inputs, masks).
    Var<T> constant(Tensor<T> t) {
        Node n;
        n.owned = std::move(t);
        n.requires_grad = false;
        nodes_.push_back(std::move(n));
        return Var<T>(this, nodes_.size() - 1);
    }

    /// Record an op output. `backprop` must accumulate into input grads via
    /// grad_ref(); it runs only when the output itself received gradient.
    Var<T> record(Tensor<T> out, bool requires_grad, std::function<void(Graph&)> backprop,
                  const char* op_name) {
        if (check_finite_ && !out.all_finite())
            throw NumericError(std::string("non-finite values produced by op '") + op_name + "'");
        Node n;
        n.owned = std::move(out);
        n.requires_grad = requires_grad;
        if (requires_grad) n.backprop = std::move(backprop);
        nodes_.push_back(std::move(n));
        return Var<T>(this, nodes_.size() - 1);
    }

    const Tensor<T>& value(size_t i) const { return nodes_.at(i).value(); }

    bool requires_grad(size_t i) const { return nodes_.at(i).requires_grad; }

    /// Gradient buffer for node i, allocated (zeroed) on first touch.
    Tensor<T>& grad_ref(size_t i) {
        Node& n = nodes_.at(i);
        if (n.grad.size() == 0) n.grad = Tensor<T>(n.value().shape, T(0));
        return n.grad;
    }

    const Tensor<T>& grad(size_t i) {
        return grad_ref(i);  // zeros if unreached
    }

    /// Reverse sweep from a scalar loss. Gradients of all reachable
    /// grad-requiring nodes are accumulated; everything else stays zero.
    void backward(const Var<T>& loss) {
        if (loss.graph() != this) throw std::invalid_argument("loss belongs to a different graph");
        const Tensor<T>& lv = value(loss.index());
        if (lv.size() != 1) throw std::invalid_argument("backward requires a scalar loss, got shape " + lv.shape_str());
        grad_ref(loss.index()).data[0] = T(1);
        for (size_t i = loss.index() + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.requires_grad || !n.backprop) continue;
            if (n.grad.size() == 0) continue;  // unreached
            n.backprop(*this);
        }
        if (check_finite_) {
            for (Node& n : nodes_)
                if (n.grad.size() != 0 && !n.grad.all_finite())
                    throw NumericError("non-finite gradient produced during backward");
        }
    }

    size_t node_count() const { return nodes_.size(); }
    bool check_finite() const { return check_finite_; }
    void set_check_finite(bool v) { check_finite_ = v; }

    void clear() { nodes_.clear(); }

private:
    std::vector<Node> nodes_;
    bool check_finite_ = true;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
    return graph_->value(index_);
}

template <typename T>
const Tensor<T>& Var<T>::grad() const {
    return graph_->grad(index_);
}

}  // namespace tlm
