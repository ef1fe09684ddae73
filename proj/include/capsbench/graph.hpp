#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "capsbench/tensor.hpp"

namespace capsbench {

// A trainable value with its accumulated gradient.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;

    Parameter() = default;
    Parameter(std::string n, Tensor v)
        : name(std::move(n)), value(std::move(v)), grad(value.shape, 0) {}

    void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), real(0)); }
};

class Graph;
using NodeId = int;
using BackFn = std::function<void(Graph&, NodeId)>;

// Tape of executed primitive ops. Nodes are appended in execution order, so
// the tape is topologically sorted by construction; backward() walks it once
// in reverse.
class Graph {
  public:
    NodeId input(Tensor v, bool needs_grad = false) {
        nodes_.push_back(Node{std::move(v), {}, nullptr, nullptr, {}, nullptr, needs_grad});
        return static_cast<NodeId>(nodes_.size()) - 1;
    }

    NodeId param(Parameter* p) {
        nodes_.push_back(Node{Tensor{}, {}, &p->value, p, {}, nullptr, true});
        return static_cast<NodeId>(nodes_.size()) - 1;
    }

    // Read-only view of a parameter's value; no gradient flows.
    NodeId const_param(const Parameter* p) {
        nodes_.push_back(Node{Tensor{}, {}, &p->value, nullptr, {}, nullptr, false});
        return static_cast<NodeId>(nodes_.size()) - 1;
    }

    NodeId make(Tensor out, std::vector<NodeId> parents, BackFn back) {
        bool needs = false;
        for (NodeId pid : parents) needs = needs || nodes_[static_cast<size_t>(pid)].needs_grad;
        nodes_.push_back(Node{std::move(out), std::move(parents), nullptr, nullptr, {},
                              std::move(back), needs});
        return static_cast<NodeId>(nodes_.size()) - 1;
    }

    const Tensor& value(NodeId id) const {
        const Node& n = nodes_[static_cast<size_t>(id)];
        return n.vref ? *n.vref : n.value;
    }

    bool needs_grad(NodeId id) const { return nodes_[static_cast<size_t>(id)].needs_grad; }

    // Gradient buffer of a node, allocated on first touch. Backward rules add
    // into this.
    Tensor& grad(NodeId id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (n.grad.size() == 0) n.grad = Tensor(value(id).shape, 0);
        return n.grad;
    }
    bool has_grad(NodeId id) const { return nodes_[static_cast<size_t>(id)].grad.size() != 0; }

    const std::vector<NodeId>& parents(NodeId id) const {
        return nodes_[static_cast<size_t>(id)].parents;
    }

    // Reverse pass from a scalar loss. Gradients of bound parameters are
    // accumulated into Parameter::grad (not overwritten), so per-sample
    // graphs in a batch can share parameter objects.
    void backward(NodeId loss) {
        if (!value(loss).is_scalar()) throw ShapeError("backward requires a scalar loss");
        grad(loss)[0] = 1;
        for (NodeId id = static_cast<NodeId>(nodes_.size()) - 1; id >= 0; --id) {
            Node& n = nodes_[static_cast<size_t>(id)];
            if (!n.needs_grad || n.grad.size() == 0) continue;
            if (n.back) n.back(*this, id);
            if (n.bound) {
                for (long i = 0; i < n.grad.size(); ++i) n.bound->grad[i] += n.grad[i];
            }
        }
    }

    size_t node_count() const { return nodes_.size(); }

  private:
    struct Node {
        Tensor value;
        std::vector<NodeId> parents;
        const Tensor* vref = nullptr;
        Parameter* bound = nullptr;
        Tensor grad;
        BackFn back;
        bool needs_grad = false;
    };
    std::vector<Node> nodes_;
};

}  // namespace capsbench
