#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <optional>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "touchformer/tensor.hpp"

namespace touchformer {

using NodeId = std::size_t;

template <typename Scalar>
class Tape;

// Handle to a value recorded on a tape. Cheap to copy; only valid while the
// owning tape is alive.
template <typename Scalar>
class Var {
   public:
    Var() = default;
    Var(Tape<Scalar>* tape, NodeId id) : tape_(tape), id_(id) {}

    const Tensor<Scalar>& value() const { return tape_->value(id_); }
    const Shape& shape() const { return value().shape(); }
    const Matrix<Scalar>& matrix() const { return value().matrix(); }
    Tape<Scalar>& tape() const { return *tape_; }
    NodeId id() const noexcept { return id_; }
    bool valid() const noexcept { return tape_ != nullptr; }
    bool requires_grad() const { return tape_->requires_grad(id_); }

   private:
    Tape<Scalar>* tape_ = nullptr;
    NodeId id_ = 0;
};

// What a recorded op sees when the tape runs backward. `input_grads[k]` is
// null when input k does not need a gradient; otherwise the op accumulates
// (+=) its contribution into it.
template <typename Scalar>
struct BackwardContext {
    const Matrix<Scalar>& grad_out;
    const Tensor<Scalar>& output;
    std::vector<const Tensor<Scalar>*> inputs;
    std::vector<Matrix<Scalar>*> input_grads;

    const Matrix<Scalar>& in(std::size_t k) const { return inputs[k]->matrix(); }
    bool needs(std::size_t k) const { return input_grads[k] != nullptr; }
    Matrix<Scalar>& grad(std::size_t k) const { return *input_grads[k]; }
};

// Define-by-run reverse-mode tape. Nodes are appended in execution order, so
// the node list is always topologically sorted.
template <typename Scalar>
class Tape {
   public:
    using BackwardFn = std::function<void(const BackwardContext<Scalar>&)>;

    explicit Tape(bool tracking = true) : tracking_(tracking) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool tracking() const noexcept { return tracking_; }
    std::size_t size() const noexcept { return nodes_.size(); }

    Var<Scalar> constant(Tensor<Scalar> value) { return push("constant", std::move(value), {}, nullptr, false); }

    Var<Scalar> variable(Tensor<Scalar> value) {
        return push("variable", std::move(value), {}, nullptr, tracking_);
    }

    // Leaf bound to an external parameter tensor. Repeated calls with the same
    // tensor return the same node so gradients from every use accumulate.
    Var<Scalar> parameter(const Tensor<Scalar>& param) {
        if (auto it = param_nodes_.find(&param); it != param_nodes_.end()) return Var<Scalar>(this, it->second);
        Var<Scalar> v = push("parameter", param, {}, nullptr, tracking_);
        param_nodes_.emplace(&param, v.id());
        return v;
    }

    // Node id bound to `param`, if the parameter was used on this tape.
    std::optional<NodeId> parameter_node(const Tensor<Scalar>& param) const {
        if (auto it = param_nodes_.find(&param); it != param_nodes_.end()) return it->second;
        return std::nullopt;
    }

    Var<Scalar> record(std::string_view op, Tensor<Scalar> value, std::initializer_list<Var<Scalar>> inputs,
                       BackwardFn fn) {
        return record(op, std::move(value), std::vector<Var<Scalar>>(inputs), std::move(fn));
    }

    Var<Scalar> record(std::string_view op, Tensor<Scalar> value, const std::vector<Var<Scalar>>& inputs,
                       BackwardFn fn) {
        bool needs_grad = false;
        std::vector<NodeId> ids;
        ids.reserve(inputs.size());
        for (const auto& v : inputs) {
            if (&v.tape() != this) throw ValidationError(std::string(op) + ": input recorded on a different tape");
            ids.push_back(v.id());
            needs_grad = needs_grad || nodes_[v.id()].requires_grad;
        }
        needs_grad = needs_grad && tracking_;
        return push(op, std::move(value), std::move(ids), needs_grad ? std::move(fn) : nullptr, needs_grad);
    }

    const Tensor<Scalar>& value(NodeId id) const { return nodes_.at(id).value; }
    bool requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }
    std::string_view op(NodeId id) const { return nodes_.at(id).op; }
    const std::vector<NodeId>& inputs(NodeId id) const { return nodes_.at(id).inputs; }

    // Reverse pass from a scalar root; d(root)/d(root) = 1.
    void backward(const Var<Scalar>& root) {
        if (root.value().size() != 1) {
            throw ShapeError("backward", "root must be a scalar, got shape " + to_string(root.shape()));
        }
        backward({{root, Matrix<Scalar>::Ones(1, 1)}});
    }

    // Vector-Jacobian product: seeds give the upstream gradient of each root.
    void backward(const std::vector<std::pair<Var<Scalar>, Matrix<Scalar>>>& seeds) {
        if (!tracking_) throw ValidationError("backward: tape was not tracking gradients");
        grads_.assign(nodes_.size(), Matrix<Scalar>());
        has_grad_.assign(nodes_.size(), false);
        NodeId last = 0;
        for (const auto& [root, seed] : seeds) {
            const auto& v = root.value();
            if (seed.rows() != v.rows() || seed.cols() != v.cols()) {
                throw ShapeError("backward", v.shape(), Shape{seed.rows(), seed.cols()});
            }
            accumulate_slot(root.id()) += seed;
            last = std::max(last, root.id());
        }
        std::vector<const Tensor<Scalar>*> in_values;
        std::vector<Matrix<Scalar>*> in_grads;
        for (NodeId i = last + 1; i-- > 0;) {
            Node& node = nodes_[i];
            if (!has_grad_[i] || !node.backward) continue;
            in_values.clear();
            in_grads.clear();
            for (NodeId in : node.inputs) {
                in_values.push_back(&nodes_[in].value);
                in_grads.push_back(nodes_[in].requires_grad ? &accumulate_slot(in) : nullptr);
            }
            BackwardContext<Scalar> ctx{grads_[i], node.value, in_values, in_grads};
            node.backward(ctx);
        }
    }

    bool has_gradient(NodeId id) const { return id < has_grad_.size() && has_grad_[id]; }

    // Gradient of the last backward pass w.r.t. `v`; zeros if unreachable.
    Tensor<Scalar> gradient(const Var<Scalar>& v) const { return gradient(v.id()); }

    Tensor<Scalar> gradient(NodeId id) const {
        const Tensor<Scalar>& val = value(id);
        if (!has_gradient(id)) return Tensor<Scalar>(val.shape());
        return Tensor<Scalar>(val.shape(), grads_[id]);
    }

    // Gradient w.r.t. a bound parameter tensor; zeros if it was never used.
    Tensor<Scalar> parameter_gradient(const Tensor<Scalar>& param) const {
        if (auto id = parameter_node(param)) return gradient(*id);
        return Tensor<Scalar>(param.shape());
    }

   private:
    struct Node {
        std::string_view op;
        Tensor<Scalar> value;
        std::vector<NodeId> inputs;
        BackwardFn backward;
        bool requires_grad = false;
    };

    Var<Scalar> push(std::string_view op, Tensor<Scalar> value, std::vector<NodeId> inputs, BackwardFn fn,
                     bool requires_grad) {
        nodes_.push_back(Node{op, std::move(value), std::move(inputs), std::move(fn), requires_grad});
        return Var<Scalar>(this, nodes_.size() - 1);
    }

    Matrix<Scalar>& accumulate_slot(NodeId id) {
        if (!has_grad_[id]) {
            const auto& v = nodes_[id].value;
            grads_[id] = Matrix<Scalar>::Zero(v.rows(), v.cols());
            has_grad_[id] = true;
        }
        return grads_[id];
    }

    bool tracking_;
    std::deque<Node> nodes_;
    std::unordered_map<const Tensor<Scalar>*, NodeId> param_nodes_;
    std::vector<Matrix<Scalar>> grads_;
    std::vector<bool> has_grad_;
};

}  // namespace touchformer
