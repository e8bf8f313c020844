#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "gsd/core/types.hpp"

namespace gsd {

class Tensor;

namespace detail {

struct Node;

struct TensorImpl {
    std::vector<int64_t> shape;
    std::vector<real> data;
    std::vector<real> grad;  // empty until a backward pass touches this tensor
    bool requires_grad = false;
    std::string name;                // set for named parameters
    std::shared_ptr<Node> producer;  // op that created this tensor; null for leaves
};

// One recorded op. Output impls own their producer node; the node holds its
// inputs strongly (keeps the upstream graph alive) and its outputs weakly
// (no ownership cycle). `seq` is a monotone creation index: inputs are always
// created before outputs, so descending-seq order is a valid reverse
// topological order.
struct Node {
    uint64_t seq = 0;
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::vector<std::weak_ptr<TensorImpl>> outputs;
    std::function<void()> backward;
};

inline uint64_t next_node_seq() {
    static std::atomic<uint64_t> counter{0};
    return counter.fetch_add(1, std::memory_order_relaxed);
}

inline void ensure_grad(TensorImpl& t) {
    if (t.grad.size() != t.data.size()) t.grad.assign(t.data.size(), real(0));
}

}  // namespace detail

// Dense row-major tensor of `real` with reverse-mode autodiff. Value
// semantics over a shared immutable-after-construction payload; parameter
// tensors are mutated in place only between passes (optimizer step, density
// control), never while a graph referencing them is live.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(std::vector<int64_t> shape) {
        auto impl = std::make_shared<detail::TensorImpl>();
        const int64_t n = numel_of(shape);
        impl->shape = std::move(shape);
        impl->data.assign(static_cast<size_t>(n), real(0));
        return Tensor(std::move(impl));
    }

    static Tensor full(std::vector<int64_t> shape, real value) {
        Tensor t = zeros(std::move(shape));
        std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
        return t;
    }

    static Tensor scalar(real value) { return full({1}, value); }

    static Tensor from_data(std::vector<int64_t> shape, std::vector<real> data) {
        const int64_t n = numel_of(shape);
        if (n != static_cast<int64_t>(data.size()))
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape product " + std::to_string(n));
        auto impl = std::make_shared<detail::TensorImpl>();
        impl->shape = std::move(shape);
        impl->data = std::move(data);
        return Tensor(std::move(impl));
    }

    bool defined() const { return impl_ != nullptr; }

    const std::vector<int64_t>& shape() const { return impl_->shape; }
    int64_t dim(size_t i) const { return impl_->shape[i]; }
    size_t rank() const { return impl_->shape.size(); }
    int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }

    std::span<const real> data() const { return impl_->data; }
    std::span<real> mutable_data() { return impl_->data; }
    real item() const {
        if (numel() != 1) throw ContractError("item() called on non-scalar tensor");
        return impl_->data[0];
    }
    real at(int64_t i) const { return impl_->data[static_cast<size_t>(i)]; }

    // Gradient populated by the latest backward pass (empty span before one).
    std::span<const real> grad() const { return impl_->grad; }
    std::span<real> mutable_grad() { return impl_->grad; }
    void zero_grad() { impl_->grad.assign(impl_->data.size(), real(0)); }

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool v) {
        if (v && impl_->producer)
            throw ContractError("requires_grad can only be enabled on leaf tensors");
        impl_->requires_grad = v;
        return *this;
    }

    const std::string& name() const { return impl_->name; }
    Tensor& set_name(std::string n) {
        impl_->name = std::move(n);
        return *this;
    }

    bool is_leaf() const { return impl_->producer == nullptr; }

    // Same data buffer, detached from the graph (used to freeze a subgraph).
    Tensor detached() const {
        auto impl = std::make_shared<detail::TensorImpl>();
        impl->shape = impl_->shape;
        impl->data = impl_->data;
        return Tensor(std::move(impl));
    }

    std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }

    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

    static int64_t numel_of(const std::vector<int64_t>& shape) {
        int64_t n = 1;
        for (int64_t d : shape) {
            if (d < 0) throw ShapeError("negative dimension in tensor shape");
            n *= d;
        }
        return n;
    }

  private:
    std::shared_ptr<detail::TensorImpl> impl_;
};

namespace detail {

// Registers a node for an op with the given inputs/outputs. The caller then
// assigns node->backward. Returns null (and records nothing) when no input
// requires grad, so pure value computation carries no tape overhead.
inline std::shared_ptr<Node> make_node(std::initializer_list<Tensor> inputs,
                                       std::initializer_list<Tensor> outputs) {
    bool needs = false;
    for (const auto& t : inputs) needs = needs || t.requires_grad();
    if (!needs) return nullptr;
    auto node = std::make_shared<Node>();
    node->seq = next_node_seq();
    for (const auto& t : inputs) node->inputs.push_back(t.impl());
    for (const auto& t : outputs) {
        node->outputs.push_back(t.impl());
        t.impl()->producer = node;
        t.impl()->requires_grad = true;
    }
    return node;
}

// Output gradient of `impl`, or null if that output is unused / has no grad.
inline const std::vector<real>* out_grad(const std::weak_ptr<TensorImpl>& w) {
    auto p = w.lock();
    if (!p || p->grad.size() != p->data.size()) return nullptr;
    return &p->grad;
}

}  // namespace detail

// Snapshot of which learnable leaves a backward pass reached; gradients for
// every learnable scalar live in the leaves' grad buffers. Parameters not
// reached by the pass report zero gradients.
class ParamTape {
  public:
    explicit ParamTape(std::vector<Tensor> leaves) : leaves_(std::move(leaves)) {
        for (const auto& t : leaves_) index_.insert(t.impl().get());
    }

    const std::vector<Tensor>& parameters() const { return leaves_; }

    bool reached(const Tensor& param) const { return index_.count(param.impl().get()) != 0; }

    // Gradient of `param`; zero vector when the parameter was unreachable.
    std::vector<real> grad_of(const Tensor& param) const {
        if (reached(param) && param.grad().size() == static_cast<size_t>(param.numel()))
            return {param.grad().begin(), param.grad().end()};
        return std::vector<real>(static_cast<size_t>(param.numel()), real(0));
    }

  private:
    std::vector<Tensor> leaves_;
    std::unordered_set<const detail::TensorImpl*> index_;
};

// Reverse-mode pass from a scalar loss. Zeroes the grads of every tensor in
// the reachable graph, seeds d(loss)/d(loss) = 1, then runs node backward
// functions in reverse creation order. Single-threaded per pass.
inline ParamTape backward(const Tensor& loss) {
    if (loss.numel() != 1) throw ContractError("backward() requires a scalar loss tensor");

    // Collect the reachable graph.
    std::vector<detail::Node*> nodes;
    std::unordered_set<detail::Node*> seen;
    std::vector<std::shared_ptr<detail::TensorImpl>> impls;
    std::unordered_set<detail::TensorImpl*> seen_impl;

    std::vector<std::shared_ptr<detail::TensorImpl>> stack{loss.impl()};
    while (!stack.empty()) {
        auto impl = stack.back();
        stack.pop_back();
        if (!impl || seen_impl.count(impl.get())) continue;
        seen_impl.insert(impl.get());
        impls.push_back(impl);
        detail::Node* node = impl->producer.get();
        if (node && !seen.count(node)) {
            seen.insert(node);
            nodes.push_back(node);
            for (const auto& in : node->inputs) stack.push_back(in);
            // Sibling outputs of multi-output nodes join the pass as well.
            for (const auto& w : node->outputs)
                if (auto p = w.lock()) stack.push_back(p);
        }
    }

    std::sort(nodes.begin(), nodes.end(),
              [](const detail::Node* a, const detail::Node* b) { return a->seq > b->seq; });

    for (const auto& impl : impls) impl->grad.assign(impl->data.size(), real(0));
    loss.impl()->grad[0] = real(1);

    for (detail::Node* node : nodes) node->backward();

    std::vector<Tensor> leaves;
    for (const auto& impl : impls)
        if (impl->requires_grad && impl->producer == nullptr) leaves.push_back(Tensor(impl));
    return ParamTape(std::move(leaves));
}

}  // namespace gsd
