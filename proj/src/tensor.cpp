#include "mrstyle/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace mrstyle::nn {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw TensorError("negative dimension in shape " + shape_string(shape));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string shape_string(const Shape& shape) {
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(shape[i]);
    }
    return s + ")";
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    auto node = std::make_shared<Node>();
    node->data.assign(shape_numel(shape), value);
    node->shape = std::move(shape);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    if (values.size() != shape_numel(shape))
        throw TensorError("tensor data length " + std::to_string(values.size()) + " does not match shape " +
                          shape_string(shape));
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

int Tensor::dim(int axis) const {
    const auto& s = shape();
    if (axis < 0) axis += static_cast<int>(s.size());
    if (axis < 0 || axis >= static_cast<int>(s.size())) throw TensorError("axis out of range");
    return s[static_cast<std::size_t>(axis)];
}

double Tensor::item() const {
    if (numel() != 1) throw TensorError("item() on a tensor of shape " + shape_string(shape()));
    return node().data[0];
}

void Tensor::zero_grad() {
    auto& n = node();
    std::fill(n.grad.begin(), n.grad.end(), 0.0);
}

Tensor Tensor::detach() const { return from(shape(), node().data, false); }

void Tensor::backward() const {
    Node& root = node();
    if (root.data.size() != 1) throw TensorError("backward() needs a scalar loss, got shape " + shape_string(root.shape));
    if (!root.requires_grad) return;

    // Iterative post-order DFS gives a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{&root, 0}};
    visited.insert(&root);
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node* p = n->parents[next++].get();
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    for (Node* n : order) n->ensure_grad();
    root.grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward) (*it)->backward(**it);
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

namespace {
template <typename Range>
std::shared_ptr<Node> make_result_impl(Shape shape, const Range& inputs) {
    auto node = std::make_shared<Node>();
    node->data.assign(shape_numel(shape), 0.0);
    node->shape = std::move(shape);
    if (!g_grad_enabled) return node;
    for (const auto& t : inputs) {
        const Tensor& tensor = *t;
        if (tensor.requires_grad()) node->requires_grad = true;
    }
    if (node->requires_grad)
        for (const auto& t : inputs) node->parents.push_back(t->node_ptr());
    return node;
}
}  // namespace

std::shared_ptr<Node> make_result(Shape shape, std::initializer_list<const Tensor*> inputs) {
    return make_result_impl(std::move(shape), inputs);
}

std::shared_ptr<Node> make_result(Shape shape, const std::vector<Tensor>& inputs) {
    std::vector<const Tensor*> ptrs;
    ptrs.reserve(inputs.size());
    for (const auto& t : inputs) ptrs.push_back(&t);
    return make_result_impl(std::move(shape), ptrs);
}

}  // namespace mrstyle::nn
