#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mrstyle::nn {

class TensorError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Graph node. Ops fill `backward` with a closure that reads this node's
/// grad and accumulates into the parents that require grad.
struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

/// Reference-counted handle to a Node. Copies alias the same storage.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    [[nodiscard]] bool defined() const noexcept { return node_ != nullptr; }
    [[nodiscard]] const Shape& shape() const { return node().shape; }
    [[nodiscard]] int rank() const { return static_cast<int>(node().shape.size()); }
    [[nodiscard]] int dim(int axis) const;
    [[nodiscard]] std::size_t numel() const { return node().data.size(); }

    [[nodiscard]] std::span<double> data() { return node().data; }
    [[nodiscard]] std::span<const double> data() const { return node().data; }
    /// Empty until a backward pass reaches this tensor.
    [[nodiscard]] std::span<const double> grad() const { return node().grad; }
    [[nodiscard]] double item() const;

    [[nodiscard]] bool requires_grad() const { return node().requires_grad; }
    void set_requires_grad(bool flag) { node().requires_grad = flag; }
    void zero_grad();

    /// Fresh leaf with a copy of the data and no history.
    [[nodiscard]] Tensor detach() const;

    /// Reverse-mode sweep from this scalar. Throws for non-scalars.
    void backward() const;

    [[nodiscard]] Node& node() const {
        if (!node_) throw TensorError("use of an undefined tensor");
        return *node_;
    }
    [[nodiscard]] const std::shared_ptr<Node>& node_ptr() const { return node_; }
    [[nodiscard]] bool same_storage(const Tensor& other) const { return node_ == other.node_; }

private:
    std::shared_ptr<Node> node_;
};

/// True unless a NoGradGuard is alive on this thread.
bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Output node for an op over `inputs`. The node tracks gradients only when
/// grad mode is on and some input requires grad; `backward` is attached
/// only in that case.
std::shared_ptr<Node> make_result(Shape shape, std::initializer_list<const Tensor*> inputs);
std::shared_ptr<Node> make_result(Shape shape, const std::vector<Tensor>& inputs);

}  // namespace mrstyle::nn
