#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "hcft/error.hpp"

namespace hcft {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

// One node of the recorded forward graph. Nodes form a DAG through `inputs`;
// recording order is topological by construction (eager execution), which is
// what the backward pass relies on.
template <typename T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad; // sized lazily, same extent as value
    bool requires_grad = false;
    bool leaf = true;
    bool spent = false; // a backward pass already consumed this node
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward_fn; // scatters node.grad into inputs

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    }
};

} // namespace detail

// Dense tensor handle with optional participation in the autodiff tape.
// Copying a Tensor copies the handle, not the storage.
template <typename T>
class Tensor {
public:
    using Node = detail::Node<T>;

    Tensor() = default;

    // Owning constructor; ShapeMismatch when the value count disagrees with
    // the shape or any extent is zero.
    static Tensor create(Shape shape, std::vector<T> values);
    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, T fill);
    static Tensor scalar(T v) { return create({1}, {v}); }
    static Tensor uniform(Shape shape, T lo, T hi, std::mt19937_64& rng);
    static Tensor randn(Shape shape, T stddev, std::mt19937_64& rng);

    bool defined() const { return static_cast<bool>(n_); }
    const Shape& shape() const { return n_->shape; }
    std::size_t rank() const { return n_->shape.size(); }
    std::size_t dim(std::size_t i) const { return n_->shape[i]; }
    std::size_t size() const { return n_->value.size(); }

    const std::vector<T>& values() const { return n_->value; }
    // Mutable access to leaf storage (parameter updates, in-place init).
    // Mutating a non-leaf invalidates recorded gradients, so it is rejected.
    std::vector<T>& values_mut();

    bool requires_grad() const { return n_->requires_grad; }
    Tensor& set_requires_grad(bool on);

    bool has_grad() const { return n_->grad.size() == n_->value.size(); }
    const std::vector<T>& grad() const;
    void zero_grad();

    // Detached copy of the values (fresh leaf, no history).
    Tensor detach_copy() const;

    std::shared_ptr<Node> node() const { return n_; }
    static Tensor from_node(std::shared_ptr<Node> n) {
        Tensor t;
        t.n_ = std::move(n);
        return t;
    }

private:
    std::shared_ptr<Node> n_;
};

struct BackwardStats {
    std::size_t ops_run = 0;
    std::size_t leaves_reached = 0;
};

// Reverse-mode sweep from a scalar loss. Runs each recorded op's backward
// rule exactly once in reverse topological order and accumulates gradients
// into every requires_grad leaf reachable from the loss. The swept subgraph
// is single-use: a second call through any of its nodes raises TapeConsumed.
template <typename T>
BackwardStats backward(const Tensor<T>& loss);

// Central finite differences (f(x+eps*e_i) - f(x-eps*e_i)) / (2 eps) per
// element; the verification oracle for every backward rule. Raises NonFinite
// when f returns a non-finite value near x.
template <typename T>
Tensor<T> finite_diff_grad(const std::function<T(const Tensor<T>&)>& f, const Tensor<T>& x,
                           T eps = T(1e-5));

template <typename T>
bool all_finite(const Tensor<T>& t);

using Tensor32 = Tensor<float>;
using Tensor64 = Tensor<double>;

} // namespace hcft
