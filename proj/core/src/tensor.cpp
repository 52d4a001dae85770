#include "hcft/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace hcft {

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ')';
    return os.str();
}

template <typename T>
Tensor<T> Tensor<T>::create(Shape shape, std::vector<T> values) {
    for (std::size_t e : shape) {
        if (e == 0) raise(Err::ShapeMismatch, "zero extent in shape " + shape_str(shape));
    }
    if (numel(shape) != values.size()) {
        raise(Err::ShapeMismatch, "shape " + shape_str(shape) + " wants " +
                                      std::to_string(numel(shape)) + " values, got " +
                                      std::to_string(values.size()));
    }
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    return from_node(std::move(n));
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape) {
    return full(std::move(shape), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T fill) {
    std::vector<T> v(numel(shape), fill);
    return create(std::move(shape), std::move(v));
}

template <typename T>
Tensor<T> Tensor<T>::uniform(Shape shape, T lo, T hi, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
    std::vector<T> v(numel(shape));
    for (auto& x : v) x = static_cast<T>(dist(rng));
    return create(std::move(shape), std::move(v));
}

template <typename T>
Tensor<T> Tensor<T>::randn(Shape shape, T stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
    std::vector<T> v(numel(shape));
    for (auto& x : v) x = static_cast<T>(dist(rng));
    return create(std::move(shape), std::move(v));
}

template <typename T>
std::vector<T>& Tensor<T>::values_mut() {
    if (!n_->leaf) raise(Err::TapeConsumed, "cannot mutate a recorded intermediate tensor");
    return n_->value;
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
    if (!n_->leaf) raise(Err::TapeConsumed, "requires_grad can only be toggled on leaves");
    n_->requires_grad = on;
    return *this;
}

template <typename T>
const std::vector<T>& Tensor<T>::grad() const {
    if (!has_grad()) raise(Err::ShapeMismatch, "gradient not populated; run backward first");
    return n_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
    n_->grad.assign(n_->value.size(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::detach_copy() const {
    return create(n_->shape, n_->value);
}

template <typename T>
BackwardStats backward(const Tensor<T>& loss) {
    using Node = detail::Node<T>;
    auto root = loss.node();
    if (!root) raise(Err::NotScalar, "backward on an empty tensor");
    if (root->value.size() != 1) {
        raise(Err::NotScalar, "backward needs a scalar loss, got shape " + shape_str(root->shape));
    }
    if (root->spent) raise(Err::TapeConsumed, "backward already ran through this graph");
    if (!root->requires_grad) {
        raise(Err::NotScalar, "loss does not depend on any requires_grad leaf");
    }

    // Iterative DFS post-order: children (inputs) come out before their
    // consumers, so `order` ends up topologically sorted.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    struct Frame {
        Node* node;
        std::size_t next_input;
    };
    std::vector<Frame> stack;
    stack.push_back({root.get(), 0});
    seen.insert(root.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_input < f.node->inputs.size()) {
            Node* child = f.node->inputs[f.next_input++].get();
            if (child->requires_grad && !seen.count(child)) {
                seen.insert(child);
                stack.push_back({child, 0});
            }
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }

    for (Node* n : order) {
        if (n->spent) raise(Err::TapeConsumed, "graph shares a node with an already-swept tape");
    }

    root->ensure_grad();
    root->grad[0] = T(1);

    BackwardStats stats;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->leaf) {
            ++stats.leaves_reached;
            continue;
        }
        n->spent = true;
        if (n->backward_fn) {
            n->ensure_grad(); // unused fan-out contributes zeros
            ++stats.ops_run;
            n->backward_fn(*n);
            n->backward_fn = nullptr; // release captures; enforce single use
        }
    }
    return stats;
}

template <typename T>
Tensor<T> finite_diff_grad(const std::function<T(const Tensor<T>&)>& f, const Tensor<T>& x,
                           T eps) {
    if (eps <= T(0)) raise(Err::InvalidRate, "finite_diff_grad eps must be positive");
    Tensor<T> probe = x.detach_copy();
    std::vector<T>& v = probe.values_mut();
    std::vector<T> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const T saved = v[i];
        v[i] = saved + eps;
        const T fp = f(probe);
        v[i] = saved - eps;
        const T fm = f(probe);
        v[i] = saved;
        if (!std::isfinite(static_cast<double>(fp)) || !std::isfinite(static_cast<double>(fm))) {
            raise(Err::NonFinite, "objective diverged at coordinate " + std::to_string(i));
        }
        out[i] = (fp - fm) / (T(2) * eps);
    }
    return Tensor<T>::create(x.shape(), std::move(out));
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
    for (T v : t.values()) {
        if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
}

template class Tensor<float>;
template class Tensor<double>;
template BackwardStats backward(const Tensor<float>&);
template BackwardStats backward(const Tensor<double>&);
template Tensor<float> finite_diff_grad(const std::function<float(const Tensor<float>&)>&,
                                        const Tensor<float>&, float);
template Tensor<double> finite_diff_grad(const std::function<double(const Tensor<double>&)>&,
                                         const Tensor<double>&, double);
template bool all_finite(const Tensor<float>&);
template bool all_finite(const Tensor<double>&);

} // namespace hcft
