#include "x3d/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "x3d/error.hpp"

namespace x3d {

std::size_t shape_numel(const Shape& shape) noexcept {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
}

std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ')';
    return os.str();
}

template <typename T>
NdArray<T>::NdArray(Shape shape, T fill) : shape_(std::move(shape)) {
    for (std::size_t e : shape_) {
        if (e == 0) throw ShapeError("zero-sized extent in shape " + shape_to_string(shape_));
    }
    data_.assign(shape_numel(shape_), fill);
}

template <typename T>
NdArray<T>::NdArray(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    for (std::size_t e : shape_) {
        if (e == 0) throw ShapeError("zero-sized extent in shape " + shape_to_string(shape_));
    }
    if (shape_numel(shape_) != data_.size()) {
        throw ShapeError("shape " + shape_to_string(shape_) + " does not match " + std::to_string(data_.size()) +
                         " elements");
    }
}

template <typename T>
bool NdArray<T>::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
void NdArray<T>::fill(T value) noexcept {
    std::fill(data_.begin(), data_.end(), value);
}

// ---------------------------------------------------------------------------

template <typename T>
void Node<T>::accumulate(std::span<const T> delta) {
    auto& g = grad_buffer();
    auto dst = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += delta[i];
}

template <typename T>
NdArray<T>& Node<T>::grad_buffer() {
    if (grad.empty()) grad = NdArray<T>(value.shape(), T{0});
    return grad;
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool GradMode::enabled() noexcept { return g_grad_enabled; }
void GradMode::set_enabled(bool enabled) noexcept { g_grad_enabled = enabled; }

// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> BasicTensor<T>::leaf(NdArray<T> value, bool requires_grad) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    node->requires_grad = requires_grad;
    return BasicTensor(std::move(node));
}

template <typename T>
const NdArray<T>& BasicTensor<T>::value() const {
    if (!node_) throw Error("use of an undefined tensor");
    return node_->value;
}

template <typename T>
NdArray<T>& BasicTensor<T>::mutable_value() {
    if (!node_) throw Error("use of an undefined tensor");
    return node_->value;
}

template <typename T>
bool BasicTensor<T>::requires_grad() const {
    return node_ && node_->requires_grad;
}

template <typename T>
bool BasicTensor<T>::has_grad() const {
    return node_ && !node_->grad.empty();
}

template <typename T>
const NdArray<T>& BasicTensor<T>::grad() const {
    if (!has_grad()) throw Error("tensor has no gradient");
    return node_->grad;
}

template <typename T>
void BasicTensor<T>::zero_grad() {
    if (node_ && !node_->grad.empty()) node_->grad.fill(T{0});
}

template <typename T>
void BasicTensor<T>::clear_grad() {
    if (node_) node_->grad = NdArray<T>();
}

template <typename T>
BasicTensor<T> BasicTensor<T>::detach() const {
    return leaf(value(), false);
}

template <typename T>
T BasicTensor<T>::item() const {
    if (value().size() != 1) throw ShapeError("item() on tensor of shape " + shape_to_string(shape()));
    return value()[0];
}

template <typename T>
void BasicTensor<T>::backward() const {
    if (!node_) throw Error("backward on an undefined tensor");
    if (node_->value.size() != 1) throw ShapeError("backward requires a scalar, got " + shape_to_string(shape()));
    if (!node_->requires_grad) return;

    // Iterative post-order DFS; inputs are visited in declaration order so the
    // accumulation order (and therefore every gradient bit) is fixed.
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{node_.get(), 0}};
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node<T>* child = node->inputs[next++].get();
            if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    node_->grad_buffer().fill(T{1});
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* node = *it;
        if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
    }
}

template <typename T>
BasicTensor<T> make_result(NdArray<T> value, std::vector<BasicTensor<T>> inputs,
                           std::function<void(Node<T>&)> backward_fn, const char* op_name) {
    if (!value.all_finite()) throw NonFiniteError(std::string(op_name) + ": non-finite output");
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    bool needs_grad = false;
    if (GradMode::enabled()) {
        for (const auto& in : inputs) needs_grad = needs_grad || in.requires_grad();
    }
    if (needs_grad) {
        node->requires_grad = true;
        node->inputs.reserve(inputs.size());
        for (auto& in : inputs) node->inputs.push_back(in.node());
        node->backward_fn = std::move(backward_fn);
    }
    return BasicTensor<T>(std::move(node));
}

template class NdArray<float>;
template class NdArray<double>;
template class BasicTensor<float>;
template class BasicTensor<double>;
template struct Node<float>;
template struct Node<double>;
template BasicTensor<float> make_result(NdArray<float>, std::vector<BasicTensor<float>>,
                                        std::function<void(Node<float>&)>, const char*);
template BasicTensor<double> make_result(NdArray<double>, std::vector<BasicTensor<double>>,
                                         std::function<void(Node<double>&)>, const char*);

}  // namespace x3d
