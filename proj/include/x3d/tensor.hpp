#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace x3d {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape) noexcept;
std::string shape_to_string(const Shape& shape);

/// Dense row-major array. Activations use (batch, channel, time, height, width).
template <typename T>
class NdArray {
   public:
    NdArray() = default;
    explicit NdArray(Shape shape, T fill = T{0});
    NdArray(Shape shape, std::vector<T> data);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<T> data() noexcept { return data_; }
    std::span<const T> data() const noexcept { return data_; }
    const std::vector<T>& vec() const noexcept { return data_; }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    bool all_finite() const noexcept;
    void fill(T value) noexcept;

    template <typename U>
    NdArray<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        return NdArray<U>(shape_, std::move(out));
    }

    bool operator==(const NdArray&) const = default;

   private:
    Shape shape_;
    std::vector<T> data_;
};

template <typename T>
struct Node;

/// Differentiable tensor handle. Copies share the same graph node; the value is
/// immutable once produced except through `mutable_value()` (optimizer steps).
template <typename T>
class BasicTensor {
   public:
    BasicTensor() = default;

    static BasicTensor leaf(NdArray<T> value, bool requires_grad = false);

    bool defined() const noexcept { return node_ != nullptr; }
    const NdArray<T>& value() const;
    NdArray<T>& mutable_value();
    const Shape& shape() const { return value().shape(); }
    std::size_t size() const { return value().size(); }

    bool requires_grad() const;
    bool has_grad() const;
    /// Accumulated gradient; throws when backward never reached this tensor.
    const NdArray<T>& grad() const;
    void zero_grad();
    void clear_grad();

    /// Same values, no history, no gradient.
    BasicTensor detach() const;

    /// Reverse-mode sweep from a scalar (single-element) tensor with seed 1.
    void backward() const;

    /// Scalar value of a single-element tensor.
    T item() const;

    const std::shared_ptr<Node<T>>& node() const noexcept { return node_; }
    explicit BasicTensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

   private:
    std::shared_ptr<Node<T>> node_;
};

template <typename T>
struct Node {
    NdArray<T> value;
    NdArray<T> grad;  // empty until backward touches the node
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward_fn;

    /// Adds `delta` (same size as value) into this node's gradient buffer.
    void accumulate(std::span<const T> delta);
    NdArray<T>& grad_buffer();
};

/// Graph recording switch, per thread. Disabled inside a NoGradGuard scope.
class GradMode {
   public:
    static bool enabled() noexcept;
    static void set_enabled(bool enabled) noexcept;
};

class NoGradGuard {
   public:
    NoGradGuard() noexcept : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
    ~NoGradGuard() { GradMode::set_enabled(previous_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

   private:
    bool previous_;
};

/// Builds an op result. History is kept only if grad mode is on and some input
/// requires grad. Throws NonFiniteError if `value` holds NaN/Inf.
template <typename T>
BasicTensor<T> make_result(NdArray<T> value, std::vector<BasicTensor<T>> inputs,
                           std::function<void(Node<T>&)> backward_fn, const char* op_name);

using Tensor = BasicTensor<float>;
using FloatArray = NdArray<float>;

extern template class NdArray<float>;
extern template class NdArray<double>;
extern template class BasicTensor<float>;
extern template class BasicTensor<double>;
extern template struct Node<float>;
extern template struct Node<double>;

}  // namespace x3d
