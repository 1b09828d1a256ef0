#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

#include "x3d/tensor.hpp"

namespace x3d {

/// (time, height, width) triple for kernel, stride and padding extents.
struct Triple {
    std::size_t t = 1;
    std::size_t h = 1;
    std::size_t w = 1;

    bool operator==(const Triple&) const = default;
};

/// 3-D convolution, input (N,Cin,T,H,W), weight (Cout,Cin,kt,kh,kw), bias (Cout).
/// Output extent per axis is floor((in + 2*pad - k) / stride) + 1.
template <typename T>
BasicTensor<T> conv3d(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& bias,
                      Triple stride, Triple padding);

/// max(x, 0); gradient passes only where x > 0.
template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x);

/// Max pooling over (T,H,W) windows of a 5-D tensor. Ties route the gradient to
/// the first maximum in row-major window order.
template <typename T>
BasicTensor<T> maxpool3d(const BasicTensor<T>& x, Triple window, Triple stride);

/// Mean over (T,H,W): (N,C,T,H,W) -> (N,C).
template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& x);

/// Pools (T,H,W) onto the requested extents using floor/ceil bin edges, so the
/// target may be smaller or larger than the input.
template <typename T>
BasicTensor<T> adaptive_avg_pool3d(const BasicTensor<T>& x, Triple out);

/// y = x W^T + b, x (N,Din), W (Dout,Din), b (Dout).
template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias);

/// Concatenates two (N,D) tensors along the feature axis.
template <typename T>
BasicTensor<T> concat_features(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Mean of (a - b)^2 over every element.
template <typename T>
BasicTensor<T> mse(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
struct CrossEntropyResult {
    BasicTensor<T> loss;        ///< scalar, batch mean of -log p[label]
    NdArray<T> probabilities;   ///< (N,C) softmax of the logits
};

/// Softmax cross entropy with max-subtraction, averaged over the batch.
template <typename T>
CrossEntropyResult<T> softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const std::int32_t> labels);

/// Row-wise softmax of an (N,C) array.
template <typename T>
NdArray<T> softmax(const NdArray<T>& logits);

/// Sum of two scalars.
template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// x * factor.
template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, T factor);

/// Scalar sum(x * weights) with constant weights; used to reduce an op to a
/// scalar for gradient checks.
template <typename T>
BasicTensor<T> weighted_sum(const BasicTensor<T>& x, const NdArray<T>& weights);

}  // namespace x3d
