#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "x3d/tensor.hpp"

namespace x3d {

/// Named trainable tensor. A frozen parameter is never written by an optimizer.
template <typename T>
struct BasicParameter {
    std::string name;  ///< dotted path, e.g. "stream.rgb.block1.conv"
    BasicTensor<T> tensor;
    bool frozen = false;
};

using Parameter = BasicParameter<float>;

struct OptimizerConfig {
    float learning_rate = 0.001f;
    float momentum = 0.9f;
    float weight_decay = 0.0005f;

    void validate() const;
    bool operator==(const OptimizerConfig&) const = default;
};

/// SGD with heavy-ball momentum and L2 weight decay:
///   g = grad + weight_decay * w;  v = momentum * v + g;  w -= learning_rate * v.
/// Velocity buffers are keyed by parameter name and start at zero.
class Sgd {
   public:
    explicit Sgd(OptimizerConfig config);

    /// Updates every non-frozen parameter. A parameter that received no gradient
    /// is treated as having a zero gradient. Throws NonFiniteError, before any
    /// parameter is touched, if some gradient holds NaN/Inf.
    void step(std::span<Parameter> params);

    const OptimizerConfig& config() const noexcept { return config_; }
    const FloatArray* velocity(const std::string& name) const;

   private:
    OptimizerConfig config_;
    std::map<std::string, FloatArray> velocity_;
};

void zero_grad(std::span<Parameter> params);
void freeze_all(std::span<Parameter> params);

}  // namespace x3d
