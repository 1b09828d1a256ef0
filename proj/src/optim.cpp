#include "x3d/optim.hpp"

#include <cmath>

#include "x3d/error.hpp"

namespace x3d {

void OptimizerConfig::validate() const {
    if (!(learning_rate >= 0.0f) || !std::isfinite(learning_rate)) {
        throw ConfigError("optimizer.learning_rate must be a finite value >= 0");
    }
    if (!(momentum >= 0.0f && momentum < 1.0f)) throw ConfigError("optimizer.momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0f) || !std::isfinite(weight_decay)) {
        throw ConfigError("optimizer.weight_decay must be a finite value >= 0");
    }
}

Sgd::Sgd(OptimizerConfig config) : config_(config) { config_.validate(); }

const FloatArray* Sgd::velocity(const std::string& name) const {
    auto it = velocity_.find(name);
    return it == velocity_.end() ? nullptr : &it->second;
}

void Sgd::step(std::span<Parameter> params) {
    for (const auto& p : params) {
        if (!p.frozen && p.tensor.has_grad() && !p.tensor.grad().all_finite()) {
            throw NonFiniteError("non-finite gradient in parameter " + p.name);
        }
    }
    const float lr = config_.learning_rate;
    const float mu = config_.momentum;
    const float wd = config_.weight_decay;
    for (auto& p : params) {
        if (p.frozen) continue;
        auto& w = p.tensor.mutable_value();
        auto [it, inserted] = velocity_.try_emplace(p.name, w.shape(), 0.0f);
        auto& v = it->second;
        if (v.shape() != w.shape()) throw ShapeError("velocity buffer shape changed for parameter " + p.name);
        const float* grad = p.tensor.has_grad() ? p.tensor.grad().data().data() : nullptr;
        for (std::size_t i = 0; i < w.size(); ++i) {
            const float g = (grad ? grad[i] : 0.0f) + wd * w[i];
            v[i] = mu * v[i] + g;
            w[i] = w[i] - lr * v[i];
        }
    }
}

void zero_grad(std::span<Parameter> params) {
    for (auto& p : params) p.tensor.zero_grad();
}

void freeze_all(std::span<Parameter> params) {
    for (auto& p : params) p.frozen = true;
}

}  // namespace x3d
