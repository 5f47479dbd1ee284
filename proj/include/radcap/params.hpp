#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "radcap/rng.hpp"
#include "radcap/tensor.hpp"

namespace radcap {

// Named view into a module's parameter (or buffer) tensor. `decay` marks
// tensors the weight-decay term applies to: conv/linear/embedding weights,
// not batchnorm scales/shifts and not biases.
template <typename T>
struct ParamRef {
    std::string name;
    Tensor<T> t;
    bool decay = false;
};

template <typename T>
Tensor<T> uniform_param(Shape shape, int fan_in, Rng& rng) {
    Tensor<T> t(std::move(shape));
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-bound, bound));
    t.set_requires_grad(true);
    return t;
}

template <typename T>
Tensor<T> const_param(Shape shape, T value) {
    Tensor<T> t(std::move(shape), value);
    t.set_requires_grad(true);
    return t;
}

template <typename T>
double global_grad_norm(const std::vector<ParamRef<T>>& params) {
    double s = 0.0;
    for (const auto& p : params)
        for (const T g : p.t.grad()) s += static_cast<double>(g) * static_cast<double>(g);
    return std::sqrt(s);
}

} // namespace radcap
