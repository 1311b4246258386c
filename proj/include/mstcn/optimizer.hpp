#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "mstcn/errors.hpp"
#include "mstcn/model.hpp"
#include "mstcn/tensor.hpp"

namespace mstcn {

struct AdamConfig {
    double lr = 0.0005;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    void validate() const {
        if (!(lr > 0.0)) throw ConfigError("adam: learning rate must be positive");
        if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("adam: beta1 must be in [0, 1)");
        if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("adam: beta2 must be in [0, 1)");
        if (!(epsilon > 0.0)) throw ConfigError("adam: epsilon must be positive");
    }
};

/// First/second moment estimates, one pair per parameter tensor, in the
/// model's declaration order.
struct AdamState {
    std::uint64_t step = 0;
    std::vector<Tensor> m;
    std::vector<Tensor> v;
};

inline AdamState init_adam_state(ModelParams& model) {
    AdamState s;
    for (const NamedTensor& p : parameter_list(model)) {
        s.m.push_back(Tensor::zeros(p.tensor->shape));
        s.v.push_back(Tensor::zeros(p.tensor->shape));
    }
    return s;
}

/// One bias-corrected Adam update, applied in place.
inline void adam_step(ModelParams& model, ModelParams& grads, AdamState& state,
                      const AdamConfig& config) {
    config.validate();
    std::vector<NamedTensor> params = parameter_list(model);
    std::vector<NamedTensor> gs = parameter_list(grads);
    if (params.size() != gs.size() || state.m.size() != params.size() ||
        state.v.size() != params.size()) {
        throw ShapeError("adam: model, gradient and state layouts disagree");
    }
    state.step += 1;
    double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
    double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i].tensor;
        const Tensor& g = *gs[i].tensor;
        require_shape(g, p, "adam gradient for " + params[i].name);
        Tensor& m = state.m[i];
        Tensor& v = state.v[i];
        require_shape(m, p, "adam first moment for " + params[i].name);
        require_shape(v, p, "adam second moment for " + params[i].name);
        for (std::size_t j = 0; j < p.numel(); ++j) {
            m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g[j];
            v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g[j] * g[j];
            double m_hat = m[j] / bc1;
            double v_hat = v[j] / bc2;
            p[j] -= config.lr * m_hat / (std::sqrt(v_hat) + config.epsilon);
        }
    }
}

} // namespace mstcn
