#include "fusionbench/optimizer.hpp"

#include <cmath>

namespace fusionbench {

void AdamWHyper::validate() const {
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("adamw: lr must be finite and >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw ConfigError("adamw: betas must lie in [0, 1)");
    }
    if (!(eps > 0.0)) throw ConfigError("adamw: eps must be positive");
    if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) {
        throw ConfigError("adamw: weight_decay must be finite and >= 0");
    }
}

template <typename T>
void adamw_step(Param<T>& param, AdamState<T>& state, const AdamWHyper& h) {
    if (!param.trainable) return;
    if (param.grad.shape() != param.value.shape()) {
        throw DimensionError("adamw: gradient shape of '" + param.name + "' differs from value");
    }
    if (!param.grad.all_finite()) {
        throw NumericError("adamw: non-finite gradient for '" + param.name + "'");
    }
    if (state.m.shape() != param.value.shape()) {
        state.m = Tensor<T>(param.value.shape());
        state.v = Tensor<T>(param.value.shape());
        state.t = 0;
    }
    ++state.t;
    const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.t));
    const T b1 = static_cast<T>(h.beta1);
    const T b2 = static_cast<T>(h.beta2);
    for (std::size_t i = 0; i < param.value.size(); ++i) {
        const T g = param.grad[i];
        state.m[i] = b1 * state.m[i] + (T{1} - b1) * g;
        state.v[i] = b2 * state.v[i] + (T{1} - b2) * g * g;
        const double m_hat = static_cast<double>(state.m[i]) / bc1;
        const double v_hat = static_cast<double>(state.v[i]) / bc2;
        const double theta = static_cast<double>(param.value[i]);
        param.value[i] = static_cast<T>(theta - h.lr * (m_hat / (std::sqrt(v_hat) + h.eps)) -
                                        h.lr * h.weight_decay * theta);
    }
}

template <typename T>
void AdamW<T>::step(std::vector<Param<T>>& params) {
    if (states_.size() < params.size()) states_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i].trainable) continue;
        if (!states_[i]) states_[i].emplace();
        adamw_step(params[i], *states_[i], hyper_);
    }
}

template void adamw_step<float>(Param<float>&, AdamState<float>&, const AdamWHyper&);
template void adamw_step<double>(Param<double>&, AdamState<double>&, const AdamWHyper&);
template class AdamW<float>;
template class AdamW<double>;

} // namespace fusionbench
