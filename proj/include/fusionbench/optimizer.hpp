#pragma once

#include "fusionbench/graph.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace fusionbench {

struct AdamWHyper {
    double lr = 0.0075;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;

    void validate() const;
};

template <typename T>
struct AdamState {
    Tensor<T> m;
    Tensor<T> v;
    std::uint64_t t = 0;
};

/// One decoupled-weight-decay Adam update of a trainable parameter:
///   t += 1
///   m = b1 m + (1 - b1) g,  v = b2 v + (1 - b2) g^2
///   p = p - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * p
/// with m_hat = m / (1 - b1^t), v_hat = v / (1 - b2^t). Frozen parameters are
/// left untouched, state included.
template <typename T>
void adamw_step(Param<T>& param, AdamState<T>& state, const AdamWHyper& hyper);

/// Keeps per-parameter state, created on a parameter's first trainable
/// step. Each parameter counts its own steps, so a branch that starts
/// training late begins with fresh bias correction.
template <typename T>
class AdamW {
public:
    explicit AdamW(AdamWHyper hyper) : hyper_(hyper) { hyper_.validate(); }

    void step(std::vector<Param<T>>& params);

    [[nodiscard]] const std::optional<AdamState<T>>& state(std::size_t i) const { return states_.at(i); }
    [[nodiscard]] const AdamWHyper& hyper() const noexcept { return hyper_; }

private:
    AdamWHyper hyper_;
    std::vector<std::optional<AdamState<T>>> states_;
};

extern template class AdamW<float>;
extern template class AdamW<double>;

} // namespace fusionbench
