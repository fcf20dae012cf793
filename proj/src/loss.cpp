#include "fusionbench/loss.hpp"

#include "fusionbench/layers.hpp"

#include <algorithm>

namespace fusionbench {

template <typename T>
std::size_t LossBreakdown<T>::bce_terms() const {
    return static_cast<std::size_t>(
        std::count_if(terms.begin(), terms.end(), [](const LossTerm& t) { return !t.is_mse; }));
}

template <typename T>
std::size_t LossBreakdown<T>::mse_terms() const {
    return terms.size() - bce_terms();
}

template <typename T>
LossBreakdown<T> total_loss(const ModelOutputs<T>& outputs, std::span<const int> labels,
                            const Tensor<T>& clinical, const FusionConfig& config) {
    const auto expected = config.expected_outputs();
    const auto present = outputs.present();
    if (expected != present) {
        std::string msg = "outputs do not match config " + config.descriptor() + ": expected {";
        for (Output o : expected) msg += " " + std::string(output_name(o));
        msg += " }, got {";
        for (Output o : present) msg += " " + std::string(output_name(o));
        throw ConfigError(msg + " }");
    }
    LossBreakdown<T> out;
    for (Output o : present) {
        const Tensor<T>& value = outputs.get(o);
        LossTerm term{o, 0.0, o == Output::x_hat_c};
        if (term.is_mse) {
            term.value = layers::mse_loss(value, clinical);
            out.grads.emplace_back(o, layers::mse_grad(value, clinical));
        } else {
            term.value = layers::bce_loss(value, labels);
            out.grads.emplace_back(o, layers::bce_grad(value, labels));
        }
        out.total += term.value;
        out.terms.push_back(term);
    }
    return out;
}

template struct LossBreakdown<float>;
template struct LossBreakdown<double>;
template LossBreakdown<float> total_loss<float>(const ModelOutputs<float>&, std::span<const int>,
                                                const Tensor<float>&, const FusionConfig&);
template LossBreakdown<double> total_loss<double>(const ModelOutputs<double>&, std::span<const int>,
                                                  const Tensor<double>&, const FusionConfig&);

} // namespace fusionbench
