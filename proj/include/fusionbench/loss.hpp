#pragma once

#include "fusionbench/model.hpp"

#include <span>
#include <utility>
#include <vector>

namespace fusionbench {

struct LossTerm {
    Output output;
    double value = 0.0;
    bool is_mse = false;
};

template <typename T>
struct LossBreakdown {
    double total = 0.0;
    std::vector<LossTerm> terms;                          // Output order
    std::vector<std::pair<Output, Tensor<T>>> grads;      // d total / d output

    [[nodiscard]] std::size_t bce_terms() const;
    [[nodiscard]] std::size_t mse_terms() const;
};

/// Unweighted sum of the batch-mean BCE of every present probability head
/// and the batch-mean MSE between x_hat_c and the clinical input. Throws
/// ConfigError if the outputs are not exactly those the config implies.
template <typename T>
LossBreakdown<T> total_loss(const ModelOutputs<T>& outputs, std::span<const int> labels,
                            const Tensor<T>& clinical, const FusionConfig& config);

} // namespace fusionbench
