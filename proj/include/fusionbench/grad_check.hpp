#pragma once

#include "fusionbench/graph.hpp"

#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace fusionbench {

/// Scalar loss of a graph after forward, plus its gradient w.r.t. the
/// graph outputs it reads.
struct LossEvaluation {
    double value = 0.0;
    std::vector<std::pair<NodeId, Tensor<double>>> seeds;
};

using GraphLoss = std::function<LossEvaluation(const LayerGraph<double>&)>;

/// Gradients smaller than this are compared on an absolute scale: the
/// relative error denominator is max(|analytic|, |numeric|, floor).
inline constexpr double kGradCheckFloor = 1e-3;

struct GradCheckReport {
    double max_relative_error = 0.0;
    double max_absolute_error = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    std::size_t checked = 0;
};

/// Compares the analytic gradient of every trainable parameter element with
/// a central difference (L(p+eps) - L(p-eps)) / 2 eps. Runs the graph in
/// eval mode, so dropout is the identity.
GradCheckReport grad_check(LayerGraph<double>& graph, const GraphLoss& loss, double eps = 1e-5);

} // namespace fusionbench
