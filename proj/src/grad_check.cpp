#include "fusionbench/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace fusionbench {

namespace {

double evaluate(LayerGraph<double>& graph, const GraphLoss& loss) {
    graph.forward(Mode::eval);
    const double v = loss(graph).value;
    if (!std::isfinite(v)) throw NumericError("grad_check: loss is not finite");
    return v;
}

} // namespace

GradCheckReport grad_check(LayerGraph<double>& graph, const GraphLoss& loss, double eps) {
    graph.forward(Mode::eval);
    LossEvaluation base = loss(graph);
    if (!std::isfinite(base.value)) throw NumericError("grad_check: loss is not finite");
    graph.zero_grad();
    graph.backward(base.seeds);

    GradCheckReport report;
    for (auto& p : graph.params()) {
        if (!p.trainable) continue;
        const Tensor<double> analytic = p.grad;
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double saved = p.value[i];
            p.value[i] = saved + eps;
            const double plus = evaluate(graph, loss);
            p.value[i] = saved - eps;
            const double minus = evaluate(graph, loss);
            p.value[i] = saved;

            const double numeric = (plus - minus) / (2.0 * eps);
            const double abs_err = std::abs(analytic[i] - numeric);
            const double denom =
                std::max({std::abs(analytic[i]), std::abs(numeric), kGradCheckFloor});
            const double rel = abs_err / denom;
            report.max_absolute_error = std::max(report.max_absolute_error, abs_err);
            if (rel > report.max_relative_error || report.checked == 0) {
                report.max_relative_error = std::max(rel, report.max_relative_error);
                report.worst_param = p.name;
                report.worst_index = i;
            }
            ++report.checked;
        }
    }
    // restore cached activations for the unperturbed parameters
    graph.forward(Mode::eval);
    return report;
}

} // namespace fusionbench
