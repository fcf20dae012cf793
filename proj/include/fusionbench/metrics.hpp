#pragma once

#include <span>

namespace fusionbench {

/// ROC AUC as the Mann-Whitney statistic: the fraction of (positive,
/// negative) pairs where the positive scores higher, ties counted as 1/2.
/// Computed from midranks in integer arithmetic, so it equals exhaustive
/// pair counting exactly. Throws UndefinedAucError unless both classes occur.
double auc(std::span<const double> scores, std::span<const int> labels);

/// True when every score is identical (AUC is then 0.5 by convention).
bool all_scores_tied(std::span<const double> scores);

} // namespace fusionbench
