#include "fusionbench/metrics.hpp"

#include "fusionbench/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

namespace fusionbench {

double auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) {
        throw DimensionError("auc: " + std::to_string(scores.size()) + " scores vs " +
                             std::to_string(labels.size()) + " labels");
    }
    std::uint64_t n_pos = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1) throw DataError("auc: labels must be 0 or 1");
        if (std::isnan(scores[i])) throw DataError("auc: NaN score");
        n_pos += static_cast<std::uint64_t>(labels[i]);
    }
    const std::uint64_t n_neg = labels.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) {
        throw UndefinedAucError("auc is undefined: labels contain a single class");
    }

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Twice the midrank of a tie block [i, j) with 1-based ranks is i + 1 + j.
    std::uint64_t twice_rank_sum = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i + 1;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        std::uint64_t pos_in_block = 0;
        for (std::size_t k = i; k < j; ++k) pos_in_block += static_cast<std::uint64_t>(labels[order[k]]);
        twice_rank_sum += pos_in_block * (i + 1 + j);
        i = j;
    }
    const std::uint64_t twice_u = twice_rank_sum - n_pos * (n_pos + 1);
    return static_cast<double>(twice_u) / static_cast<double>(2 * n_pos * n_neg);
}

bool all_scores_tied(std::span<const double> scores) {
    return std::adjacent_find(scores.begin(), scores.end(), std::not_equal_to<>()) == scores.end();
}

} // namespace fusionbench
