#pragma once

#include "fusionbench/dataset.hpp"
#include "fusionbench/loss.hpp"
#include "fusionbench/model.hpp"
#include "fusionbench/optimizer.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace fusionbench {

/// Two-phase schedule. Epochs 1..warmup_epochs train only the clinical
/// encoder and the clinical-only heads; later epochs freeze the clinical
/// encoder and train everything else. The clinical-prediction MSE is left
/// out of the warmup loss: it is produced by the frozen image side.
struct Schedule {
    std::size_t total_epochs = 100;
    std::size_t warmup_epochs = 20;
    std::size_t batch_size = 128;
    AdamWHyper optimizer;

    void validate() const;
    [[nodiscard]] int phase(std::size_t epoch) const { return epoch <= warmup_epochs ? 1 : 2; }
};

/// Parameter groups updated during `phase` (1 = warmup, 2 = main).
bool trains_in_phase(std::string_view group, int phase);

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    int phase = 1;
    double loss = 0.0;      // sample-weighted mean of the batch total losses
    std::vector<std::pair<std::string, double>> terms;
    std::optional<double> val_auc;
    std::size_t resampled_negatives = 0;  // class counts of the epoch's index list
    std::size_t resampled_positives = 0;
    double seconds = 0.0;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;

    /// One JSON object per line. Timing is left out when `with_timing` is
    /// false so histories can be compared byte for byte.
    [[nodiscard]] std::string to_jsonl(bool with_timing = true) const;
};

using EpochCallback = std::function<void(std::size_t epoch, const Model<float>&)>;

/// Trains `model` in place on a standardized split. Every epoch draws a fresh
/// class-balanced index list and walks it in batches of `batch_size`, the
/// last partial batch included. Validation AUC is recorded when `val` holds
/// both classes.
TrainHistory train_fold(Model<float>& model, const Dataset& train, const Dataset& val,
                        const Schedule& schedule, std::uint64_t seed,
                        const EpochCallback& on_epoch_end = {});

/// Eval-mode y_hat for every record, in dataset order.
std::vector<double> predict(Model<float>& model, const Dataset& data, std::size_t batch_size = 256);

} // namespace fusionbench
