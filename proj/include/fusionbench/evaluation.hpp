#pragma once

#include "fusionbench/dataset.hpp"
#include "fusionbench/metrics.hpp"
#include "fusionbench/model.hpp"
#include "fusionbench/trainer.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace fusionbench {

/// One fold's standardized splits, handed to a FoldRunner.
struct FoldTask {
    std::size_t fold = 0;
    const Dataset& train;
    const Dataset& test;
    std::uint64_t seed = 0;
};

struct FoldOutcome {
    std::vector<double> scores;  // y_hat for every test record, test order
    std::size_t param_count = 0;
    TrainHistory history;
    std::optional<Model<float>> model;
};

/// Fits a model on `task.train` and scores `task.test`. The default runner
/// trains a FusionConfig model; tests inject oracle or constant scorers.
using FoldRunner = std::function<FoldOutcome(const FoldTask&)>;

FoldRunner make_training_runner(const FusionConfig& config, const Schedule& schedule);

struct FoldResult {
    std::size_t fold = 0;
    double auc = 0.0;        // NaN when undefined
    bool undefined = false;  // single-class test fold
    bool all_ties = false;   // every score equal; auc is 0.5
    std::size_t param_count = 0;
    TrainHistory history;
    std::vector<std::string> test_ids;
    std::optional<Model<float>> model;
};

/// Aggregates use the population standard deviation over folds with a
/// defined AUC.
struct CvResult {
    FusionConfig config;
    std::vector<FoldResult> folds;
    double auc_mean = 0.0;
    double auc_std = 0.0;
    std::size_t param_count = 0;
};

/// Per fold: standardize with training-split statistics, run `runner`,
/// score the held-out fold. Up to `jobs` folds run concurrently; results
/// do not depend on `jobs`. Errors are rethrown with the fold index.
CvResult cross_validate(const FusionConfig& config, const Dataset& dataset, const FoldPlan& plan,
                        std::uint64_t seed, const FoldRunner& runner, std::size_t jobs = 1);

CvResult cross_validate(const FusionConfig& config, const Dataset& dataset, const FoldPlan& plan,
                        std::uint64_t seed, const Schedule& schedule, std::size_t jobs = 1);

enum class GridKind {
    single,  // one config, as run by `cv`
    table1,  // {concat, kronecker} x {no aux, all three methods}
    table2,  // concat fusion, all 8 subsets of {ES, CP, DF}
};

/// Row configs of a grid, built from `base` (dims, dropout, seed).
std::vector<FusionConfig> grid_configs(GridKind kind, const FusionConfig& base);

struct GridReport {
    GridKind kind = GridKind::single;
    std::size_t folds = 0;
    std::vector<CvResult> rows;
};

using RowCallback = std::function<void(std::size_t row, const CvResult&)>;

/// Runs cross_validate for every row on the same fold plan, seed and
/// schedule. `on_row` sees each finished row before its models are dropped.
GridReport ablation_grid(const Dataset& dataset, const FusionConfig& base, GridKind kind,
                         const FoldPlan& plan, std::uint64_t seed, const Schedule& schedule,
                         std::size_t jobs = 1, const RowCallback& on_row = {});

std::string report_json(const GridReport& report);
std::string report_text(const GridReport& report);

} // namespace fusionbench
