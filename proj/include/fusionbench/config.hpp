#pragma once

#include "fusionbench/dataset.hpp"
#include "fusionbench/model.hpp"
#include "fusionbench/trainer.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

namespace fusionbench {

/// Everything one CLI invocation needs, fully validated.
///
/// JSON layout (every key optional, unknown keys rejected):
///   dataset:  { path } or { synth: { n_patients, k_min, k_max, signal_strength,
///             cross_modal_correlation, positive_rate, image_noise, patch_noise, seed } }
///   model:    { fusion_op, extra_supervision, clinical_prediction, dense_fusion,
///             dim_image_repr, dim_clinical_repr, dim_stage2_image,
///             dim_stage2_clinical, dropout_rate }
///   schedule: { epochs, warmup_epochs, batch_size, lr, beta1, beta2, eps, weight_decay }
///   folds, seed, seeds: { data, model, train }, out, jobs
///
/// Seeds resolve per field: seeds.<field>, else `seed`, else the
/// FUSIONBENCH_SEED environment value, else 0. The synthetic generator seed
/// defaults to the data seed.
struct ExperimentConfig {
    std::optional<std::filesystem::path> dataset_path;
    SynthParams synth;
    bool has_synth = false;
    FusionConfig model;
    Schedule schedule;
    std::size_t folds = 5;
    std::uint64_t data_seed = 0;
    std::uint64_t model_seed = 0;
    std::uint64_t train_seed = 0;
    std::filesystem::path out_dir = "fusionbench_out";
    std::size_t jobs = 1;

    void validate() const;
};

/// Parses and validates; throws ConfigError naming the offending key.
ExperimentConfig parse_experiment_config(const std::string& json_text,
                                         std::optional<std::uint64_t> env_seed = std::nullopt);

ExperimentConfig load_experiment_config(const std::filesystem::path& path,
                                        std::optional<std::uint64_t> env_seed = std::nullopt);

/// Resolved configuration as JSON, in the same key layout.
std::string experiment_config_json(const ExperimentConfig& config);

/// FUSIONBENCH_SEED, if set. Throws ConfigError when it is not an integer.
std::optional<std::uint64_t> seed_from_environment();

} // namespace fusionbench
