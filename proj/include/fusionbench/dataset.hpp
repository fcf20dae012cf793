#pragma once

#include "fusionbench/rng.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fusionbench {

inline constexpr std::size_t kPatchFeatures = 128;
inline constexpr std::size_t kClinicalFeatures = 6;

/// Column names of the clinical vector, in storage order. T-stage and the
/// Gleason fields are numeric codes.
inline constexpr std::array<const char*, kClinicalFeatures> kClinicalNames = {
    "age", "psa", "t_stage", "gleason_primary", "gleason_secondary", "gleason_sum"};

using ClinicalVector = std::array<double, kClinicalFeatures>;

struct PatientRecord {
    std::string id;
    std::size_t k = 0;       // number of patches
    std::vector<float> bag;  // k x kPatchFeatures, row-major
    ClinicalVector clinical{};
    int label = 0;  // 1 = distant metastasis

    friend bool operator==(const PatientRecord&, const PatientRecord&) = default;
};

struct StandardizationStats {
    ClinicalVector mean{};
    ClinicalVector stddev{};

    friend bool operator==(const StandardizationStats&, const StandardizationStats&) = default;
};

struct Dataset {
    std::vector<PatientRecord> records;
    std::optional<StandardizationStats> stats;

    [[nodiscard]] std::size_t size() const noexcept { return records.size(); }
    [[nodiscard]] std::vector<int> labels() const;
    [[nodiscard]] std::size_t positives() const;

    /// Records at `indices`, in that order; stats are carried over.
    [[nodiscard]] Dataset subset(std::span<const std::size_t> indices) const;

    /// Throws DataError on a broken record invariant (K, bag size, finite
    /// clinical values, binary label, unique ids, stats shape).
    void validate() const;

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Parameters of the synthetic paired image/clinical generator.
///
/// Each patient draws a latent risk z ~ N(0,1). The label is
/// Bernoulli(sigmoid(signal_strength * z + b)) with b solved so the expected
/// positive rate equals `positive_rate`. Clinical feature j is
/// base_j + scale_j * (loading_j * z + (1 - cross_modal_correlation) * e_j).
/// Patches are drawn around a prototype mu + amplitude * (z + image_noise * u) * d
/// with per-patch isotropic noise `patch_noise`; mu and the unit direction d
/// are fixed per seed.
struct SynthParams {
    std::size_t n_patients = 2000;
    std::size_t k_min = 4;
    std::size_t k_max = 12;
    double signal_strength = 4.0;
    double cross_modal_correlation = 0.8;
    double positive_rate = 0.122;
    double image_noise = 0.5;
    double patch_noise = 1.0;
    std::uint64_t seed = 0;

    void validate() const;
};

Dataset synth_generate(const SynthParams& params);

/// Intercept b such that E_z[sigmoid(slope * z + b)] = rate for z ~ N(0,1).
double calibrate_intercept(double slope, double rate);

/// Per-feature mean and population std; a zero std is replaced by 1.
StandardizationStats fit_standardization(const Dataset& train_split);

/// Z-scores the clinical features of `apply_to` with statistics of
/// `train_split` and records the statistics on the result.
Dataset standardize(const Dataset& train_split, const Dataset& apply_to);

Dataset apply_standardization(const StandardizationStats& stats, const Dataset& apply_to);

struct FoldPlan {
    std::size_t k = 0;
    std::uint64_t seed = 0;
    std::vector<std::string> ids;   // record ids, dataset order
    std::vector<std::size_t> fold;  // fold index of each record

    [[nodiscard]] std::vector<std::size_t> test_indices(std::size_t f) const;
    [[nodiscard]] std::vector<std::size_t> train_indices(std::size_t f) const;
    [[nodiscard]] std::size_t fold_of(const std::string& id) const;
};

/// Per-class shuffle then round-robin assignment; the second class continues
/// the rotation where the first stopped so total fold sizes stay balanced.
FoldPlan stratified_kfold(const Dataset& dataset, std::size_t k, std::uint64_t seed);

/// One epoch of class-balanced indices: every majority record once, every
/// minority record once plus (majority - minority) draws with replacement,
/// then shuffled. Returns 2 * majority indices.
std::vector<std::size_t> balanced_resample(std::span<const std::size_t> train_indices,
                                           std::span<const int> labels, Rng& rng);

std::vector<std::size_t> balanced_resample(std::span<const std::size_t> train_indices,
                                           std::span<const int> labels, std::uint64_t seed);

/// Directory layout: manifest.csv plus bags/<id>.f32raw (K x 128 little-endian
/// float32, row-major, no header).
Dataset load_dataset(const std::filesystem::path& dir);

/// Writes into a temporary sibling directory and renames it into place, so a
/// failed save leaves nothing behind. An existing directory is replaced.
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);

} // namespace fusionbench
