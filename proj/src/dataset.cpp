#include "fusionbench/dataset.hpp"

#include "fusionbench/errors.hpp"
#include "fusionbench/layers.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>
#include <system_error>
#include <unordered_map>

namespace fusionbench {

namespace fs = std::filesystem;

namespace {

constexpr const char* kManifestHeader =
    "id,label,k,age,psa,t_stage,gleason_primary,gleason_secondary,gleason_sum";

// Baseline and spread of each clinical column, and how strongly the latent
// risk loads on it. Codes stay continuous so the affine relation is exact.
constexpr ClinicalVector kClinicalBase = {68.0, 10.0, 2.0, 3.5, 3.5, 7.0};
constexpr ClinicalVector kClinicalScale = {7.0, 6.0, 0.7, 0.6, 0.6, 1.0};
constexpr ClinicalVector kClinicalLoading = {0.4, 0.8, 0.6, 0.7, 0.6, 0.9};

constexpr double kPrototypeAmplitude = 1.0;
constexpr double kPrototypeSpread = 0.5;

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

bool valid_id(const std::string& id) {
    if (id.empty() || id == "." || id == "..") return false;
    return std::all_of(id.begin(), id.end(), [](unsigned char c) {
        return std::isalnum(c) || c == '_' || c == '-' || c == '.';
    });
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

template <typename V>
bool parse_number(const std::string& s, V& out) {
    const char* end = s.data() + s.size();
    const auto res = std::from_chars(s.data(), end, out);
    return res.ec == std::errc{} && res.ptr == end;
}

void write_bag(const fs::path& path, const std::vector<float>& bag) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
    if constexpr (std::endian::native == std::endian::little) {
        os.write(reinterpret_cast<const char*>(bag.data()),
                 static_cast<std::streamsize>(bag.size() * sizeof(float)));
    } else {
        for (float f : bag) {
            auto u = std::bit_cast<std::uint32_t>(f);
            unsigned char b[4] = {static_cast<unsigned char>(u), static_cast<unsigned char>(u >> 8),
                                  static_cast<unsigned char>(u >> 16),
                                  static_cast<unsigned char>(u >> 24)};
            os.write(reinterpret_cast<const char*>(b), 4);
        }
    }
    if (!os) throw IoError("failed writing '" + path.string() + "'");
}

std::vector<float> read_bag(const fs::path& path, const std::string& id, std::size_t k) {
    std::error_code ec;
    if (!fs::is_regular_file(path, ec)) {
        throw IntegrityError("record '" + id + "': bag file '" + path.string() + "' is missing");
    }
    const auto bytes = fs::file_size(path, ec);
    const std::size_t expected = k * kPatchFeatures * sizeof(float);
    if (ec || bytes != expected) {
        throw IntegrityError("record '" + id + "': bag file has " + std::to_string(bytes) +
                             " bytes, manifest K=" + std::to_string(k) + " needs " +
                             std::to_string(expected));
    }
    std::vector<unsigned char> raw(expected);
    std::ifstream is(path, std::ios::binary);
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(expected));
    if (!is || static_cast<std::size_t>(is.gcount()) != expected) {
        throw IntegrityError("record '" + id + "': short read on bag file");
    }
    std::vector<float> bag(k * kPatchFeatures);
    for (std::size_t i = 0; i < bag.size(); ++i) {
        const unsigned char* b = raw.data() + 4 * i;
        const std::uint32_t u = static_cast<std::uint32_t>(b[0]) |
                                (static_cast<std::uint32_t>(b[1]) << 8) |
                                (static_cast<std::uint32_t>(b[2]) << 16) |
                                (static_cast<std::uint32_t>(b[3]) << 24);
        bag[i] = std::bit_cast<float>(u);
    }
    return bag;
}

} // namespace

std::vector<int> Dataset::labels() const {
    std::vector<int> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(r.label);
    return out;
}

std::size_t Dataset::positives() const {
    return static_cast<std::size_t>(
        std::count_if(records.begin(), records.end(), [](const auto& r) { return r.label == 1; }));
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
    Dataset out;
    out.stats = stats;
    out.records.reserve(indices.size());
    for (std::size_t i : indices) out.records.push_back(records.at(i));
    return out;
}

void Dataset::validate() const {
    std::set<std::string> seen;
    for (const auto& r : records) {
        if (!seen.insert(r.id).second) throw DataError("duplicate record id '" + r.id + "'");
        if (r.k < 1) throw DataError("record '" + r.id + "' has an empty bag");
        if (r.bag.size() != r.k * kPatchFeatures) {
            throw DataError("record '" + r.id + "' bag holds " + std::to_string(r.bag.size()) +
                            " values, expected K*128 = " + std::to_string(r.k * kPatchFeatures));
        }
        for (double v : r.clinical) {
            if (!std::isfinite(v)) throw DataError("record '" + r.id + "' has a non-finite clinical value");
        }
        for (float v : r.bag) {
            if (!std::isfinite(v)) throw DataError("record '" + r.id + "' has a non-finite patch value");
        }
        if (r.label != 0 && r.label != 1) {
            throw DataError("record '" + r.id + "' label must be 0 or 1");
        }
    }
    if (stats) {
        for (double s : stats->stddev) {
            if (!(s > 0.0)) throw DataError("standardization stds must be positive");
        }
    }
}

void SynthParams::validate() const {
    if (n_patients < 10) throw ConfigError("synth: n_patients must be at least 10");
    if (!(positive_rate > 0.0 && positive_rate < 1.0)) {
        throw ConfigError("synth: positive_rate must lie strictly between 0 and 1");
    }
    if (k_min < 1 || k_max > 512 || k_min > k_max) {
        throw ConfigError("synth: need 1 <= k_min <= k_max <= 512");
    }
    if (!(cross_modal_correlation >= 0.0 && cross_modal_correlation <= 1.0)) {
        throw ConfigError("synth: cross_modal_correlation must lie in [0, 1]");
    }
    if (!(signal_strength >= 0.0) || !std::isfinite(signal_strength)) {
        throw ConfigError("synth: signal_strength must be a finite non-negative number");
    }
    if (!(image_noise >= 0.0) || !(patch_noise >= 0.0) || !std::isfinite(image_noise) ||
        !std::isfinite(patch_noise)) {
        throw ConfigError("synth: noise levels must be finite and non-negative");
    }
}

double calibrate_intercept(double slope, double rate) {
    if (slope == 0.0) return std::log(rate / (1.0 - rate));
    // trapezoid rule over the standard normal density on [-12, 12]
    constexpr int kSteps = 4800;
    constexpr double lo = -12.0;
    constexpr double h = 24.0 / kSteps;
    const auto expected = [&](double b) {
        double acc = 0.0;
        for (int i = 0; i <= kSteps; ++i) {
            const double z = lo + h * i;
            const double w = (i == 0 || i == kSteps) ? 0.5 : 1.0;
            acc += w * std::exp(-0.5 * z * z) * layers::sigmoid(slope * z + b);
        }
        return acc * h / std::sqrt(2.0 * std::numbers::pi);
    };
    double a = -100.0;
    double b = 100.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (a + b);
        (expected(mid) < rate ? a : b) = mid;
    }
    return 0.5 * (a + b);
}

Dataset synth_generate(const SynthParams& params) {
    params.validate();
    Rng rng(params.seed);

    std::vector<double> mu(kPatchFeatures);
    for (double& v : mu) v = kPrototypeSpread * rng.normal();
    std::vector<double> direction(kPatchFeatures);
    double norm = 0.0;
    for (double& v : direction) {
        v = rng.normal();
        norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : direction) v /= norm;

    const double intercept = calibrate_intercept(params.signal_strength, params.positive_rate);
    const double clinical_noise = 1.0 - params.cross_modal_correlation;
    const std::size_t k_span = params.k_max - params.k_min + 1;
    const int id_width = std::max(5, static_cast<int>(std::to_string(params.n_patients).size()));

    Dataset ds;
    ds.records.reserve(params.n_patients);
    for (std::size_t p = 0; p < params.n_patients; ++p) {
        PatientRecord r;
        std::string num = std::to_string(p + 1);
        r.id = "P" + std::string(static_cast<std::size_t>(id_width) - num.size(), '0') + num;

        const double z = rng.normal();
        r.label = rng.bernoulli(layers::sigmoid(params.signal_strength * z + intercept)) ? 1 : 0;
        for (std::size_t j = 0; j < kClinicalFeatures; ++j) {
            const double e = rng.normal();
            r.clinical[j] = kClinicalBase[j] +
                            kClinicalScale[j] * (kClinicalLoading[j] * z + clinical_noise * e);
        }

        r.k = params.k_min + static_cast<std::size_t>(rng.below(k_span));
        const double shift = kPrototypeAmplitude * (z + params.image_noise * rng.normal());
        r.bag.resize(r.k * kPatchFeatures);
        for (std::size_t row = 0; row < r.k; ++row) {
            for (std::size_t c = 0; c < kPatchFeatures; ++c) {
                r.bag[row * kPatchFeatures + c] = static_cast<float>(
                    mu[c] + shift * direction[c] + params.patch_noise * rng.normal());
            }
        }
        ds.records.push_back(std::move(r));
    }

    const std::size_t pos = ds.positives();
    if (pos == 0 || pos == ds.size()) {
        throw GenerationError("synthetic dataset came out single-class (" + std::to_string(pos) +
                              " positives of " + std::to_string(ds.size()) +
                              "); retry with another seed, more patients, or a positive_rate "
                              "further from 0 and 1");
    }
    return ds;
}

StandardizationStats fit_standardization(const Dataset& train_split) {
    if (train_split.records.empty()) throw UsageError("standardize: training split is empty");
    StandardizationStats s;
    const double n = static_cast<double>(train_split.size());
    for (std::size_t j = 0; j < kClinicalFeatures; ++j) {
        double sum = 0.0;
        for (const auto& r : train_split.records) sum += r.clinical[j];
        const double mean = sum / n;
        double ss = 0.0;
        for (const auto& r : train_split.records) {
            const double d = r.clinical[j] - mean;
            ss += d * d;
        }
        const double sd = std::sqrt(ss / n);
        s.mean[j] = mean;
        s.stddev[j] = sd > 1e-12 * std::max(1.0, std::abs(mean)) ? sd : 1.0;
    }
    return s;
}

Dataset apply_standardization(const StandardizationStats& stats, const Dataset& apply_to) {
    Dataset out = apply_to;
    for (auto& r : out.records) {
        for (std::size_t j = 0; j < kClinicalFeatures; ++j) {
            r.clinical[j] = (r.clinical[j] - stats.mean[j]) / stats.stddev[j];
        }
    }
    out.stats = stats;
    return out;
}

Dataset standardize(const Dataset& train_split, const Dataset& apply_to) {
    return apply_standardization(fit_standardization(train_split), apply_to);
}

std::vector<std::size_t> FoldPlan::test_indices(std::size_t f) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < fold.size(); ++i) {
        if (fold[i] == f) out.push_back(i);
    }
    return out;
}

std::vector<std::size_t> FoldPlan::train_indices(std::size_t f) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < fold.size(); ++i) {
        if (fold[i] != f) out.push_back(i);
    }
    return out;
}

std::size_t FoldPlan::fold_of(const std::string& id) const {
    const auto it = std::find(ids.begin(), ids.end(), id);
    if (it == ids.end()) throw UsageError("fold plan has no record '" + id + "'");
    return fold[static_cast<std::size_t>(it - ids.begin())];
}

FoldPlan stratified_kfold(const Dataset& dataset, std::size_t k, std::uint64_t seed) {
    if (k < 2) throw UsageError("stratified_kfold: k must be at least 2 to hold out data");
    std::vector<std::size_t> by_class[2];
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const int y = dataset.records[i].label;
        if (y != 0 && y != 1) throw DataError("record '" + dataset.records[i].id + "' label must be 0 or 1");
        by_class[y].push_back(i);
    }
    for (int c = 0; c < 2; ++c) {
        if (by_class[c].size() < k) {
            throw StratificationError("class " + std::to_string(c) + " has " +
                                      std::to_string(by_class[c].size()) +
                                      " records, fewer than k=" + std::to_string(k));
        }
    }
    FoldPlan plan;
    plan.k = k;
    plan.seed = seed;
    plan.fold.assign(dataset.size(), 0);
    for (const auto& r : dataset.records) plan.ids.push_back(r.id);

    Rng rng(seed);
    std::size_t slot = 0;
    for (auto& members : by_class) {
        rng.shuffle(std::span<std::size_t>(members));
        for (std::size_t idx : members) plan.fold[idx] = slot++ % k;
    }
    return plan;
}

std::vector<std::size_t> balanced_resample(std::span<const std::size_t> train_indices,
                                           std::span<const int> labels, Rng& rng) {
    std::vector<std::size_t> by_class[2];
    for (std::size_t idx : train_indices) {
        if (idx >= labels.size()) throw UsageError("balanced_resample: index beyond label list");
        const int y = labels[idx];
        if (y != 0 && y != 1) throw DataError("balanced_resample: label must be 0 or 1");
        by_class[y].push_back(idx);
    }
    if (by_class[0].empty() || by_class[1].empty()) {
        throw ResamplingError("balanced_resample: training indices contain a single class");
    }
    const bool pos_minor = by_class[1].size() < by_class[0].size();
    const auto& minority = pos_minor ? by_class[1] : by_class[0];
    const auto& majority = pos_minor ? by_class[0] : by_class[1];

    std::vector<std::size_t> epoch;
    epoch.reserve(2 * majority.size());
    epoch.insert(epoch.end(), majority.begin(), majority.end());
    epoch.insert(epoch.end(), minority.begin(), minority.end());
    for (std::size_t extra = minority.size(); extra < majority.size(); ++extra) {
        epoch.push_back(minority[static_cast<std::size_t>(rng.below(minority.size()))]);
    }
    rng.shuffle(std::span<std::size_t>(epoch));
    return epoch;
}

std::vector<std::size_t> balanced_resample(std::span<const std::size_t> train_indices,
                                           std::span<const int> labels, std::uint64_t seed) {
    Rng rng(seed);
    return balanced_resample(train_indices, labels, rng);
}

Dataset load_dataset(const fs::path& dir) {
    const fs::path manifest = dir / "manifest.csv";
    std::ifstream is(manifest);
    if (!is) throw IoError("cannot read dataset manifest '" + manifest.string() + "'");

    std::string line;
    if (!std::getline(is, line) || line != kManifestHeader) {
        throw IntegrityError("'" + manifest.string() + "' does not start with the expected header");
    }
    Dataset ds;
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto cells = split_csv(line);
        const std::string where = "manifest line " + std::to_string(line_no);
        if (cells.size() != 3 + kClinicalFeatures) {
            throw IntegrityError(where + ": expected " + std::to_string(3 + kClinicalFeatures) +
                                 " columns, got " + std::to_string(cells.size()));
        }
        PatientRecord r;
        r.id = cells[0];
        if (!valid_id(r.id)) throw IntegrityError(where + ": invalid record id '" + r.id + "'");
        if (!parse_number(cells[1], r.label) || (r.label != 0 && r.label != 1)) {
            throw IntegrityError("record '" + r.id + "': label must be 0 or 1");
        }
        if (!parse_number(cells[2], r.k) || r.k < 1) {
            throw IntegrityError("record '" + r.id + "': K must be a positive integer");
        }
        for (std::size_t j = 0; j < kClinicalFeatures; ++j) {
            if (!parse_number(cells[3 + j], r.clinical[j]) || !std::isfinite(r.clinical[j])) {
                throw IntegrityError("record '" + r.id + "': bad value for " + kClinicalNames[j]);
            }
        }
        r.bag = read_bag(dir / "bags" / (r.id + ".f32raw"), r.id, r.k);
        ds.records.push_back(std::move(r));
    }
    try {
        ds.validate();
    } catch (const DataError& e) {
        throw IntegrityError(e.what());
    }
    return ds;
}

void save_dataset(const Dataset& dataset, const fs::path& dir) {
    dataset.validate();
    for (const auto& r : dataset.records) {
        if (!valid_id(r.id)) throw DataError("record id '" + r.id + "' is not filename-safe");
    }
    const fs::path target = fs::absolute(dir);
    const fs::path staging = target.parent_path() / ("." + target.filename().string() + ".partial");
    std::error_code ec;
    fs::remove_all(staging, ec);
    fs::create_directories(staging / "bags", ec);
    if (ec) {
        fs::remove_all(staging, ec);
        throw IoError("cannot create '" + staging.string() + "': " + ec.message());
    }
    try {
        std::ofstream os(staging / "manifest.csv", std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot write manifest in '" + staging.string() + "'");
        os << kManifestHeader << '\n';
        for (const auto& r : dataset.records) {
            os << r.id << ',' << r.label << ',' << r.k;
            for (double v : r.clinical) os << ',' << format_double(v);
            os << '\n';
            write_bag(staging / "bags" / (r.id + ".f32raw"), r.bag);
        }
        os.close();
        if (!os) throw IoError("failed writing manifest in '" + staging.string() + "'");
        if (fs::exists(target)) fs::remove_all(target);
        fs::rename(staging, target);
    } catch (const fs::filesystem_error& e) {
        fs::remove_all(staging, ec);
        throw IoError(std::string("saving dataset failed: ") + e.what());
    } catch (...) {
        fs::remove_all(staging, ec);
        throw;
    }
}

} // namespace fusionbench
