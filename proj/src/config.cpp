#include "fusionbench/config.hpp"

#include "json.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

namespace fusionbench {

using nlohmann::json;

namespace {

void reject_unknown(const json& obj, const std::string& where, const std::set<std::string>& allowed) {
    if (!obj.is_object()) throw ConfigError("'" + where + "' must be an object");
    for (const auto& [key, _] : obj.items()) {
        if (!allowed.contains(key)) {
            throw ConfigError("unknown key '" + (where.empty() ? key : where + "." + key) + "'");
        }
    }
}

template <typename V>
void read(const json& obj, const std::string& where, const char* key, V& out) {
    const auto it = obj.find(key);
    if (it == obj.end()) return;
    const std::string path = where.empty() ? key : where + "." + key;
    try {
        if constexpr (std::is_same_v<V, bool>) {
            if (!it->is_boolean()) throw ConfigError("'" + path + "' must be a boolean");
        } else if constexpr (std::is_integral_v<V>) {
            if (!it->is_number_unsigned()) throw ConfigError("'" + path + "' must be a non-negative integer");
        } else if constexpr (std::is_floating_point_v<V>) {
            if (!it->is_number()) throw ConfigError("'" + path + "' must be a number");
        } else {
            if (!it->is_string()) throw ConfigError("'" + path + "' must be a string");
        }
        out = it->get<V>();
    } catch (const json::exception& e) {
        throw ConfigError("'" + path + "': " + e.what());
    }
}

template <typename F>
void annotate(const std::string& where, F&& fn) {
    try {
        fn();
    } catch (const ConfigError& e) {
        throw ConfigError(where + ": " + e.what());
    }
}

} // namespace

void ExperimentConfig::validate() const {
    annotate("model", [&] { model.validate(); });
    annotate("schedule", [&] { schedule.validate(); });
    if (has_synth) annotate("dataset.synth", [&] { synth.validate(); });
    if (folds < 2) throw ConfigError("'folds' must be at least 2");
    if (jobs < 1) throw ConfigError("'jobs' must be at least 1");
    if (dataset_path && has_synth) {
        throw ConfigError("'dataset' takes either 'path' or 'synth', not both");
    }
}

std::optional<std::uint64_t> seed_from_environment() {
    const char* v = std::getenv("FUSIONBENCH_SEED");
    if (!v || !*v) return std::nullopt;
    std::uint64_t s = 0;
    const char* end = v + std::char_traits<char>::length(v);
    const auto res = std::from_chars(v, end, s);
    if (res.ec != std::errc{} || res.ptr != end) {
        throw ConfigError("FUSIONBENCH_SEED must be a non-negative integer, got '" + std::string(v) + "'");
    }
    return s;
}

ExperimentConfig parse_experiment_config(const std::string& json_text,
                                         std::optional<std::uint64_t> env_seed) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (root.is_null()) root = json::object();
    reject_unknown(root, "", {"dataset", "model", "schedule", "folds", "seed", "seeds", "out", "jobs"});

    ExperimentConfig c;
    std::uint64_t base_seed = env_seed.value_or(0);
    read(root, "", "seed", base_seed);
    c.data_seed = c.model_seed = c.train_seed = base_seed;
    if (root.contains("seeds")) {
        const json& s = root["seeds"];
        reject_unknown(s, "seeds", {"data", "model", "train"});
        read(s, "seeds", "data", c.data_seed);
        read(s, "seeds", "model", c.model_seed);
        read(s, "seeds", "train", c.train_seed);
    }
    c.synth.seed = c.data_seed;

    if (root.contains("dataset")) {
        const json& d = root["dataset"];
        reject_unknown(d, "dataset", {"path", "synth"});
        if (d.contains("path")) {
            std::string p;
            read(d, "dataset", "path", p);
            if (p.empty()) throw ConfigError("'dataset.path' must not be empty");
            c.dataset_path = p;
        }
        if (d.contains("synth")) {
            const json& s = d["synth"];
            reject_unknown(s, "dataset.synth",
                           {"n_patients", "k_min", "k_max", "signal_strength", "cross_modal_correlation",
                            "positive_rate", "image_noise", "patch_noise", "seed"});
            c.has_synth = true;
            const std::string w = "dataset.synth";
            read(s, w, "n_patients", c.synth.n_patients);
            read(s, w, "k_min", c.synth.k_min);
            read(s, w, "k_max", c.synth.k_max);
            read(s, w, "signal_strength", c.synth.signal_strength);
            read(s, w, "cross_modal_correlation", c.synth.cross_modal_correlation);
            read(s, w, "positive_rate", c.synth.positive_rate);
            read(s, w, "image_noise", c.synth.image_noise);
            read(s, w, "patch_noise", c.synth.patch_noise);
            read(s, w, "seed", c.synth.seed);
        }
    }

    if (root.contains("model")) {
        const json& m = root["model"];
        reject_unknown(m, "model",
                       {"fusion_op", "extra_supervision", "clinical_prediction", "dense_fusion",
                        "dim_image_repr", "dim_clinical_repr", "dim_stage2_image",
                        "dim_stage2_clinical", "dropout_rate"});
        std::string op(to_string(c.model.fusion_op));
        read(m, "model", "fusion_op", op);
        annotate("model.fusion_op", [&] { c.model.fusion_op = parse_fusion_op(op); });
        read(m, "model", "extra_supervision", c.model.extra_supervision);
        read(m, "model", "clinical_prediction", c.model.clinical_prediction);
        read(m, "model", "dense_fusion", c.model.dense_fusion);
        read(m, "model", "dim_image_repr", c.model.dim_image_repr);
        read(m, "model", "dim_clinical_repr", c.model.dim_clinical_repr);
        read(m, "model", "dim_stage2_image", c.model.dim_stage2_image);
        read(m, "model", "dim_stage2_clinical", c.model.dim_stage2_clinical);
        read(m, "model", "dropout_rate", c.model.dropout_rate);
    }
    c.model.seed = c.model_seed;

    if (root.contains("schedule")) {
        const json& s = root["schedule"];
        reject_unknown(s, "schedule",
                       {"epochs", "warmup_epochs", "batch_size", "lr", "beta1", "beta2", "eps",
                        "weight_decay"});
        read(s, "schedule", "epochs", c.schedule.total_epochs);
        read(s, "schedule", "warmup_epochs", c.schedule.warmup_epochs);
        read(s, "schedule", "batch_size", c.schedule.batch_size);
        read(s, "schedule", "lr", c.schedule.optimizer.lr);
        read(s, "schedule", "beta1", c.schedule.optimizer.beta1);
        read(s, "schedule", "beta2", c.schedule.optimizer.beta2);
        read(s, "schedule", "eps", c.schedule.optimizer.eps);
        read(s, "schedule", "weight_decay", c.schedule.optimizer.weight_decay);
    }
    read(root, "", "folds", c.folds);
    read(root, "", "jobs", c.jobs);
    if (root.contains("out")) {
        std::string out;
        read(root, "", "out", out);
        c.out_dir = out;
    }
    c.validate();
    return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path,
                                        std::optional<std::uint64_t> env_seed) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot read config file '" + path.string() + "'");
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_experiment_config(ss.str(), env_seed);
}

std::string experiment_config_json(const ExperimentConfig& c) {
    nlohmann::ordered_json j;
    nlohmann::ordered_json dataset = nlohmann::ordered_json::object();
    if (c.dataset_path) dataset["path"] = c.dataset_path->string();
    if (c.has_synth) {
        dataset["synth"] = {{"n_patients", c.synth.n_patients},
                            {"k_min", c.synth.k_min},
                            {"k_max", c.synth.k_max},
                            {"signal_strength", c.synth.signal_strength},
                            {"cross_modal_correlation", c.synth.cross_modal_correlation},
                            {"positive_rate", c.synth.positive_rate},
                            {"image_noise", c.synth.image_noise},
                            {"patch_noise", c.synth.patch_noise},
                            {"seed", c.synth.seed}};
    }
    j["dataset"] = dataset;
    j["model"] = {{"fusion_op", std::string(to_string(c.model.fusion_op))},
                  {"extra_supervision", c.model.extra_supervision},
                  {"clinical_prediction", c.model.clinical_prediction},
                  {"dense_fusion", c.model.dense_fusion},
                  {"dim_image_repr", c.model.dim_image_repr},
                  {"dim_clinical_repr", c.model.dim_clinical_repr},
                  {"dim_stage2_image", c.model.dim_stage2_image},
                  {"dim_stage2_clinical", c.model.dim_stage2_clinical},
                  {"dropout_rate", c.model.dropout_rate}};
    j["schedule"] = {{"epochs", c.schedule.total_epochs},
                     {"warmup_epochs", c.schedule.warmup_epochs},
                     {"batch_size", c.schedule.batch_size},
                     {"lr", c.schedule.optimizer.lr},
                     {"beta1", c.schedule.optimizer.beta1},
                     {"beta2", c.schedule.optimizer.beta2},
                     {"eps", c.schedule.optimizer.eps},
                     {"weight_decay", c.schedule.optimizer.weight_decay}};
    j["folds"] = c.folds;
    j["seeds"] = {{"data", c.data_seed}, {"model", c.model_seed}, {"train", c.train_seed}};
    j["out"] = c.out_dir.string();
    j["jobs"] = c.jobs;
    return j.dump(2) + "\n";
}

} // namespace fusionbench
