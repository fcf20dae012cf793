#include "fusionbench/cli.hpp"

#include "fusionbench/config.hpp"
#include "fusionbench/evaluation.hpp"

#include "CLI11.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace fusionbench {

namespace fs = std::filesystem;

namespace {

struct Overrides {
    std::string config;
    std::string out;
    std::string dataset;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> jobs;
    std::optional<std::size_t> epochs;
    std::optional<std::size_t> warmup;
    std::optional<std::size_t> folds;
    std::optional<std::size_t> batch;
    std::string fusion;
    bool es = false;
    bool cp = false;
    bool df = false;
    bool all_methods = false;
    bool dry_run = false;
    bool table1 = false;
};

void add_common_options(CLI::App& cmd, Overrides& o) {
    cmd.add_option("--config", o.config, "Experiment config file (JSON)");
    cmd.add_option("--out", o.out, "Output directory");
    cmd.add_option("--dataset", o.dataset, "Dataset directory (overrides dataset.path)");
    cmd.add_option("--seed", o.seed, "Seed for data, model and training");
    cmd.add_option("--jobs", o.jobs, "Folds trained concurrently");
    cmd.add_option("--epochs", o.epochs, "Total training epochs");
    cmd.add_option("--warmup", o.warmup, "Warmup epochs");
    cmd.add_option("--folds", o.folds, "Cross-validation folds");
    cmd.add_option("--batch-size", o.batch, "Minibatch size");
    cmd.add_option("--fusion", o.fusion, "Fusion operator: concat or kronecker");
    cmd.add_flag("--es", o.es, "Enable extra supervision");
    cmd.add_flag("--cp", o.cp, "Enable clinical prediction");
    cmd.add_flag("--df", o.df, "Enable dense fusion");
    cmd.add_flag("--all-methods", o.all_methods, "Enable ES, CP and DF");
}

ExperimentConfig resolve(const Overrides& o) {
    const auto env_seed = seed_from_environment();
    ExperimentConfig c = o.config.empty() ? parse_experiment_config("{}", env_seed)
                                          : load_experiment_config(o.config, env_seed);
    if (!o.out.empty()) c.out_dir = o.out;
    if (!o.dataset.empty()) {
        c.dataset_path = o.dataset;
        c.has_synth = false;
    }
    if (o.seed) {
        c.data_seed = c.model_seed = c.train_seed = *o.seed;
        c.synth.seed = *o.seed;
        c.model.seed = *o.seed;
    }
    if (o.jobs) c.jobs = *o.jobs;
    if (o.epochs) c.schedule.total_epochs = *o.epochs;
    if (o.warmup) c.schedule.warmup_epochs = *o.warmup;
    if (o.folds) c.folds = *o.folds;
    if (o.batch) c.schedule.batch_size = *o.batch;
    if (!o.fusion.empty()) {
        try {
            c.model.fusion_op = parse_fusion_op(o.fusion);
        } catch (const ConfigError& e) {
            throw ConfigError(std::string("--fusion: ") + e.what());
        }
    }
    if (o.es || o.all_methods) c.model.extra_supervision = true;
    if (o.cp || o.all_methods) c.model.clinical_prediction = true;
    if (o.df || o.all_methods) c.model.dense_fusion = true;
    c.validate();
    return c;
}

void write_file_atomic(const fs::path& path, const std::string& content) {
    std::error_code ec;
    if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create '" + path.parent_path().string() + "': " + ec.message());
    const fs::path tmp = path.parent_path() / ("." + path.filename().string() + ".tmp");
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot write '" + tmp.string() + "'");
        os << content;
        os.close();
        if (!os) {
            fs::remove(tmp, ec);
            throw IoError("failed writing '" + tmp.string() + "'");
        }
    }
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw IoError("cannot move '" + path.string() + "' into place");
    }
}

Dataset obtain_dataset(const ExperimentConfig& c) {
    if (c.dataset_path) return load_dataset(*c.dataset_path);
    if (c.has_synth) return synth_generate(c.synth);
    throw ConfigError("missing 'dataset.path': set dataset.path or dataset.synth, or pass --dataset");
}

void write_fold_artifacts(const fs::path& dir, const CvResult& result) {
    for (const auto& f : result.folds) {
        const fs::path fold_dir = dir / ("fold_" + std::to_string(f.fold));
        write_file_atomic(fold_dir / "history.jsonl", f.history.to_jsonl(false));
        if (f.model) save_checkpoint(*f.model, fold_dir / "model.ckpt");
    }
}

void write_reports(const fs::path& dir, const GridReport& report, const ExperimentConfig& c) {
    write_file_atomic(dir / "config.json", experiment_config_json(c));
    write_file_atomic(dir / "report.json", report_json(report));
    write_file_atomic(dir / "report.txt", report_text(report));
}

std::string format_ratio(double r) {
    std::ostringstream ss;
    ss << std::fixed << std::setprecision(3) << r;
    return ss.str();
}

std::string row_dir_name(std::size_t row, const FusionConfig& config) {
    std::string d = config.descriptor();
    std::replace(d.begin(), d.end(), '+', '_');
    return "row_" + std::to_string(row) + "_" + d;
}

int cmd_gen_data(const ExperimentConfig& c, std::ostream& out) {
    if (c.dataset_path) {
        throw ConfigError("gen-data generates synthetic data; 'dataset.path' must not be set");
    }
    const Dataset ds = synth_generate(c.synth);
    save_dataset(ds, c.out_dir);
    std::size_t kmin = ds.records.front().k;
    std::size_t kmax = kmin;
    for (const auto& r : ds.records) {
        kmin = std::min(kmin, r.k);
        kmax = std::max(kmax, r.k);
    }
    const std::size_t pos = ds.positives();
    out << "wrote " << c.out_dir.string() << "\n"
        << "patients: " << ds.records.size() << "\n"
        << "positives: " << pos << " (rate " << format_ratio(double(pos) / double(ds.records.size()))
        << ")\n"
        << "patches per patient: " << kmin << ".." << kmax << "\n";
    return kExitOk;
}

int cmd_cv(const ExperimentConfig& c, bool dry_run, std::ostream& out) {
    if (dry_run) {
        out << experiment_config_json(c);
        out << "descriptor: " << c.model.descriptor() << "\n";
        out << "param_count: " << closed_form_param_count(c.model).total << "\n";
        return kExitOk;
    }
    const Dataset ds = obtain_dataset(c);
    const FoldPlan plan = stratified_kfold(ds, c.folds, c.data_seed);
    CvResult result = cross_validate(c.model, ds, plan, c.train_seed, c.schedule, c.jobs);
    write_fold_artifacts(c.out_dir, result);
    GridReport report{GridKind::single, c.folds, {}};
    report.rows.push_back(std::move(result));
    for (auto& f : report.rows.front().folds) f.model.reset();
    write_reports(c.out_dir, report, c);
    out << report_text(report);
    return kExitOk;
}

int cmd_ablate(const ExperimentConfig& c, bool table1, bool dry_run, std::ostream& out) {
    const GridKind kind = table1 ? GridKind::table1 : GridKind::table2;
    if (dry_run) {
        out << experiment_config_json(c);
        const auto configs = grid_configs(kind, c.model);
        for (std::size_t r = 0; r < configs.size(); ++r) {
            out << "row " << r << ": " << configs[r].descriptor()
                << " params=" << closed_form_param_count(configs[r]).total << "\n";
        }
        return kExitOk;
    }
    const Dataset ds = obtain_dataset(c);
    const FoldPlan plan = stratified_kfold(ds, c.folds, c.data_seed);
    const GridReport report =
        ablation_grid(ds, c.model, kind, plan, c.train_seed, c.schedule, c.jobs,
                      [&](std::size_t row, const CvResult& result) {
                          write_fold_artifacts(c.out_dir / row_dir_name(row, result.config), result);
                      });
    write_reports(c.out_dir, report, c);
    out << report_text(report);
    return kExitOk;
}

int cmd_count_params(const ExperimentConfig& c, std::ostream& out) {
    const Model<float> model(c.model);
    const ParamCount counted = model.count_params();
    const ParamCount closed = closed_form_param_count(c.model);
    out << "architecture: " << c.model.descriptor() << "\n";
    std::size_t width = 5;
    for (const auto& [g, _] : counted.by_group) width = std::max(width, g.size());
    for (const auto& [g, n] : counted.by_group) {
        out << "  " << std::left << std::setw(static_cast<int>(width)) << g << "  " << std::right
            << std::setw(8) << n << "\n";
    }
    out << "  " << std::left << std::setw(static_cast<int>(width)) << "total" << "  " << std::right
        << std::setw(8) << counted.total << "\n";
    out << "closed form: " << closed.total << (closed.total == counted.total ? " (match)" : " (MISMATCH)")
        << "\n";
    FusionConfig concat = c.model;
    concat.fusion_op = FusionOp::concat;
    FusionConfig kron = c.model;
    kron.fusion_op = FusionOp::kronecker;
    const double ratio = double(closed_form_param_count(kron).total) /
                         double(closed_form_param_count(concat).total);
    out << "kronecker/concat ratio: " << format_ratio(ratio) << "\n";
    if (closed.total != counted.total) {
        throw IntegrityError("parameter count does not match the closed form");
    }
    return kExitOk;
}

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const UsageError*>(&e) ||
        dynamic_cast<const GenerationError*>(&e)) {
        return kExitConfig;
    }
    if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const IntegrityError*>(&e) ||
        dynamic_cast<const DataError*>(&e) || dynamic_cast<const fs::filesystem_error*>(&e)) {
        return kExitIo;
    }
    return kExitTraining;
}

} // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Multimodal fusion benchmark: data generation, cross-validation and ablations",
                 "fusionbench"};
    app.require_subcommand(1);
    Overrides o;
    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset directory");
    auto* cv = app.add_subcommand("cv", "Cross-validate one model configuration");
    auto* ablate = app.add_subcommand("ablate", "Cross-validate the ablation grid");
    auto* count = app.add_subcommand("count-params", "Print parameter counts without training");
    for (auto* cmd : {gen, cv, ablate, count}) add_common_options(*cmd, o);
    cv->add_flag("--dry-run", o.dry_run, "Print the resolved config and parameter count only");
    ablate->add_flag("--dry-run", o.dry_run, "Print the resolved config and grid rows only");
    ablate->add_flag("--table1", o.table1, "Fusion-operator grid (4 rows) instead of the 8 method subsets");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        const ExperimentConfig c = resolve(o);
        if (gen->parsed()) return cmd_gen_data(c, out);
        if (cv->parsed()) return cmd_cv(c, o.dry_run, out);
        if (ablate->parsed()) return cmd_ablate(c, o.table1, o.dry_run, out);
        return cmd_count_params(c, out);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return exit_code_for(e);
    }
}

} // namespace fusionbench
