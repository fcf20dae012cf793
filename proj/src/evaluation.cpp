#include "fusionbench/evaluation.hpp"

#include "json.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <limits>
#include <thread>

namespace fusionbench {

namespace {

template <typename E>
[[noreturn]] void rethrow_as(const E& e, const std::string& prefix) {
    throw E(prefix + e.what());
}

// Re-raises the in-flight exception with a fold prefix, keeping its type.
[[noreturn]] void rethrow_with_fold(std::exception_ptr ep, std::size_t fold) {
    const std::string prefix = "fold " + std::to_string(fold) + ": ";
    try {
        std::rethrow_exception(ep);
    } catch (const NumericError& e) {
        rethrow_as(e, prefix);
    } catch (const ResamplingError& e) {
        rethrow_as(e, prefix);
    } catch (const UndefinedAucError& e) {
        rethrow_as(e, prefix);
    } catch (const ConfigError& e) {
        rethrow_as(e, prefix);
    } catch (const DataError& e) {
        rethrow_as(e, prefix);
    } catch (const IoError& e) {
        rethrow_as(e, prefix);
    } catch (const Error& e) {
        rethrow_as(e, prefix);
    }
}

std::string format_params(std::size_t n) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1fK", static_cast<double>(n) / 1000.0);
    return buf;
}

std::string format_auc(double mean, double sd) {
    if (std::isnan(mean)) return "undefined";
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.3f ± %.3f", mean, sd);
    return buf;
}

const char* kind_name(GridKind k) {
    switch (k) {
    case GridKind::single: return "cv";
    case GridKind::table1: return "table1";
    case GridKind::table2: return "table2";
    }
    return "?";
}

// Display width, counting UTF-8 code points.
std::size_t display_width(const std::string& s) {
    std::size_t w = 0;
    for (unsigned char c : s) w += (c & 0xC0) != 0x80;
    return w;
}

std::string render_table(const std::vector<std::vector<std::string>>& rows) {
    std::vector<std::size_t> widths;
    for (const auto& r : rows) {
        widths.resize(std::max(widths.size(), r.size()), 0);
        for (std::size_t c = 0; c < r.size(); ++c) widths[c] = std::max(widths[c], display_width(r[c]));
    }
    std::string out;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::string line;
        for (std::size_t c = 0; c < rows[i].size(); ++c) {
            const std::string& cell = rows[i][c];
            line += cell;
            if (c + 1 < rows[i].size()) line += std::string(widths[c] - display_width(cell) + 2, ' ');
        }
        out += line + '\n';
        if (i == 0) {
            std::size_t total = 0;
            for (std::size_t c = 0; c < widths.size(); ++c) total += widths[c] + (c + 1 < widths.size() ? 2 : 0);
            out += std::string(total, '-') + '\n';
        }
    }
    return out;
}

} // namespace

FoldRunner make_training_runner(const FusionConfig& config, const Schedule& schedule) {
    return [config, schedule](const FoldTask& task) {
        Model<float> model(config);
        FoldOutcome out;
        out.param_count = model.count_params().total;
        out.history = train_fold(model, task.train, task.test, schedule, task.seed);
        out.scores = predict(model, task.test);
        out.model.emplace(std::move(model));
        return out;
    };
}

CvResult cross_validate(const FusionConfig& config, const Dataset& dataset, const FoldPlan& plan,
                        std::uint64_t seed, const FoldRunner& runner, std::size_t jobs) {
    if (plan.fold.size() != dataset.size()) {
        throw UsageError("fold plan covers " + std::to_string(plan.fold.size()) +
                         " records, dataset has " + std::to_string(dataset.size()));
    }
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        if (plan.ids[i] != dataset.records[i].id) {
            throw UsageError("fold plan does not match dataset at record '" + dataset.records[i].id + "'");
        }
    }
    CvResult result;
    result.config = config;
    result.folds.resize(plan.k);
    std::vector<std::exception_ptr> errors(plan.k);

    const auto run_fold = [&](std::size_t f) {
        try {
            const Dataset train_raw = dataset.subset(plan.train_indices(f));
            const Dataset test_raw = dataset.subset(plan.test_indices(f));
            const StandardizationStats stats = fit_standardization(train_raw);
            const Dataset train = apply_standardization(stats, train_raw);
            const Dataset test = apply_standardization(stats, test_raw);

            FoldOutcome outcome = runner(FoldTask{f, train, test, Rng::derive(seed, f)});
            if (outcome.scores.size() != test.size()) {
                throw UsageError("runner returned " + std::to_string(outcome.scores.size()) +
                                 " scores for " + std::to_string(test.size()) + " test records");
            }
            FoldResult& fr = result.folds[f];
            fr.fold = f;
            fr.param_count = outcome.param_count;
            fr.history = std::move(outcome.history);
            fr.model = std::move(outcome.model);
            for (const auto& r : test.records) fr.test_ids.push_back(r.id);
            try {
                fr.auc = auc(outcome.scores, test.labels());
                fr.all_ties = all_scores_tied(outcome.scores);
            } catch (const UndefinedAucError&) {
                fr.undefined = true;
                fr.auc = std::numeric_limits<double>::quiet_NaN();
            }
        } catch (...) {
            errors[f] = std::current_exception();
        }
    };

    const std::size_t workers = std::max<std::size_t>(1, std::min(jobs, plan.k));
    if (workers == 1) {
        for (std::size_t f = 0; f < plan.k; ++f) run_fold(f);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t f = next++; f < plan.k; f = next++) run_fold(f);
            });
        }
    }
    for (std::size_t f = 0; f < plan.k; ++f) {
        if (errors[f]) rethrow_with_fold(errors[f], f);
    }

    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& fr : result.folds) {
        if (fr.undefined) continue;
        sum += fr.auc;
        ++n;
    }
    if (n == 0) {
        result.auc_mean = result.auc_std = std::numeric_limits<double>::quiet_NaN();
    } else {
        result.auc_mean = sum / static_cast<double>(n);
        double ss = 0.0;
        for (const auto& fr : result.folds) {
            if (!fr.undefined) ss += (fr.auc - result.auc_mean) * (fr.auc - result.auc_mean);
        }
        result.auc_std = std::sqrt(ss / static_cast<double>(n));
    }
    result.param_count = result.folds.empty() ? 0 : result.folds.front().param_count;
    return result;
}

CvResult cross_validate(const FusionConfig& config, const Dataset& dataset, const FoldPlan& plan,
                        std::uint64_t seed, const Schedule& schedule, std::size_t jobs) {
    config.validate();
    schedule.validate();
    return cross_validate(config, dataset, plan, seed, make_training_runner(config, schedule), jobs);
}

std::vector<FusionConfig> grid_configs(GridKind kind, const FusionConfig& base) {
    const auto with = [&](FusionOp op, bool es, bool cp, bool df) {
        FusionConfig c = base;
        c.fusion_op = op;
        c.extra_supervision = es;
        c.clinical_prediction = cp;
        c.dense_fusion = df;
        return c;
    };
    switch (kind) {
    case GridKind::single: return {base};
    case GridKind::table1:
        return {with(FusionOp::concat, false, false, false), with(FusionOp::kronecker, false, false, false),
                with(FusionOp::concat, true, true, true), with(FusionOp::kronecker, true, true, true)};
    case GridKind::table2: {
        const FusionOp op = FusionOp::concat;
        return {with(op, false, false, false), with(op, true, false, false),
                with(op, false, true, false),  with(op, false, false, true),
                with(op, true, true, false),   with(op, true, false, true),
                with(op, false, true, true),   with(op, true, true, true)};
    }
    }
    return {};
}

GridReport ablation_grid(const Dataset& dataset, const FusionConfig& base, GridKind kind,
                         const FoldPlan& plan, std::uint64_t seed, const Schedule& schedule,
                         std::size_t jobs, const RowCallback& on_row) {
    GridReport report;
    report.kind = kind;
    report.folds = plan.k;
    const auto configs = grid_configs(kind, base);
    for (std::size_t r = 0; r < configs.size(); ++r) {
        CvResult row = cross_validate(configs[r], dataset, plan, seed, schedule, jobs);
        if (on_row) on_row(r, row);
        for (auto& f : row.folds) f.model.reset();
        report.rows.push_back(std::move(row));
    }
    return report;
}

std::string report_json(const GridReport& report) {
    using nlohmann::ordered_json;
    ordered_json j;
    j["kind"] = kind_name(report.kind);
    j["folds"] = report.folds;
    j["auc_std_convention"] = "population";
    ordered_json rows = ordered_json::array();
    for (const auto& row : report.rows) {
        const FusionConfig& c = row.config;
        ordered_json r;
        r["descriptor"] = c.descriptor();
        r["fusion_op"] = std::string(to_string(c.fusion_op));
        r["extra_supervision"] = c.extra_supervision;
        r["clinical_prediction"] = c.clinical_prediction;
        r["dense_fusion"] = c.dense_fusion;
        r["param_count"] = row.param_count;
        ordered_json groups = ordered_json::object();
        for (const auto& [g, n] : closed_form_param_count(c).by_group) groups[g] = n;
        r["param_groups"] = groups;
        r["auc_mean"] = row.auc_mean;
        r["auc_std"] = row.auc_std;
        ordered_json folds = ordered_json::array();
        for (const auto& f : row.folds) {
            ordered_json fj;
            fj["fold"] = f.fold;
            fj["auc"] = f.undefined ? ordered_json() : ordered_json(f.auc);
            fj["undefined"] = f.undefined;
            fj["all_ties"] = f.all_ties;
            fj["n_test"] = f.test_ids.size();
            folds.push_back(fj);
        }
        r["fold_results"] = folds;
        rows.push_back(r);
    }
    j["rows"] = rows;
    return j.dump(2) + "\n";
}

std::string report_text(const GridReport& report) {
    const auto mark = [](bool b) { return std::string(b ? "x" : ""); };
    std::vector<std::vector<std::string>> table;
    switch (report.kind) {
    case GridKind::table1:
        table.push_back({"Fusion Operation", "Auxiliary Supervision", "# Params", "AUC"});
        break;
    case GridKind::table2:
        table.push_back({"Extra Supervision", "Clinical Prediction", "Dense Fusion", "# Params", "AUC"});
        break;
    case GridKind::single:
        table.push_back({"Fusion Operation", "Extra Supervision", "Clinical Prediction",
                         "Dense Fusion", "# Params", "AUC"});
        break;
    }
    for (const auto& row : report.rows) {
        const FusionConfig& c = row.config;
        const std::string op = c.fusion_op == FusionOp::concat ? "Concatenation" : "Kronecker";
        const std::string auc_cell = format_auc(row.auc_mean, row.auc_std);
        const std::string params = format_params(row.param_count);
        switch (report.kind) {
        case GridKind::table1:
            table.push_back({op, mark(c.extra_supervision && c.clinical_prediction && c.dense_fusion),
                             params, auc_cell});
            break;
        case GridKind::table2:
            table.push_back({mark(c.extra_supervision), mark(c.clinical_prediction),
                             mark(c.dense_fusion), params, auc_cell});
            break;
        case GridKind::single:
            table.push_back({op, mark(c.extra_supervision), mark(c.clinical_prediction),
                             mark(c.dense_fusion), params, auc_cell});
            break;
        }
    }
    std::string out = render_table(table);
    out += "\nAUC: mean ± population std over " + std::to_string(report.folds) + " folds\n";
    for (const auto& row : report.rows) {
        for (const auto& f : row.folds) {
            if (f.undefined) {
                out += row.config.descriptor() + " fold " + std::to_string(f.fold) +
                       ": AUC undefined (single-class test fold)\n";
            } else if (f.all_ties) {
                out += row.config.descriptor() + " fold " + std::to_string(f.fold) +
                       ": all scores tied, AUC reported as 0.5\n";
            }
        }
    }
    return out;
}

} // namespace fusionbench
