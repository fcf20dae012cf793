#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "fusionbench/cli.hpp"
#include "fusionbench/evaluation.hpp"
#include "fusionbench/model.hpp"

#include <sstream>

namespace py = pybind11;
using namespace fusionbench;

namespace {

py::array_t<double> clinical_matrix(const Dataset& ds) {
    py::array_t<double> out({ds.size(), kClinicalFeatures});
    auto m = out.mutable_unchecked<2>();
    for (std::size_t i = 0; i < ds.size(); ++i) {
        for (std::size_t j = 0; j < kClinicalFeatures; ++j) m(i, j) = ds.records[i].clinical[j];
    }
    return out;
}

py::array_t<float> bag_matrix(const Dataset& ds, std::size_t i) {
    if (i >= ds.size()) throw py::index_error("record index out of range");
    const auto& r = ds.records[i];
    py::array_t<float> out({r.k, kPatchFeatures});
    std::copy(r.bag.begin(), r.bag.end(), out.mutable_data());
    return out;
}

py::dict param_count_dict(const ParamCount& c) {
    py::dict groups;
    for (const auto& [name, n] : c.by_group) groups[py::str(name)] = n;
    py::dict out;
    out["total"] = c.total;
    out["groups"] = groups;
    return out;
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Multimodal fusion benchmark: synthetic data, models and cross-validation";

    static py::exception<Error> base(m, "FusionbenchError");
    static py::exception<ConfigError> config_error(m, "ConfigError", base.ptr());
    static py::exception<DataError> data_error(m, "DataError", base.ptr());
    static py::exception<IoError> io_error(m, "IoError", base.ptr());
    static py::exception<NumericError> numeric_error(m, "NumericError", base.ptr());
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const ConfigError& e) {
            py::set_error(config_error, e.what());
        } catch (const DataError& e) {
            py::set_error(data_error, e.what());
        } catch (const IoError& e) {
            py::set_error(io_error, e.what());
        } catch (const NumericError& e) {
            py::set_error(numeric_error, e.what());
        } catch (const Error& e) {
            py::set_error(base, e.what());
        }
    });

    py::class_<Dataset>(m, "Dataset")
        .def("__len__", &Dataset::size)
        .def_property_readonly("positives", &Dataset::positives)
        .def_property_readonly("labels", &Dataset::labels)
        .def_property_readonly("ids", [](const Dataset& d) {
            std::vector<std::string> ids;
            for (const auto& r : d.records) ids.push_back(r.id);
            return ids;
        })
        .def_property_readonly("clinical", &clinical_matrix, "Clinical features, shape (n, 6).")
        .def("bag", &bag_matrix, py::arg("index"), "Patch features of one record, shape (K, 128).")
        .def("save", [](const Dataset& d, const std::filesystem::path& dir) { save_dataset(d, dir); }, py::arg("path"))
        .def("__eq__", [](const Dataset& a, const Dataset& b) { return a == b; });

    m.def("load_dataset", &load_dataset, py::arg("path"));
    m.def(
        "generate_synthetic",
        [](std::size_t n_patients, std::size_t k_min, std::size_t k_max, double signal_strength,
           double cross_modal_correlation, double positive_rate, double image_noise, double patch_noise,
           std::uint64_t seed) {
            SynthParams p;
            p.n_patients = n_patients;
            p.k_min = k_min;
            p.k_max = k_max;
            p.signal_strength = signal_strength;
            p.cross_modal_correlation = cross_modal_correlation;
            p.positive_rate = positive_rate;
            p.image_noise = image_noise;
            p.patch_noise = patch_noise;
            p.seed = seed;
            return synth_generate(p);
        },
        py::arg("n_patients") = 2000, py::arg("k_min") = 4, py::arg("k_max") = 12, py::arg("signal_strength") = 4.0,
        py::arg("cross_modal_correlation") = 0.8, py::arg("positive_rate") = 0.122, py::arg("image_noise") = 0.5,
        py::arg("patch_noise") = 1.0, py::arg("seed") = 0);

    py::class_<FusionConfig>(m, "FusionConfig")
        .def(py::init<>())
        .def_property(
            "fusion_op", [](const FusionConfig& c) { return std::string(to_string(c.fusion_op)); },
            [](FusionConfig& c, const std::string& s) { c.fusion_op = parse_fusion_op(s); })
        .def_readwrite("extra_supervision", &FusionConfig::extra_supervision)
        .def_readwrite("clinical_prediction", &FusionConfig::clinical_prediction)
        .def_readwrite("dense_fusion", &FusionConfig::dense_fusion)
        .def_readwrite("dim_image_repr", &FusionConfig::dim_image_repr)
        .def_readwrite("dim_clinical_repr", &FusionConfig::dim_clinical_repr)
        .def_readwrite("dim_stage2_image", &FusionConfig::dim_stage2_image)
        .def_readwrite("dim_stage2_clinical", &FusionConfig::dim_stage2_clinical)
        .def_readwrite("dropout_rate", &FusionConfig::dropout_rate)
        .def_readwrite("seed", &FusionConfig::seed)
        .def_property_readonly("descriptor", &FusionConfig::descriptor)
        .def("validate", &FusionConfig::validate)
        .def("to_json", &fusion_config_to_json)
        .def_static("from_json", [](const std::string& s) { return fusion_config_from_json(s); })
        .def("__repr__", [](const FusionConfig& c) { return "<FusionConfig " + c.descriptor() + ">"; });

    m.def("count_params", [](const FusionConfig& c) { return param_count_dict(Model<float>(c).count_params()); },
          py::arg("config"), "Parameters of a built model, by group.");
    m.def("closed_form_param_count", [](const FusionConfig& c) { return param_count_dict(closed_form_param_count(c)); },
          py::arg("config"));

    m.def("auc", [](const std::vector<double>& scores, const std::vector<int>& labels) { return auc(scores, labels); },
          py::arg("scores"), py::arg("labels"), "Rank-based ROC AUC with midranks for ties.");

    m.def(
        "cross_validate",
        [](const FusionConfig& config, const Dataset& ds, std::size_t folds, std::uint64_t data_seed,
           std::uint64_t train_seed, std::size_t epochs, std::size_t warmup_epochs, std::size_t batch_size,
           double lr, std::size_t jobs) {
            Schedule s;
            s.total_epochs = epochs;
            s.warmup_epochs = warmup_epochs;
            s.batch_size = batch_size;
            s.optimizer.lr = lr;
            s.validate();
            CvResult r;
            {
                py::gil_scoped_release release;
                r = cross_validate(config, ds, stratified_kfold(ds, folds, data_seed), train_seed, s, jobs);
            }
            std::vector<double> aucs;
            for (const auto& f : r.folds) aucs.push_back(f.auc);
            py::dict out;
            out["auc_mean"] = r.auc_mean;
            out["auc_std"] = r.auc_std;
            out["fold_auc"] = aucs;
            out["param_count"] = r.param_count;
            out["report_json"] = report_json(GridReport{GridKind::single, folds, {r}});
            return out;
        },
        py::arg("config"), py::arg("dataset"), py::arg("folds") = 5, py::arg("data_seed") = 0,
        py::arg("train_seed") = 0, py::arg("epochs") = 100, py::arg("warmup_epochs") = 20,
        py::arg("batch_size") = 128, py::arg("lr") = AdamWHyper{}.lr, py::arg("jobs") = 1);

    m.def(
        "run_cli",
        [](const std::vector<std::string>& args) {
            std::vector<const char*> argv{"fusionbench"};
            for (const auto& a : args) argv.push_back(a.c_str());
            std::ostringstream out;
            std::ostringstream err;
            int code = 0;
            {
                py::gil_scoped_release release;
                code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
            }
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Runs the command-line tool in-process. Returns (exit_code, stdout, stderr).");

    m.attr("__version__") = "0.1.0";
}
