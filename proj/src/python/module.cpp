#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "ichseq/app.hpp"
#include "ichseq/config.hpp"
#include "ichseq/errors.hpp"
#include "ichseq/ingest.hpp"
#include "ichseq/metrics.hpp"
#include "ichseq/synth.hpp"
#include "ichseq/training.hpp"
#include "ichseq/windowing.hpp"

namespace py = pybind11;
using namespace ichseq;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
    std::vector<std::size_t> shape(a.shape(), a.shape() + a.ndim());
    return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    Array out(shape);
    std::copy(t.values().begin(), t.values().end(), out.mutable_data());
    return out;
}

metrics::LossWeights weights_from(const std::optional<std::vector<double>>& w) {
    metrics::LossWeights out;
    if (!w) return out;
    if (w->size() != kNumClasses) throw ConfigError("weights need one entry per class");
    std::copy(w->begin(), w->end(), out.per_class.begin());
    out.validate();
    return out;
}

py::dict record_dict(const ingest::SliceRecord& r) {
    py::dict d;
    d["study_id"] = r.study_id;
    d["slice_id"] = r.slice_id;
    d["raw_path"] = r.raw_path;
    d["z_position"] = r.z_position;
    d["instance_number"] = r.instance_number;
    if (r.labels) {
        d["labels"] = std::vector<int>(r.labels->begin(), r.labels->end());
    } else {
        d["labels"] = py::none();
    }
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Slice-sequence hemorrhage classifier core";

    auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    auto data = py::register_exception<DataError>(m, "DataError", base.ptr());
    py::register_exception<IoError>(m, "IoError", data.ptr());
    py::register_exception<NumericError>(m, "NumericError", base.ptr());
    py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);

    m.attr("CLASS_NAMES") = std::vector<std::string>(kClassNames.begin(), kClassNames.end());

    m.def(
        "apply_window",
        [](const Array& hu, double level, double width) {
            return to_array(apply_window(to_tensor(hu), WindowSpec{level, width}));
        },
        py::arg("hu"), py::arg("level"), py::arg("width"));
    m.def(
        "stack_windows", [](const Array& hu) { return to_array(stack_windows(to_tensor(hu), WindowTriple{})); },
        py::arg("hu"), "(H, W) HU slice -> (3, H, W) with the brain, subdural and bone windows.");

    m.def(
        "weighted_log_loss",
        [](const Array& preds, const Array& targets, std::optional<std::vector<double>> weights, double clip_eps) {
            return metrics::weighted_log_loss(to_tensor(preds), to_tensor(targets), weights_from(weights), clip_eps);
        },
        py::arg("preds"), py::arg("targets"), py::arg("weights") = py::none(),
        py::arg("clip_eps") = metrics::kDefaultClipEps);
    m.def(
        "roc_auc",
        [](const std::vector<double>& scores, const std::vector<std::uint8_t>& labels) {
            return metrics::try_roc_auc(scores, labels);
        },
        py::arg("scores"), py::arg("labels"), "Mann-Whitney AUC, or None when one class is absent.");
    m.def(
        "aggregate_scan",
        [](const Array& slice_probs) {
            const auto a = metrics::aggregate_scan(to_tensor(slice_probs));
            return std::vector<double>(a.begin(), a.end());
        },
        py::arg("slice_probs"));

    m.def(
        "lr_at",
        [](std::size_t step, double peak_lr, std::size_t warmup_steps, std::size_t total_steps, double eta_min) {
            TrainConfig c;
            c.peak_lr = peak_lr;
            c.warmup_steps = warmup_steps;
            c.eta_min = eta_min;
            return lr_at(step, c, total_steps);
        },
        py::arg("step"), py::arg("peak_lr"), py::arg("warmup_steps"), py::arg("total_steps"),
        py::arg("eta_min") = 0.0);

    m.def(
        "synth",
        [](const std::filesystem::path& out_dir, std::size_t n_studies, std::size_t slices_per_study,
           std::size_t size, std::uint64_t seed, double val_fraction) {
            synth::SynthConfig c;
            c.n_studies = n_studies;
            c.slices_per_study = slices_per_study;
            c.height = c.width = size;
            c.seed = seed;
            c.val_fraction = val_fraction;
            const auto r = synth::generate(c, out_dir);
            py::dict d;
            d["manifest"] = r.manifest;
            d["train_manifest"] = r.train_manifest;
            d["val_manifest"] = r.val_manifest;
            d["labels_csv"] = r.labels_csv;
            d["n_slices"] = r.n_slices;
            d["n_positive_slices"] = r.n_positive_slices;
            return d;
        },
        py::arg("out_dir"), py::arg("n_studies") = 20, py::arg("slices_per_study") = 8, py::arg("size") = 64,
        py::arg("seed") = 0, py::arg("val_fraction") = 0.2);

    m.def(
        "build_manifest",
        [](const std::filesystem::path& root, std::optional<std::filesystem::path> labels) {
            ingest::ManifestOptions o;
            o.labels_csv = std::move(labels);
            const auto r = ingest::build_manifest(root, o);
            py::list rows;
            for (const auto& row : r.rows) rows.append(record_dict(row));
            py::list excl;
            for (const auto& e : r.exclusions) excl.append(py::make_tuple(e.study_id, e.path, e.reason));
            return py::make_tuple(rows, excl);
        },
        py::arg("root"), py::arg("labels") = py::none(), "Returns (rows, exclusions) for a raw directory tree.");
    m.def(
        "read_manifest",
        [](const std::filesystem::path& path) {
            py::list rows;
            for (const auto& row : ingest::read_manifest_file(path)) rows.append(record_dict(row));
            return rows;
        },
        py::arg("path"));

    m.def(
        "config_text",
        [](const std::string& path, const std::vector<std::string>& overrides) {
            RunConfig c = load_config(path);
            apply_overrides(c, overrides);
            c.validate();
            return to_text(c);
        },
        py::arg("path"), py::arg("overrides") = std::vector<std::string>{},
        "Resolved canonical config text for a config file plus key=value overrides.");

    m.def(
        "predict",
        [](const std::filesystem::path& checkpoint, const std::filesystem::path& manifest) {
            auto ck = load_checkpoint(checkpoint);
            const auto scans = load_scans(ingest::read_manifest_file(manifest), ck.config.windows,
                                          ck.config.model.input_height, ck.config.model.input_width, false);
            std::vector<Tensor> probs;
            {
                py::gil_scoped_release release;
                probs = predict_scans(*ck.model, scans);
            }
            py::dict out;
            for (std::size_t i = 0; i < scans.size(); ++i) {
                out[py::str(scans[i].study_id)] = py::make_tuple(scans[i].slice_ids, to_array(probs[i]));
            }
            return out;
        },
        py::arg("checkpoint"), py::arg("manifest"),
        "Maps study_id -> (slice_ids, (S, 6) probabilities) for every study in the manifest.");
    m.def(
        "validate",
        [](const std::filesystem::path& checkpoint, const std::filesystem::path& manifest) {
            auto ck = load_checkpoint(checkpoint);
            const auto scans = load_scans(ingest::read_manifest_file(manifest), ck.config.windows,
                                          ck.config.model.input_height, ck.config.model.input_width, true);
            py::gil_scoped_release release;
            return validate(*ck.model, scans, {}, ck.config.train.clip_eps).to_json();
        },
        py::arg("checkpoint"), py::arg("manifest"), "Metric report as a JSON string.");

    m.def(
        "run_cli",
        [](const std::vector<std::string>& args) {
            std::ostringstream out, err;
            int code;
            {
                py::gil_scoped_release release;
                code = run_cli(args, out, err);
            }
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Runs the command-line tool in-process; returns (exit_code, stdout, stderr).");
}
