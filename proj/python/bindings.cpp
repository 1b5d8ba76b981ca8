#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "texgraph/cli.hpp"
#include "texgraph/errors.hpp"
#include "texgraph/graphmod.hpp"
#include "texgraph/model.hpp"
#include "texgraph/patchenc.hpp"
#include "texgraph/texdata.hpp"
#include "texgraph/trainer.hpp"

namespace py = pybind11;
using namespace texgraph;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
    Shape shape(a.shape(), a.shape() + a.ndim());
    if (shape.empty()) shape = {1};
    return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
    Array out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

class Model {
public:
    Model(model::ModelConfig cfg, model::ModelParams params) : cfg_(std::move(cfg)), params_(std::move(params)) {}

    static Model create(const std::string& config_text, std::uint64_t seed) {
        auto cfg = config_text.empty() ? model::ModelConfig{} : model::ModelConfig::from_text(config_text, "config");
        cfg.validate();
        auto params = model::init_model(cfg, seed);
        return Model(std::move(cfg), std::move(params));
    }

    static Model load(const std::filesystem::path& path) {
        auto loaded = trainer::load_model(path);
        return Model(std::move(loaded.config), std::move(loaded.params));
    }

    Array logits(const Array& image) { return to_array(model::logits(to_tensor(image), cfg_, params_)); }

    py::dict trace(const Array& image) {
        model::ForwardTrace tr;
        const Tensor out = model::logits(to_tensor(image), cfg_, params_, &tr);
        py::dict d;
        d["logits"] = to_array(out);
        if (!tr.attention.empty()) d["attention"] = to_array(tr.attention);
        if (!tr.adjacency.targets.empty()) d["adjacency"] = to_array(tr.adjacency.dense());
        if (!tr.assignments.empty()) d["assignments"] = to_array(tr.assignments);
        if (!tr.q.empty()) d["q"] = to_array(tr.q);
        if (!tr.z.empty()) d["z"] = to_array(tr.z);
        return d;
    }

    std::string config_text() const { return cfg_.to_text(); }

    py::dict parameters() {
        py::dict d;
        for (auto* p : params_.parameters()) d[py::str(p->name)] = to_array(p->value);
        return d;
    }

    std::size_t parameter_count() {
        std::size_t n = 0;
        for (auto* p : params_.parameters()) n += p->value.size();
        return n;
    }

private:
    model::ModelConfig cfg_;
    model::ModelParams params_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "texgraph: graph-enhanced texture encoding on float64 tensors";

    auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
    py::register_exception<ContractError>(m, "ContractError", base.ptr());
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<DatasetError>(m, "DatasetError", base.ptr());
    py::register_exception<CheckpointError>(m, "CheckpointError", base.ptr());
    py::register_exception<OracleError>(m, "OracleError", base.ptr());

    m.def(
        "run_cli",
        [](const std::vector<std::string>& args) {
            std::vector<const char*> argv{"texgraph"};
            for (const auto& a : args) argv.push_back(a.c_str());
            std::ostringstream out, err;
            const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Runs the command-line tool in-process; returns (exit_code, stdout, stderr).");

    m.def(
        "gradcheck",
        [](const std::string& op) {
            py::list rows;
            for (const auto& c : cli::gradcheck_cases()) {
                if (!op.empty() && c.name != op) continue;
                const auto r = c.run();
                rows.append(py::make_tuple(c.name, r.max_rel_error, c.tolerance, r.worst_coordinate));
            }
            if (rows.empty()) throw ConfigError("unknown gradcheck op '" + op + "'");
            return rows;
        },
        py::arg("op") = "", "List of (name, max_rel_error, tolerance, worst_coordinate).");

    m.def("patch_count", &patchenc::patch_count, py::arg("h"), py::arg("w"), py::arg("d"), py::arg("s"));

    m.def(
        "topn_neighbors",
        [](const Array& a, const Array& b, std::size_t n) {
            const auto adj = graphmod::topn_neighbors(to_tensor(a), to_tensor(b), n);
            py::array_t<std::uint32_t> out({static_cast<py::ssize_t>(adj.source.pixels()), static_cast<py::ssize_t>(n)});
            std::copy(adj.targets.begin(), adj.targets.end(), out.mutable_data());
            return out;
        },
        py::arg("source"), py::arg("target"), py::arg("n"), "Indices of the n nearest target pixels per source pixel.");

    m.def(
        "dilated_context",
        [](const Array& f, std::size_t dilation, std::size_t kernel) {
            return to_array(graphmod::dilated_context(to_tensor(f), dilation, kernel));
        },
        py::arg("features"), py::arg("dilation"), py::arg("kernel") = 3);

    m.def(
        "soft_assignments",
        [](const Array& x, const Array& c, const Array& s) {
            return to_array(patchenc::soft_assignments(to_tensor(x), to_tensor(c), to_tensor(s)));
        },
        py::arg("descriptors"), py::arg("centers"), py::arg("smoothing"));

    m.def(
        "encode_patch",
        [](const Array& patch, const Array& c, const Array& s) {
            Tape t;
            return to_array(
                patchenc::encode_patch(t.constant(to_tensor(patch)), t.constant(to_tensor(c)), t.constant(to_tensor(s)))
                    .value());
        },
        py::arg("patch"), py::arg("centers"), py::arg("smoothing"));

    m.def(
        "cross_entropy",
        [](const Array& logits, std::size_t label) {
            Tape t;
            return model::cross_entropy(t.constant(to_tensor(logits)), label).value().item();
        },
        py::arg("logits"), py::arg("label"));

    m.def(
        "read_ppm", [](const std::filesystem::path& p) { return to_array(texdata::read_ppm(p)); }, py::arg("path"));
    m.def(
        "write_ppm", [](const std::filesystem::path& p, const Array& img) { texdata::write_ppm(p, to_tensor(img)); },
        py::arg("path"), py::arg("image"));

    py::class_<Model>(m, "Model")
        .def(py::init(&Model::create), py::arg("config") = "", py::arg("seed") = 0,
             "New model from key=value config text (defaults when empty).")
        .def_static("load", &Model::load, py::arg("path"), "Loads a checkpoint written by `texgraph train`.")
        .def("logits", &Model::logits, py::arg("image"))
        .def("trace", &Model::trace, py::arg("image"), "Logits plus attention, adjacency, assignments, q and z.")
        .def_property_readonly("config", &Model::config_text)
        .def("parameters", &Model::parameters)
        .def_property_readonly("parameter_count", &Model::parameter_count);
}
