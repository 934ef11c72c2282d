#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "hmexpr/cli.hpp"
#include "hmexpr/metrics.hpp"
#include "hmexpr/training.hpp"
#include "hmexpr/visualization.hpp"

namespace py = pybind11;
using namespace hmexpr;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

py::tuple split_arrays(const CellCorpus& c, const std::string& split) {
  const auto& samples = c.split(parse_split(split));
  std::vector<int> labels;
  std::vector<std::string> ids;
  for (const auto& g : samples) {
    labels.push_back(g.label);
    ids.push_back(g.gene_id);
  }
  return py::make_tuple(to_array(stack_inputs(samples)), py::array_t<int>(labels.size(), labels.data()), ids);
}

std::vector<const CellCorpus*> pointers(const std::vector<CellCorpus>& cells) {
  std::vector<const CellCorpus*> p;
  for (const auto& c : cells) p.push_back(&c);
  return p;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Histone modification to gene expression toolkit";
  m.attr("__version__") = tool_version();
  m.attr("HM_NAMES") = std::vector<std::string>(kHmNames.begin(), kHmNames.end());

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  py::class_<CellCorpus>(m, "CellCorpus")
      .def_readonly("cell_id", &CellCorpus::cell_id)
      .def_property_readonly("gene_count", &CellCorpus::gene_count)
      .def("split", &split_arrays, py::arg("name"), "(x [n,5,100], labels [n], gene ids) of one split");

  m.def(
      "synthetic_corpus",
      [](std::size_t cells, std::size_t genes, std::uint64_t seed, double noise, double perturbation) {
        SyntheticSpec spec;
        spec.cells = cells;
        spec.genes_per_cell = genes;
        spec.noise = noise;
        spec.perturbation = perturbation;
        return generate_synthetic_corpus(spec, seed);
      },
      py::arg("cells") = 3, py::arg("genes") = 2000, py::arg("seed") = 0, py::arg("noise") = 0.35,
      py::arg("perturbation") = 0.1);
  m.def("load_cell", &load_cell, py::arg("dir"), py::arg("cell_id"));
  m.def("write_corpus_dir", [](const std::filesystem::path& dir, const std::vector<CellCorpus>& cells) {
    write_corpus_dir(dir, cells);
  });

  py::class_<Classifier>(m, "Classifier")
      .def_property_readonly("arch", [](const Classifier& c) { return std::string(arch_name(c.arch.kind)); })
      .def_readonly("seed", &Classifier::seed)
      .def_property_readonly("parameter_count", &count_parameters)
      .def("predict_proba", [](const Classifier& c, const Array& x) { return to_array(predict_proba(c, to_tensor(x))); })
      .def("auroc", [](const Classifier& c, const CellCorpus& cell,
                       const std::string& split) { return evaluate_auroc(c, cell.split(parse_split(split))); })
      .def("save", [](const Classifier& c, const std::filesystem::path& p) { save_checkpoint(c, p); })
      .def("linear_weights", [](const Classifier& c) {
        const LinearWeightReport r = export_linear_weights(c);
        Array w({static_cast<py::ssize_t>(kHmRows), py::ssize_t{2}});
        for (std::size_t i = 0; i < kHmRows; ++i)
          for (std::size_t j = 0; j < 2; ++j) w.mutable_at(i, j) = r.weights[i][j];
        return w;
      });

  m.def(
      "build_classifier",
      [](const std::string& arch, std::uint64_t seed) { return build_classifier(ArchSpec::of(parse_arch(arch)), seed); },
      py::arg("arch") = "original", py::arg("seed") = 0);
  m.def("load_classifier", &load_classifier, py::arg("path"));

  m.def(
      "train_classifier",
      [](const std::vector<CellCorpus>& cells, const std::string& arch, double lr, std::size_t epochs,
         std::size_t batch, std::uint64_t seed) {
        TrainConfig cfg;
        cfg.learning_rate = lr;
        cfg.max_epochs = epochs;
        cfg.batch_size = batch;
        cfg.seed = seed;
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train_classifier(pointers(cells), ArchSpec::of(parse_arch(arch)), cfg);
        }
        py::dict history;
        history["train_loss"] = r.history.train_loss;
        history["val_auroc"] = r.history.val_auroc;
        history["selected_epoch"] = r.history.selected_epoch;
        return py::make_tuple(r.model, history);
      },
      py::arg("cells"), py::arg("arch") = "original", py::arg("lr") = 1e-3, py::arg("epochs") = 30,
      py::arg("batch") = 64, py::arg("seed") = 0);

  m.def(
      "auroc",
      [](const std::vector<double>& scores, const std::vector<int>& labels) { return auroc(scores, labels); },
      py::arg("scores"), py::arg("labels"));

  m.def(
      "run_command",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = run_command(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs a CLI subcommand; returns (exit code, stdout, stderr).");
}
