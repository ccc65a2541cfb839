// Python bindings: metrics, acquisition scores, the synthetic family and the
// oracle-labeled workflow. Configs and reports cross the boundary as JSON text.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "sslada/datasets.hpp"
#include "sslada/error.hpp"
#include "sslada/harness.hpp"
#include "sslada/metrics.hpp"
#include "sslada/sampler.hpp"

namespace py = pybind11;
using namespace sslada;

namespace {

py::array_t<double> to_numpy(const Tensor& t) {
  py::array_t<double> out({t.rows(), t.cols()});
  std::copy(t.data(), t.data() + t.size(), out.mutable_data());
  return out;
}

template <typename T>
py::array_t<T> to_numpy(const std::vector<T>& v) {
  py::array_t<T> out(std::vector<py::ssize_t>{static_cast<py::ssize_t>(v.size())});
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

py::dict pool_dict(const data::Pool& p) {
  py::dict d;
  d["features"] = to_numpy(p.features);
  d["labels"] = to_numpy(p.labels);
  d["ids"] = to_numpy(p.ids);
  return d;
}

harness::ExperimentConfig config_from(const std::string& json_text) {
  harness::ExperimentConfig cfg = json_text.empty() ? harness::ExperimentConfig{} : harness::parse_config(json_text);
  cfg.validate();
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Self-supervised retraining and active domain adaptation core";

  py::register_exception<ArgumentError>(m, "ArgumentError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_RuntimeError);
  py::register_exception<StateError>(m, "StateError", PyExc_RuntimeError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def(
      "auprc",
      [](const std::vector<double>& scores, const std::vector<int>& labels) { return metrics::auprc(scores, labels); },
      py::arg("scores"), py::arg("labels"), "Average precision; tied scores form one block.");

  m.def(
      "aggregate",
      [](const std::vector<double>& values) {
        const metrics::SeedAggregate a = metrics::aggregate(values);
        return py::make_tuple(a.mean, a.std);
      },
      py::arg("values"), "(mean, sample std) over seeds.");

  m.def(
      "entropy", [](const std::vector<double>& p) { return sampler::entropy(p); }, py::arg("probs"));
  m.def(
      "score_aada", [](double d, const std::vector<double>& p) { return sampler::score_aada(d, p); },
      py::arg("domain_prob_source"), py::arg("probs"), "(1 - d) / d * H(p), with d clamped away from 0 and 1.");

  m.def(
      "generate_domains",
      [](const std::string& config_json) {
        const harness::ExperimentConfig cfg = config_from(config_json);
        const harness::Dataset ds = harness::load_dataset(cfg);
        py::dict out;
        for (const auto& [name, pool] : ds.pools) out[py::str(name)] = pool_dict(pool);
        return py::make_tuple(ds.source, ds.targets, out);
      },
      py::arg("config_json") = "", "(source, targets, {name: {features, labels, ids}}).");

  m.def(
      "default_config", [] { return harness::dump_config(harness::ExperimentConfig{}); },
      "The default experiment config as JSON.");
  m.def(
      "normalize_config", [](const std::string& text) { return harness::dump_config(config_from(text)); },
      py::arg("config_json"), "Parses, validates and re-serializes a config with every field filled in.");

  m.def(
      "run_workflow",
      [](const std::string& config_json) {
        const harness::ExperimentConfig cfg = config_from(config_json);
        const harness::Dataset ds = harness::load_dataset(cfg);
        harness::OracleLabeler oracle(ds);
        harness::ExperimentReport report;
        {
          py::gil_scoped_release release;
          report = harness::run_workflow(cfg, ds, oracle);
        }
        return harness::format_grid_json(report);
      },
      py::arg("config_json") = "", "Runs the full workflow with ground-truth labels; returns grid JSON.");

  m.def(
      "format_deltas", [](const std::string& grid_json) { return harness::format_deltas(harness::parse_grid_json(grid_json)); },
      py::arg("grid_json"));
}
