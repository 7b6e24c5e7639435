#include <string>
#include <vector>

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "json.hpp"

#include "alure/common.hpp"
#include "alure/eval_harness.hpp"
#include "alure/log.hpp"
#include "alure/parallel.hpp"
#include "alure/pipeline.hpp"

namespace py = pybind11;

namespace {

alure::RunConfig run_config(const std::string& text) {
  alure::RunConfig rc = text.empty() ? alure::RunConfig::defaults()
                                     : alure::RunConfig::from_json(nlohmann::json::parse(text));
  rc.apply_seed();
  rc.validate();
  alure::set_thread_count(rc.threads);
  return rc;
}

std::string summary_json(const alure::StageSummary& s) {
  nlohmann::ordered_json j;
  j["stage"] = s.stage;
  j["outputs"] = s.outputs;
  j["info"] = s.info;
  return j.dump();
}

template <alure::StageSummary (*Stage)(const alure::RunConfig&)>
std::string stage(const std::string& config) {
  alure::RunConfig rc = run_config(config);
  py::gil_scoped_release release;
  return summary_json(Stage(rc));
}

}  // namespace

PYBIND11_MODULE(_alure, m) {
  m.doc() = "Offline user-embedding pipeline";
  alure::init_logging();

  auto& base = py::register_exception<alure::Error>(m, "AlureError", PyExc_RuntimeError);
  py::register_exception<alure::ConfigError>(m, "ConfigError", base.ptr());

  m.def("version", &alure::version_string);

  m.def("default_config", [] { return alure::RunConfig::defaults().to_json().dump(); });
  m.def("desk_scale_config", [] {
    auto rc = alure::RunConfig::defaults();
    rc.apply_desk_scale();
    return rc.to_json().dump();
  });
  m.def("effective_config", [](const std::string& config) { return run_config(config).to_json().dump(); },
        py::arg("config"));

  m.def("synth", &stage<alure::synth_stage>, py::arg("config"));
  m.def("train", &stage<alure::train_stage>, py::arg("config"));
  m.def("embed", &stage<alure::embed_stage>, py::arg("config"));
  m.def("build_graph", &stage<alure::build_graph_stage>, py::arg("config"));
  m.def("retrieve", &stage<alure::retrieve_stage>, py::arg("config"));
  m.def("evaluate", &stage<alure::eval_stage>, py::arg("config"));
  m.def("experiment", &stage<alure::experiment_stage>, py::arg("config"));

  m.def(
      "run_experiment",
      [](const std::string& config, std::uint64_t seed) {
        const auto cfg = alure::ExperimentConfig::from_json(nlohmann::json::parse(config));
        py::gil_scoped_release release;
        return alure::report_json(alure::run_experiment(cfg, seed)).dump();
      },
      py::arg("config"), py::arg("seed"));
  m.def("experiment_config_desk_scale", [] { return alure::ExperimentConfig::desk_scale().to_json().dump(); });

  m.def(
      "normalized_entropy",
      [](const std::vector<double>& p, const std::vector<int>& y) { return alure::normalized_entropy(p, y); },
      py::arg("predictions"), py::arg("labels"));
  m.def("relative_metric_change", &alure::relative_metric_change, py::arg("metric_test"), py::arg("metric_control"));
  m.def("format_percent", &alure::format_percent, py::arg("percent"));
}
