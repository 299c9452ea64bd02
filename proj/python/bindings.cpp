#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "xsite/metrics.hpp"
#include "xsite/pipeline.hpp"
#include "xsite/serialize.hpp"
#include "xsite/synth.hpp"

namespace py = pybind11;
using namespace xsite;

namespace {

harness::PipelineConfig config_from(const std::string& text) {
  if (text.empty()) return {};
  return io::config_from_json(io::json::parse(text));
}

}  // namespace

PYBIND11_MODULE(_xsite, m) {
  m.doc() = "Cross-site connectivity classification core";

  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<LoadError>(m, "LoadError", base.ptr());
  py::register_exception<SchemaError>(m, "SchemaError", base.ptr());
  py::register_exception<ContractError>(m, "ContractError", base.ptr());
  py::register_exception<StateError>(m, "StateError", base.ptr());

  py::class_<dataset::SubjectRecord>(m, "SubjectRecord")
      .def(py::init<>())
      .def(py::init([](std::string subject, std::string site, int label, Matrix bold, Vector covariates) {
             return dataset::SubjectRecord{std::move(subject), std::move(site), label, std::move(bold),
                                           std::move(covariates)};
           }),
           py::arg("subject_id"), py::arg("site_id"), py::arg("label"), py::arg("bold"), py::arg("covariates"))
      .def_readwrite("subject_id", &dataset::SubjectRecord::subject_id)
      .def_readwrite("site_id", &dataset::SubjectRecord::site_id)
      .def_readwrite("label", &dataset::SubjectRecord::label)
      .def_readwrite("bold", &dataset::SubjectRecord::bold)
      .def_readwrite("covariates", &dataset::SubjectRecord::covariates)
      .def("__repr__", [](const dataset::SubjectRecord& r) {
        return "<SubjectRecord " + r.subject_id + " site=" + r.site_id + " label=" + std::to_string(r.label) + ">";
      });

  m.def(
      "synth_timeseries",
      [](const std::string& spec_json) {
        return synth::synth_timeseries_dataset(io::synth_spec_from_json(io::json::parse(spec_json)));
      },
      py::arg("spec_json"));
  m.def("load_manifest", [](const std::filesystem::path& p) { return dataset::load_manifest(p).records; });
  // Same layout as `core synth`: bold/<subject>.csv plus manifest.csv.
  m.def("write_dataset", [](const std::filesystem::path& dir, const std::vector<dataset::SubjectRecord>& records) {
    std::filesystem::create_directories(dir / "bold");
    std::vector<std::string> paths;
    for (const auto& r : records) {
      paths.push_back("bold/" + r.subject_id + ".csv");
      dataset::write_timeseries_csv(dir / paths.back(), r.bold);
    }
    dataset::write_manifest(dir / "manifest.csv", records, paths);
    return dir / "manifest.csv";
  });

  m.def("default_config_json", [] { return io::to_json(harness::PipelineConfig{}).dump(); });

  py::class_<harness::FittedPipeline>(m, "FittedPipeline")
      .def_property_readonly("rois", [](const harness::FittedPipeline& f) { return f.rois; })
      .def_property_readonly("training_sites", [](const harness::FittedPipeline& f) { return f.training_sites; })
      .def_property_readonly("scaffold_size", [](const harness::FittedPipeline& f) { return f.scaffold.size(); })
      .def_property_readonly("epoch_loss", [](const harness::FittedPipeline& f) { return f.training.epoch_loss; })
      .def("scaffold_report_json",
           [](const harness::FittedPipeline& f) { return io::scaffold_report_json(f.scaffold).dump(); })
      .def("save", [](const harness::FittedPipeline& f, const std::filesystem::path& p) { io::save_bundle(p, f); });

  m.def(
      "fit",
      [](const std::vector<dataset::SubjectRecord>& records, const std::string& config_json) {
        const auto config = config_from(config_json);
        py::gil_scoped_release release;
        return harness::fit_pipeline(records, config);
      },
      py::arg("records"), py::arg("config_json") = "");
  m.def("load_bundle", [](const std::filesystem::path& p) { return io::load_bundle(p); });
  m.def(
      "predict",
      [](const harness::FittedPipeline& f, const std::vector<dataset::SubjectRecord>& records, std::size_t workers) {
        py::gil_scoped_release release;
        return harness::predict(f, records, workers);
      },
      py::arg("fitted"), py::arg("records"), py::arg("workers") = 1);
  m.def(
      "evaluate",
      [](const harness::FittedPipeline& f, const std::vector<dataset::SubjectRecord>& records, std::size_t workers) {
        harness::EvalReport r;
        {
          py::gil_scoped_release release;
          r = harness::evaluate(f, records, workers);
        }
        return io::to_json(r).dump();
      },
      py::arg("fitted"), py::arg("records"), py::arg("workers") = 1);
  m.def(
      "loso",
      [](const std::vector<dataset::SubjectRecord>& records, const std::string& config_json) {
        const auto config = config_from(config_json);
        harness::EvalReport r;
        {
          py::gil_scoped_release release;
          r = harness::run_loso(records, config);
        }
        return io::to_json(r).dump();
      },
      py::arg("records"), py::arg("config_json") = "");

  m.def("roc_auc", [](const std::vector<double>& s, const std::vector<int>& y) { return harness::roc_auc(s, y); });
  m.def("accuracy", [](const std::vector<double>& p, const std::vector<int>& y) { return harness::accuracy(p, y); });
}
