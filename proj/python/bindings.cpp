// Python extension: scoring, geometry, metrics and the command-line entry.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "ergorisk/cli.hpp"
#include "ergorisk/errors.hpp"
#include "ergorisk/geometry.hpp"
#include "ergorisk/metrics.hpp"
#include "ergorisk/pose_io.hpp"
#include "ergorisk/reba.hpp"

namespace py = pybind11;
using namespace ergorisk;

namespace {

RebaConfig config_from(const std::optional<std::string>& tables_json) {
  return tables_json ? parse_reba_config(*tables_json) : default_reba_config();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "REBA scoring and evaluation utilities";

  auto base = py::register_exception<Error>(m, "ErgoriskError", PyExc_RuntimeError);
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<NumericFault>(m, "NumericFault", base.ptr());

  m.def("version", [] { return std::string(ERGORISK_VERSION); });

  m.def(
      "joint_angle",
      [](std::pair<double, double> a, std::pair<double, double> b, std::pair<double, double> c) {
        return joint_angle({a.first, a.second}, {b.first, b.second}, {c.first, c.second});
      },
      "Angle at b between rays b->a and b->c, in degrees.", py::arg("a"), py::arg("b"), py::arg("c"));

  m.def(
      "inclination_angle",
      [](std::pair<double, double> top, std::pair<double, double> bottom, double epsilon) {
        return inclination_angle({top.first, top.second}, {bottom.first, bottom.second}, epsilon);
      },
      py::arg("top"), py::arg("bottom"), py::arg("epsilon") = 1e-6);

  m.def("risk_class", &risk_class, py::arg("s_reba"));
  m.def("default_tables_json", [] { return reba_config_to_json(default_reba_config()); });

  // One JSONL skeleton record in, one scoring result (JSON text) out.
  m.def(
      "score_json",
      [](const std::string& record, double vis_threshold, const std::optional<std::string>& tables_json) {
        const Skeleton s = filter_visibility(parse_jsonl_record(record), vis_threshold);
        return reba_result_to_json(assess(s, config_from(tables_json)));
      },
      py::arg("record"), py::arg("vis_threshold") = kDefaultVisibilityThreshold, py::arg("tables_json") = py::none());

  m.def(
      "evaluate_json",
      [](const std::vector<double>& probs, const std::vector<int>& labels, std::size_t classes) {
        return metrics::evaluate_predictions(probs, labels, classes).to_json();
      },
      "Report for row-major [n, classes] probabilities and 0-based labels.", py::arg("probs"), py::arg("labels"),
      py::arg("classes") = 8);

  // Runs the command-line tool in process; returns (exit code, stdout, stderr).
  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::vector<const char*> argv{"ergorisk"};
        for (const auto& a : args) argv.push_back(a.c_str());
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
        }
        return std::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"));
}
