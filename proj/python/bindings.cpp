#include "fbridge/app.hpp"
#include "fbridge/oracle.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <map>
#include <string>

namespace py = pybind11;
using namespace fbridge;

namespace {

using StringMap = std::map<std::string, std::string>;

app::RunConfig config_from(const StringMap& values) {
  io::KeyValueConfig kv;
  for (const auto& [k, v] : values) kv.set(k, v);
  return app::run_config_from(kv, {});
}

Mat path_matrix(const PathSegment& p) {
  Mat out(static_cast<Eigen::Index>(p.values.size()), p.values.empty() ? 0 : p.values[0].size());
  for (std::size_t i = 0; i < p.values.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = p.values[i].transpose();
  return out;
}

py::dict counter(const AcceptanceCounter& c) {
  py::dict d;
  d["accepted"] = c.accepted;
  d["proposed"] = c.proposed;
  d["rate"] = c.rate();
  return d;
}

py::dict simulate(const StringMap& values) {
  const app::RunConfig cfg = config_from(values);
  const app::SimulationResult r = app::simulate(cfg);
  py::dict out;
  out["observations"] = r.scheme;
  out["truth_times"] = r.truth.grid;
  out["truth"] = path_matrix(r.truth);
  return out;
}

py::dict infer(const StringMap& values, const ObservationScheme& scheme) {
  const app::RunConfig cfg = config_from(values);
  const Problem problem = make_problem(cfg, scheme);
  const ChainConfig chain = make_chain_config(cfg, problem);
  Trace trace;
  {
    py::gil_scoped_release release;
    trace = run_chain(problem, chain);
  }
  const auto n = static_cast<Eigen::Index>(trace.records.size());
  Mat theta(n, problem.model.parameter_dim);
  for (Eigen::Index i = 0; i < n; ++i) theta.row(i) = trace.records[static_cast<std::size_t>(i)].theta.transpose();
  const app::ParameterSummary ps = app::summarize_theta(trace, cfg.burnin, 0.95);

  py::dict out;
  out["theta"] = theta;
  out["theta_mean"] = ps.mean;
  out["theta_lower"] = ps.lower;
  out["theta_upper"] = ps.upper;
  if (problem.noise) {
    Vec eps(n);
    for (Eigen::Index i = 0; i < n; ++i) eps[i] = trace.records[static_cast<std::size_t>(i)].eps[0];
    out["eps"] = eps;
  }
  py::dict acc;
  acc["even"] = counter(trace.even);
  acc["odd"] = counter(trace.odd);
  acc["start"] = counter(trace.start);
  acc["end"] = counter(trace.end);
  acc["theta"] = counter(trace.theta);
  acc["noise"] = counter(trace.noise);
  out["acceptance"] = acc;
  out["proposal_failures"] = trace.proposal_failures;
  return out;
}

py::list validate(std::uint64_t seed, int configs) {
  ValidationOptions opt;
  opt.seed = seed;
  opt.configs = configs;
  ValidationReport report;
  {
    py::gil_scoped_release release;
    report = run_validation(opt);
  }
  py::list out;
  for (const auto& c : report.checks) {
    py::dict d;
    d["name"] = c.name;
    d["passed"] = c.passed;
    d["max_error"] = c.max_error;
    d["tolerance"] = c.tolerance;
    d["detail"] = c.detail;
    out.append(d);
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Guided-proposal MCMC for partially observed diffusions";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  py::class_<ObservationScheme>(m, "ObservationScheme")
      .def(py::init<>())
      .def("append", &ObservationScheme::push_back, py::arg("t"), py::arg("L"), py::arg("cov"), py::arg("v"))
      .def("validate", &ObservationScheme::validate, py::arg("dim_state"))
      .def("__len__", &ObservationScheme::size)
      .def_readonly("times", &ObservationScheme::times)
      .def_readonly("values", &ObservationScheme::values)
      .def_readonly("projections", &ObservationScheme::projections)
      .def_readonly("noise_covs", &ObservationScheme::noise_covs);

  m.def("models", [] {
    std::map<std::string, std::string> out;
    auto& reg = ModelRegistry::global();
    for (const auto& name : reg.names()) out[name] = reg.get(name).description;
    return out;
  });
  m.def("simulate", &simulate, py::arg("config"));
  m.def("infer", &infer, py::arg("config"), py::arg("observations"));
  m.def("validate", &validate, py::arg("seed") = 20240611, py::arg("configs") = 200);
  m.def(
      "kalman_loglik",
      [](const std::string& model, const Vec& theta, const ObservationScheme& scheme, const Vec& x0_mean,
         const Mat& x0_cov, int steps) {
        const auto& entry = ModelRegistry::global().get(model);
        if (!entry.linear) throw ConfigError("model '" + model + "' has no linear form");
        const auto ssm = oracle::make_state_space(entry.linear(theta, static_cast<int>(x0_mean.size())), scheme, steps);
        return oracle::kalman_loglik(ssm, scheme.values, StartPrior{x0_mean, x0_cov});
      },
      py::arg("model"), py::arg("theta"), py::arg("observations"), py::arg("x0_mean"), py::arg("x0_cov"),
      py::arg("steps") = 200);
}
