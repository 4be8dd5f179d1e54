#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "angdiff/argen.hpp"
#include "angdiff/commands.hpp"
#include "angdiff/param.hpp"
#include "angdiff/precision.hpp"
#include "angdiff/sampler.hpp"
#include "angdiff/schedule.hpp"
#include "angdiff/toyspace.hpp"

namespace py = pybind11;
using namespace angdiff;

namespace {

py::array_t<double> to_array(const Vec& v) {
  py::array_t<double> out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

// JSON crosses the boundary as text so nested structure maps onto plain dicts.
py::object to_python(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

nlohmann::json from_python(const py::object& o) {
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

Parameterization param_from(const std::string& kind, double psi_offset, double scale) {
  if (kind == "custom") return Parameterization::custom(psi_offset, scale);
  return Parameterization::from_kind(param_kind_from_string(kind));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Angular diffusion parameterizations, samplers and toy experiments";

  py::class_<Schedule>(m, "Schedule")
      .def_property_readonly("steps", &Schedule::steps)
      .def("alpha_bar", &Schedule::alpha_bar)
      .def("phase", &Schedule::phase)
      .def("cos_phase", &Schedule::cos_phase)
      .def("sin_phase", &Schedule::sin_phase)
      .def("table", [](const Schedule& s) { return to_array(s.table()); })
      .def("to_json", [](const Schedule& s) { return to_python(s.to_json()); });
  m.def(
      "make_schedule", [](const std::string& kind, int T) { return make_schedule(schedule_kind_from_string(kind), T); },
      py::arg("kind") = "cosine", py::arg("T") = 1000);
  m.def("forward_diffuse", [](const Schedule& s, int t, const Vec& x, const Vec& eps) {
    return to_array(forward_diffuse(s, t, x, eps));
  });

  py::class_<ParamAngles>(m, "ParamAngles")
      .def_readonly("cos_phi", &ParamAngles::cos_phi)
      .def_readonly("sin_phi", &ParamAngles::sin_phi)
      .def_readonly("cos_psi", &ParamAngles::cos_psi)
      .def_readonly("sin_psi", &ParamAngles::sin_psi)
      .def_readonly("denom", &ParamAngles::denom)
      .def_readonly("scale", &ParamAngles::scale);
  py::class_<Parameterization>(m, "Parameterization")
      .def(py::init(&param_from), py::arg("kind") = "v", py::arg("psi_offset") = 0.0, py::arg("scale") = 1.0)
      .def_property_readonly("kind", [](const Parameterization& p) { return to_string(p.kind); })
      .def_readonly("psi_offset", &Parameterization::psi_offset)
      .def_readonly("scale", &Parameterization::scale)
      .def("angles", &Parameterization::angles)
      .def("psi", &Parameterization::psi)
      .def("__repr__", [](const Parameterization& p) { return "Parameterization(" + p.to_json().dump() + ")"; });

  m.def("target", [](const Parameterization& p, const Schedule& s, int t, const Vec& x, const Vec& eps) {
    return to_array(target(p, s, t, x, eps).values);
  });
  m.def("recover_x_eps", [](const Parameterization& p, const Schedule& s, int t, const Vec& x_t, const Vec& u) {
    const auto r = recover_x_eps(p, s, t, x_t, u);
    return py::make_tuple(to_array(r.x), to_array(r.eps));
  });
  m.def("convert",
        [](const Parameterization& from, const Parameterization& to, const Schedule& s, int t, const Vec& x_t,
           const Vec& u) { return to_array(convert(from, to, s, t, x_t, u)); });
  m.def("check_well_posed", &check_well_posed);

  py::class_<PrecisionModel>(m, "PrecisionModel")
      .def(py::init([](const std::string& mode, double delta_max) {
             PrecisionModel pm;
             pm.mode = precision_mode_from_string(mode);
             pm.delta_max = delta_max;
             validate(pm);
             return pm;
           }),
           py::arg("mode") = "exact", py::arg("delta_max") = kBf16Delta)
      .def_property_readonly("mode", [](const PrecisionModel& pm) { return to_string(pm.mode); })
      .def_readonly("delta_max", &PrecisionModel::delta_max);
  m.def("round_bf16", [](const Vec& x) { return to_array(round_bf16(ConstSpan(x))); });
  m.def(
      "inject",
      [](const PrecisionModel& pm, const Vec& u, std::uint64_t seed) {
        Rng rng(seed);
        return to_array(inject(pm, u, rng));
      },
      py::arg("pm"), py::arg("u"), py::arg("seed") = 0);
  m.def("theoretical_vloss_overhead", &theoretical_vloss_overhead);
  m.def("eps_pred_step_error_std", &eps_pred_step_error_std);

  m.def(
      "ddim_step",
      [](const Parameterization& p, const Schedule& s, int t_from, int t_to, const Vec& x_t, const Vec& u,
         const PrecisionModel& pm, std::uint64_t seed) {
        Rng rng(seed);
        return to_array(ddim_step_general(p, s, t_from, t_to, x_t, u, pm, rng));
      },
      py::arg("p"), py::arg("s"), py::arg("t_from"), py::arg("t_to"), py::arg("x_t"), py::arg("u"),
      py::arg("pm") = PrecisionModel{}, py::arg("seed") = 0);
  m.def("ddpm_posterior", [](const Schedule& s, int t_from, int t_to) {
    const auto c = ddpm_posterior(s, t_from, t_to);
    return py::dict(py::arg("coef_x0") = c.coef_x0, py::arg("coef_xt") = c.coef_xt, py::arg("variance") = c.variance);
  });
  m.def(
      "guided_output",
      [](double omega, const std::string& space, const Parameterization& p, const Schedule& s, int t, const Vec& x_t,
         const Vec& cond, const Vec& uncond) {
        return to_array(guided_output({omega, guidance_space_from_string(space)}, p, s, t, x_t, cond, uncond));
      },
      py::arg("omega"), py::arg("space"), py::arg("p"), py::arg("s"), py::arg("t"), py::arg("x_t"), py::arg("cond"),
      py::arg("uncond"));
  m.def(
      "step_list",
      [](const Schedule& s, int steps, const std::string& spacing) {
        return make_step_list(s, steps, step_spacing_from_string(spacing));
      },
      py::arg("s"), py::arg("steps"), py::arg("spacing") = "uniform-t");

  py::class_<ToyDataset>(m, "ToyDataset")
      .def_static("gmm2d", [](bool labeled) { return ToyDataset::default_gmm2d(labeled); }, py::arg("labeled") = false)
      .def_static("checkerboard", [] { return ToyDataset::checkerboard(); })
      .def_static("correlated_grid", [] { return ToyDataset::correlated_grid(); })
      .def_static("from_manifest", [](const py::object& o) { return ToyDataset::from_manifest(from_python(o)); })
      .def_property_readonly("dim", &ToyDataset::dim)
      .def_property_readonly("tokens_per_sample", &ToyDataset::tokens_per_sample)
      .def_property_readonly("num_labels", &ToyDataset::num_labels)
      .def("manifest", [](const ToyDataset& d) { return to_python(d.manifest()); })
      .def(
          "sample_tokens",
          [](const ToyDataset& d, int count, std::uint64_t seed) {
            Rng rng(seed);
            return Eigen::MatrixXd(sample_tokens(d, count, rng));
          },
          py::arg("count"), py::arg("seed") = 0);
  m.def("hist_kl", &hist_kl, py::arg("a"), py::arg("b"), py::arg("bins") = 16);
  m.def("mmd_rbf", &mmd_rbf, py::arg("a"), py::arg("b"), py::arg("bandwidth") = 1.0);

  py::class_<GmmOracle>(m, "GmmOracle")
      .def(py::init<const ToyDataset&, Schedule>())
      .def(
          "posterior_mean",
          [](const GmmOracle& o, int t, const Vec& x_t, int label) { return to_array(o.posterior_mean(t, x_t, label)); },
          py::arg("t"), py::arg("x_t"), py::arg("label") = -1)
      .def(
          "predict",
          [](const GmmOracle& o, const Parameterization& p, int t, const Vec& x_t, int label) {
            return to_array(o.predict(p, t, x_t, label));
          },
          py::arg("p"), py::arg("t"), py::arg("x_t"), py::arg("label") = -1);

  m.def(
      "draw_mask_ratios",
      [](const std::string& stage, int count, std::uint64_t seed) {
        const auto ms = stage == "stage1" ? MaskSchedule::stage1() : MaskSchedule::stage2();
        require(stage == "stage1" || stage == "stage2", "stage must be 'stage1' or 'stage2'");
        Rng rng(seed);
        Vec out(static_cast<std::size_t>(count));
        for (double& r : out) r = draw_mask_ratio(ms, rng);
        return to_array(out);
      },
      py::arg("stage"), py::arg("count"), py::arg("seed") = 0);

  m.def("command_names", &command_names);
  m.def("command_defaults", [](const std::string& c) { return to_python(command_defaults(c)); });
  m.def(
      "run_command",
      [](const std::string& command, const std::vector<std::string>& sets, std::optional<std::int64_t> seed,
         std::optional<std::string> out, std::optional<std::string> config) {
        const auto cfg = make_config(command, config, sets, seed, out);
        nlohmann::json summary;
        {
          py::gil_scoped_release release;
          summary = run_command(cfg);
        }
        return to_python(summary);
      },
      py::arg("command"), py::arg("sets") = std::vector<std::string>{}, py::arg("seed") = py::none(),
      py::arg("out") = py::none(), py::arg("config") = py::none());
}
