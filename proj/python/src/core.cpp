#include "transportgrad/bench.hpp"
#include "transportgrad/cli.hpp"

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

namespace py = pybind11;
using namespace tg;

using Distribution = std::variant<MvnParams, StudentTParams, MixtureParams>;

// The parameter types have no default constructor, so the stock variant caster
// cannot hold them.
namespace pybind11::detail {
template <>
struct type_caster<Distribution> {
  static constexpr auto name = const_name("Mvn | StudentT | Mixture");
  std::optional<Distribution> value;

  bool load(handle src, bool) {
    if (isinstance<MvnParams>(src)) {
      value.emplace(src.cast<MvnParams>());
    } else if (isinstance<StudentTParams>(src)) {
      value.emplace(src.cast<StudentTParams>());
    } else if (isinstance<MixtureParams>(src)) {
      value.emplace(src.cast<MixtureParams>());
    } else {
      return false;
    }
    return true;
  }

  template <typename T>
  using cast_op_type = pybind11::detail::cast_op_type<T>;
  operator Distribution*() { return &*value; }
  operator Distribution&() { return *value; }
  operator Distribution&&() && { return std::move(*value); }
};
}  // namespace pybind11::detail

namespace {

Matrix draw(const Distribution& d, int n, std::uint64_t seed) {
  if (n < 0) throw std::invalid_argument("n must be non-negative");
  RngStream rng(seed);
  return std::visit(
      [&](const auto& p) {
        Matrix out(n, p.dim());
        for (int i = 0; i < n; ++i) out.row(i) = sample(p, rng).value.transpose();
        return out;
      },
      d);
}

std::vector<std::string> coordinate_labels(const Distribution& d) {
  return std::visit([](const auto& p) { return labels_of(p.coordinates()); }, d);
}

Estimator make_estimator(const Distribution& d, const std::string& name, const TestFunction& f,
                         const std::optional<AvfParams>& avf, double temperature) {
  if (const auto* m = std::get_if<MvnParams>(&d)) {
    if (name == "pathwise") return pathwise_estimator(*m, avf, f);
    if (name == "score") return score_estimator(*m, f);
  } else if (const auto* t = std::get_if<StudentTParams>(&d)) {
    if (name == "pathwise") return pathwise_estimator(*t, avf, f);
  } else {
    const auto& p = std::get<MixtureParams>(d);
    if (avf) throw std::invalid_argument("avf applies to location-scale families only");
    if (name == "pathwise") return pathwise_estimator(p, f);
    if (name == "score") return score_estimator(p, f);
    if (name == "hybrid") return hybrid_estimator(p, f);
    if (name == "gs_soft") return gumbel_estimator(p, f, {temperature, GumbelMode::Soft});
    if (name == "gs_hard") return gumbel_estimator(p, f, {temperature, GumbelMode::Hard});
  }
  throw std::invalid_argument("estimator '" + name + "' is not available for this distribution");
}

Vector oracle_for(const Distribution& d, const TestFunction& f) {
  return std::visit([&](const auto& p) { return analytic_grad_oracle(p, f); }, d);
}

TransportProblem problem_for(const Distribution& d, const std::optional<AvfParams>& avf) {
  if (const auto* m = std::get_if<MvnParams>(&d)) return transport_problem(*m, avf);
  if (const auto* t = std::get_if<StudentTParams>(&d)) return transport_problem(*t, avf);
  if (avf) throw std::invalid_argument("avf applies to location-scale families only");
  return transport_problem(std::get<MixtureParams>(d));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Transport-equation gradient estimators (C++ core)";
  m.attr("__version__") = kToolVersion;

  // special functions
  m.def("erfc", &tg::erfc, py::arg("x"));
  m.def("erfcx", &tg::erfcx, py::arg("x"));
  m.def("std_normal_cdf", &std_normal_cdf, py::arg("x"));
  m.def("radial_cdf", &radial_cdf, py::arg("z"), py::arg("dim"),
        "(2 pi)^{-D/2} \\int_z^inf t^{D-1} e^{-t^2/2} dt");
  m.def("log_radial_cdf", &log_radial_cdf, py::arg("z"), py::arg("dim"));

  py::class_<AvfParams>(m, "AvfParams")
      .def(py::init<Matrix, Matrix>(), py::arg("b"), py::arg("c"))
      .def_static("zeros", &AvfParams::zeros, py::arg("rank"), py::arg("dim"))
      .def_static(
          "random",
          [](int rank, int dim, double scale, std::uint64_t seed) {
            RngStream rng(seed);
            return AvfParams::random(rank, dim, scale, rng);
          },
          py::arg("rank"), py::arg("dim"), py::arg("scale") = 1.0, py::arg("seed") = 0)
      .def_readwrite("b", &AvfParams::b)
      .def_readwrite("c", &AvfParams::c)
      .def_property_readonly("rank", &AvfParams::rank)
      .def_property_readonly("dim", &AvfParams::dim)
      .def("pair_scalars", &AvfParams::pair_scalars);

  py::class_<MvnParams>(m, "Mvn")
      .def(py::init<Vector, Matrix>(), py::arg("mean"), py::arg("chol"))
      .def_readonly("mean", &MvnParams::mean)
      .def_readonly("chol", &MvnParams::chol)
      .def_property_readonly("dim", &MvnParams::dim);

  py::class_<StudentTParams>(m, "StudentT")
      .def(py::init<Vector, Matrix, double>(), py::arg("mean"), py::arg("chol"), py::arg("dof"))
      .def_readonly("mean", &StudentTParams::mean)
      .def_readonly("chol", &StudentTParams::chol)
      .def_readonly("dof", &StudentTParams::dof)
      .def_property_readonly("dim", &StudentTParams::dim);

  py::class_<MixtureParams>(m, "Mixture")
      .def_static(
          "shared_diag_cov",
          [](Vector logits, Matrix means, Vector scale) {
            return MixtureParams(SharedDiagCov{std::move(logits), std::move(means), std::move(scale)});
          },
          py::arg("logits"), py::arg("means"), py::arg("scale"))
      .def_static(
          "zero_mean_gsm",
          [](Vector logits, Vector scale, Vector multipliers) {
            return MixtureParams(ZeroMeanGsm{std::move(logits), std::move(scale), std::move(multipliers)});
          },
          py::arg("logits"), py::arg("scale"), py::arg("multipliers"))
      .def_static(
          "gsm",
          [](Vector logits, Matrix means, Vector scale, Vector multipliers) {
            return MixtureParams(
                Gsm{std::move(logits), std::move(means), std::move(scale), std::move(multipliers)});
          },
          py::arg("logits"), py::arg("means"), py::arg("scale"), py::arg("multipliers"))
      .def_static(
          "diag_normals",
          [](Vector logits, Matrix means, Matrix scales) {
            return MixtureParams(DiagNormals{std::move(logits), std::move(means), std::move(scales)});
          },
          py::arg("logits"), py::arg("means"), py::arg("scales"))
      .def_static(
          "random",
          [](const std::string& family, int dim, int components, std::uint64_t seed) {
            const auto fam = parse_family(family);
            if (!fam) throw std::invalid_argument("unknown family '" + family + "'");
            RngStream rng(seed);
            return random_mixture(*fam, dim, components, rng);
          },
          py::arg("family"), py::arg("dim"), py::arg("components"), py::arg("seed") = 0)
      .def_property_readonly("family", [](const MixtureParams& p) { return family_name(p.family()); })
      .def_property_readonly("dim", &MixtureParams::dim)
      .def_property_readonly("components", &MixtureParams::components)
      .def_property_readonly("weights", &MixtureParams::weights)
      .def_property_readonly("means", &MixtureParams::effective_means)
      .def_property_readonly("scales", &MixtureParams::effective_scales);

  py::class_<TestFunction>(m, "TestFunction")
      .def_static(
          "from_name",
          [](const std::string& name, int dim, std::uint64_t seed) {
            RngStream rng(seed);
            auto f = make_test_function(name, dim, rng);
            if (!f) throw std::invalid_argument("unknown test function '" + name + "'");
            return *f;
          },
          py::arg("name"), py::arg("dim"), py::arg("seed") = 0)
      .def_static("quadratic", &make_quadratic, py::arg("coupling"))
      .def_static("quartic", &make_quartic, py::arg("coupling"))
      .def_static("cosine", &make_cosine, py::arg("coupling"))
      .def_static("squared_norm", &make_squared_norm, py::arg("dim"))
      .def_readonly("name", &TestFunction::name)
      .def_readonly("coupling", &TestFunction::coupling)
      .def("__call__", [](const TestFunction& f, const Vector& z) { return f.value(z); })
      .def("gradient", [](const TestFunction& f, const Vector& z) { return f.gradient(z); });

  m.def("sample", &draw, py::arg("dist"), py::arg("n"), py::arg("seed") = 0,
        "n x D array of draws");
  m.def("log_density",
        [](const Distribution& d, const Vector& z) {
          return std::visit([&](const auto& p) { return log_density(p, z); }, d);
        },
        py::arg("dist"), py::arg("z"));
  m.def("coordinates", &coordinate_labels, py::arg("dist"));
  m.def("score",
        [](const Distribution& d, const Vector& z) -> Vector {
          if (const auto* mv = std::get_if<MvnParams>(&d)) return score(*mv, z);
          if (const auto* mx = std::get_if<MixtureParams>(&d)) return score(*mx, z);
          throw std::invalid_argument("score is implemented for Mvn and Mixture");
        },
        py::arg("dist"), py::arg("z"));
  m.def("velocity_fields",
        [](const Distribution& d, const Vector& z, const std::optional<AvfParams>& avf) -> Matrix {
          if (const auto* mv = std::get_if<MvnParams>(&d)) return mvn_fields(*mv, avf, z);
          if (const auto* t = std::get_if<StudentTParams>(&d)) return student_t_fields(*t, avf, z);
          if (avf) throw std::invalid_argument("avf applies to location-scale families only");
          return mixture_fields(std::get<MixtureParams>(d), z);
        },
        py::arg("dist"), py::arg("z"), py::arg("avf") = py::none(),
        "D x P matrix; column p is the field of coordinates(dist)[p]");

  m.def("max_transport_residual",
        [](const Distribution& d, int n_points, std::uint64_t seed, const std::optional<AvfParams>& avf) {
          const TransportProblem prob = problem_for(d, avf);
          RngStream rng(seed);
          double worst = 0.0;
          for (int i = 0; i < n_points; ++i) {
            for (const auto& r : transport_residuals(prob, prob.sampler(rng))) {
              worst = std::max(worst, r.relative_residual);
            }
          }
          return worst;
        },
        py::arg("dist"), py::arg("n_points") = 100, py::arg("seed") = 0, py::arg("avf") = py::none());

  m.def("gradient_samples",
        [](const Distribution& d, const std::string& estimator, const TestFunction& f, int n,
           std::uint64_t seed, const std::optional<AvfParams>& avf, double temperature) {
          RngStream rng(seed);
          const auto labels = coordinate_labels(d);
          return collect_batch(make_estimator(d, estimator, f, avf, temperature), labels, n, rng).samples;
        },
        py::arg("dist"), py::arg("estimator"), py::arg("f"), py::arg("n"), py::arg("seed") = 0,
        py::arg("avf") = py::none(), py::arg("temperature") = 1.0,
        "n x P single-sample gradient estimates; columns follow coordinates(dist)");

  m.def("analytic_gradient", &oracle_for, py::arg("dist"), py::arg("f"),
        "exact d E[f] / d theta for quadratic and squared-norm test functions");

  m.def("unbiasedness_ztest",
        [](const Distribution& d, const std::string& estimator, const TestFunction& f, int n,
           std::uint64_t seed, const std::optional<AvfParams>& avf) {
          RngStream rng(seed);
          const auto reports = unbiasedness_ztest(make_estimator(d, estimator, f, avf, 1.0),
                                                  coordinate_labels(d), oracle_for(d, f), n, rng);
          py::list out;
          for (const auto& r : reports) {
            py::dict row;
            row["coordinate"] = r.coordinate;
            row["mean"] = r.estimator_mean;
            row["oracle"] = r.oracle_value;
            row["standard_error"] = r.standard_error;
            row["z"] = r.z_score;
            row["pass"] = r.pass;
            out.append(row);
          }
          return out;
        },
        py::arg("dist"), py::arg("estimator"), py::arg("f"), py::arg("n"), py::arg("seed") = 0,
        py::arg("avf") = py::none());

  m.def("variance_grad_lambda",
        [](const MvnParams& p, const AvfParams& avf, const TestFunction& f, const Vector& z) {
          const LambdaGradient g = variance_grad_lambda(p, avf, f, z);
          return py::make_tuple(g.b, g.c, g.surrogate);
        },
        py::arg("dist"), py::arg("avf"), py::arg("f"), py::arg("z"),
        "(dB, dC, surrogate) of sum over coordinates of (grad f . v)^2");

  m.def("adapt_avf",
        [](const MvnParams& p, const TestFunction& f, int rank, int steps, double step_size_lambda,
           int samples_per_step, bool freeze_theta, std::uint64_t seed) {
          RngStream rng(seed);
          AvfOptimizerConfig cfg;
          cfg.rank = rank;
          cfg.n_steps = steps;
          cfg.step_size_lambda = step_size_lambda;
          cfg.samples_per_step = samples_per_step;
          cfg.freeze_theta = freeze_theta;
          const AvfParams init = initial_avf(rank, p.dim(), rng);
          const AvfRunResult r = avf_optimize(p, init, f, cfg, rng);
          Vector surrogate(static_cast<Eigen::Index>(r.trace.size()));
          for (std::size_t i = 0; i < r.trace.size(); ++i) {
            surrogate[static_cast<Eigen::Index>(i)] = r.trace[i].surrogate;
          }
          return py::make_tuple(r.avf, r.params, surrogate);
        },
        py::arg("dist"), py::arg("f"), py::arg("rank") = 1, py::arg("steps") = 1000,
        py::arg("step_size_lambda") = 3e-3, py::arg("samples_per_step") = 1,
        py::arg("freeze_theta") = true, py::arg("seed") = 0,
        "returns (avf, params, per-step surrogate)");

  m.def("run_cli",
        [](const std::vector<std::string>& args) {
          std::ostringstream out, err;
          int code = 0;
          {
            py::gil_scoped_release release;
            code = run_cli(args, out, err);
          }
          return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "runs tgbench in-process; returns (exit_code, stdout, stderr)");
}
