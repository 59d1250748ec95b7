#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "crfreid/pipeline.hpp"

namespace py = pybind11;
using namespace crfreid;

namespace {

using KernelTuple = std::tuple<FeatureMatrix, double, double>;

CrfProblem make_problem(const Vector& unary_cost, const std::vector<KernelTuple>& kernels, double alpha) {
  CrfProblem p;
  p.unary_cost = unary_cost;
  for (const auto& [points, sigma, weight] : kernels) p.kernels.push_back({points, sigma, weight});
  p.alpha = alpha;
  p.validate();
  return p;
}

InferenceSettings make_settings(const std::string& backend, double damping, int max_iter, double tol) {
  InferenceSettings s;
  s.backend = parse_backend(backend);
  s.damping = damping;
  s.max_iterations = max_iter;
  s.convergence_tol = tol;
  s.validate();
  return s;
}

RunConfig make_config(const std::string& manifest, const std::string& params, const std::string& out,
                      std::uint64_t seed, const std::string& backend, double damping, int max_iter, double tol) {
  RunConfig c;
  c.manifest = manifest;
  c.params = params;
  c.out = out;
  c.seed = seed;
  c.inference = make_settings(backend, damping, max_iter, tol);
  return c;
}

}  // namespace

PYBIND11_MODULE(_crfreid, m) {
  m.doc() = "CRF re-identification ranking: potentials, mean-field inference, learning, evaluation";
  py::register_exception<Error>(m, "CrfreidError", PyExc_ValueError);

  m.def("euclidean_distance", [](const Vector& a, const Vector& b) { return euclidean_distance(as_span(a), as_span(b)); });
  m.def("bhattacharyya_distance",
        [](const Vector& a, const Vector& b) { return bhattacharyya_distance(as_span(a), as_span(b)); });
  m.def("gaussian_kernel",
        [](const Vector& a, const Vector& b, double sigma) { return gaussian_kernel(as_span(a), as_span(b), sigma); });

  m.def("exact_filter", &exact_filter, py::arg("points"), py::arg("values"), py::arg("sigma"));
  m.def(
      "lattice_filter",
      [](const FeatureMatrix& points, const Vector& values, double sigma) {
        return PermutohedralLattice(points, sigma).filter(values);
      },
      py::arg("points"), py::arg("values"), py::arg("sigma"));

  m.def(
      "infer_marginals",
      [](const Vector& unary_cost, const std::vector<KernelTuple>& kernels, double alpha, const std::string& backend,
         double damping, int max_iter, double tol) {
        const auto r = infer_marginals(make_problem(unary_cost, kernels, alpha),
                                       make_settings(backend, damping, max_iter, tol));
        return py::make_tuple(r.marginals.q, r.iterations, r.converged);
      },
      py::arg("unary_cost"), py::arg("kernels"), py::arg("alpha"), py::arg("backend") = "exact",
      py::arg("damping") = 0.0, py::arg("max_iter") = 100, py::arg("tol") = 1e-5,
      "Returns (marginals, iterations, converged). kernels: list of (points, sigma, weight).");
  m.def(
      "exact_joint_enumeration",
      [](const Vector& unary_cost, const std::vector<KernelTuple>& kernels, double alpha) {
        return exact_joint_enumeration(make_problem(unary_cost, kernels, alpha));
      },
      py::arg("unary_cost"), py::arg("kernels"), py::arg("alpha"));

  m.def(
      "width_grid", [](double lambda, int low, int high) { return width_grid({lambda, low, high}); },
      py::arg("lam") = 1.0, py::arg("low") = 2, py::arg("high") = 2);
  m.def(
      "learn_kernel_weights", [](const FeatureMatrix& design, const Vector& gt) { return learn_kernel_weights(design, gt); },
      py::arg("design"), py::arg("gt"));
  m.def("project_to_simplex", &project_to_simplex);

  m.def(
      "max_f_score",
      [](const Vector& scores, const std::vector<std::size_t>& relevant) {
        return max_f_score(precision_recall_curve(as_span(scores), relevant));
      },
      py::arg("scores"), py::arg("relevant"));

  m.def(
      "synth",
      [](const std::string& out, std::uint64_t seed, int persons, int images_per_person, double within,
         double between) {
        SyntheticSpec spec;
        spec.persons = persons;
        spec.images_per_person = images_per_person;
        spec.within_person_spread = within;
        spec.between_person_spread = between;
        spec.seed = seed;
        return cmd_synth(spec, out);
      },
      py::arg("out"), py::arg("seed"), py::arg("persons") = SyntheticSpec{}.persons,
      py::arg("images_per_person") = SyntheticSpec{}.images_per_person,
      py::arg("within") = SyntheticSpec{}.within_person_spread,
      py::arg("between") = SyntheticSpec{}.between_person_spread);

  m.def(
      "train",
      [](const std::string& manifest, const std::string& out, std::uint64_t seed, const std::vector<double>& alpha_grid,
         int folds, const std::string& backend) {
        RunConfig c = make_config(manifest, "", out, seed, backend, 0.0, 100, 1e-5);
        c.alpha_grid = alpha_grid;
        c.folds = folds;
        return cmd_train(c);
      },
      py::arg("manifest"), py::arg("out"), py::arg("seed"), py::arg("alpha_grid") = default_alpha_grid(),
      py::arg("folds") = 3, py::arg("backend") = "exact");

  m.def(
      "infer",
      [](const std::string& manifest, const std::string& params, const std::string& out, const std::string& probe,
         const std::string& backend) {
        const auto r = cmd_infer(make_config(manifest, params, out, 0, backend, 0.0, 100, 1e-5), probe);
        return py::make_tuple(r.marginals.q, r.iterations, r.converged);
      },
      py::arg("manifest"), py::arg("params"), py::arg("out"), py::arg("probe"), py::arg("backend") = "exact");

  m.def(
      "evaluate",
      [](const std::string& manifest, const std::string& params, const std::string& out, std::uint64_t seed,
         int runs, const std::string& backend) {
        RunConfig c = make_config(manifest, params, out, seed, backend, 0.0, 100, 1e-5);
        c.runs = runs;
        return cmd_eval(c);
      },
      py::arg("manifest"), py::arg("params"), py::arg("out"), py::arg("seed"), py::arg("runs") = 5,
      py::arg("backend") = "exact", "Returns (mean_max_f, baseline_mean_max_f).");
}
