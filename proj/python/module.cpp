#include <sstream>

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "glyphsim/analysis.hpp"
#include "glyphsim/error.hpp"
#include "glyphsim/loss.hpp"
#include "glyphsim/pipeline.hpp"
#include "glyphsim/structure.hpp"

namespace py = pybind11;
using namespace glyphsim;

namespace {

py::dict loss(const Eigen::MatrixXd& z, std::optional<std::vector<int64_t>> pair, double temperature,
              double var_weight, double var_eps, double unif_weight) {
  const auto p = pair ? *pair : trainer::half_pairing(z.rows());
  const auto r = trainer::contrastive_loss(z, p, {temperature, var_weight, var_eps, unif_weight});
  py::dict d;
  d["total"] = r.terms.total;
  d["nt_xent"] = r.terms.nt_xent;
  d["variance"] = r.terms.variance;
  d["uniformity"] = r.terms.uniformity;
  d["grad"] = r.grad;
  return d;
}

py::list merges(const structure::Dendrogram& d) {
  py::list out;
  for (const auto& m : d.merges) out.append(py::make_tuple(m.a, m.b, m.height, m.size));
  return out;
}

}  // namespace

PYBIND11_MODULE(_glyphsim, m) {
  m.attr("__version__") = pipeline::kVersion;

  py::register_exception<InvalidInput>(m, "InvalidInput", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_RuntimeError);
  py::register_exception<MissingArtifact>(m, "MissingArtifact", PyExc_FileNotFoundError);

  m.def("contrastive_loss", &loss, py::arg("z"), py::arg("pair") = py::none(), py::arg("temperature") = 0.1,
        py::arg("var_weight") = 1.0, py::arg("var_eps") = 1e-4, py::arg("unif_weight") = 0.1,
        "Loss terms and gradient for a 2N x d batch; default pairing is i <-> i + N.");
  m.def("half_pairing", &trainer::half_pairing, py::arg("rows"));

  m.def("welch_t", [](const std::vector<double>& a, const std::vector<double>& b) {
    const auto t = analysis::welch_t(a, b);
    return py::dict(py::arg("t") = t.t, py::arg("p") = t.p, py::arg("df") = t.df,
                    py::arg("degenerate") = t.degenerate);
  });
  m.def("cohens_d", [](const std::vector<double>& a, const std::vector<double>& b) {
    const auto e = analysis::cohens_d(a, b);
    return py::make_tuple(e.d, e.label);
  });
  m.def("effect_label", &analysis::effect_label);
  m.def("bonferroni", &analysis::bonferroni);

  m.def("cosine_distances", &structure::cosine_distances);
  m.def("agglomerate",
        [](const Eigen::MatrixXd& distances, const std::vector<std::string>& labels, const std::string& linkage) {
          return merges(structure::agglomerate(distances, labels, structure::parse_linkage(linkage)));
        },
        py::arg("distances"), py::arg("labels"), py::arg("linkage") = "average",
        "Merges as (a, b, height, size); leaves are 0..n-1, merge k makes node n + k.");
  m.def("pca", [](const Eigen::MatrixXd& points, int dims) {
    const auto p = structure::pca_project(points, dims);
    return py::make_tuple(p.coords, p.explained);
  }, py::arg("points"), py::arg("dims") = 2);
  m.def("tsne",
        [](const Eigen::MatrixXd& points, double perplexity, int iterations, uint64_t seed) {
          structure::TsneOptions o;
          o.perplexity = perplexity;
          o.iterations = iterations;
          o.seed = seed;
          return structure::tsne_project(points, o).coords;
        },
        py::arg("points"), py::arg("perplexity") = 30.0, py::arg("iterations") = 1000, py::arg("seed") = 0);

  m.def("run_cli", [](std::vector<std::string> args) {
    args.insert(args.begin(), "glyphsim");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    int code;
    {
      py::gil_scoped_release release;
      code = pipeline::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    }
    return py::make_tuple(code, out.str(), err.str());
  }, "Run a glyphsim subcommand in process; returns (exit_code, stdout, stderr).");
}
