#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "calibrax/calibration.hpp"
#include "calibrax/error.hpp"
#include "calibrax/losses.hpp"
#include "calibrax/matrixcore.hpp"
#include "calibrax/qpsolve.hpp"
#include "calibrax/rankanalysis.hpp"
#include "calibrax/subspaces.hpp"

namespace py = pybind11;
using namespace calibrax;

namespace {

std::vector<std::pair<double, double>> points(const CalibrationCurve& c) {
    std::vector<std::pair<double, double>> out;
    for (auto& p : c.points) out.push_back({p.epsilon, p.value});
    return out;
}

VMode parse_mode(const std::string& s) {
    if (s == "optimal") return VMode::optimal;
    if (s == "fixed_one") return VMode::fixed_one;
    throw config_error("v_mode must be optimal or fixed_one");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Calibration functions of quadratic surrogates";

    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            if (e.kind() == ErrorKind::config || e.kind() == ErrorKind::io)
                PyErr_SetString(PyExc_ValueError, e.what());
            else
                PyErr_SetString(PyExc_RuntimeError, e.what());
        }
    });

    m.def("gram_pseudoinverse", &gram_pseudoinverse, py::arg("a"));
    m.def(
        "project", [](const Matrix& basis, const Vector& x) { return project(make_projector(basis), x); },
        py::arg("basis"), py::arg("x"));

    py::class_<TreeSpec>(m, "TreeSpec")
        .def(py::init([](std::vector<int> children, std::vector<double> weights) {
                 TreeSpec t{std::move(children), std::move(weights)};
                 t.validate();
                 return t;
             }),
             py::arg("children"), py::arg("weights"))
        .def_readonly("children", &TreeSpec::children)
        .def_readonly("weights", &TreeSpec::weights)
        .def_property_readonly("depth", &TreeSpec::depth)
        .def_property_readonly("leaves", &TreeSpec::leaves);
    m.def("tree_distance", &tree_distance, py::arg("spec"), py::arg("i"), py::arg("j"));

    py::class_<LossMatrix>(m, "LossMatrix")
        .def_readonly("L", &LossMatrix::L)
        .def_readonly("output_labels", &LossMatrix::output_labels)
        .def_readonly("gt_labels", &LossMatrix::gt_labels)
        .def_readonly("l_max", &LossMatrix::l_max)
        .def_property_readonly("k", &LossMatrix::k)
        .def_property_readonly("m", &LossMatrix::m);
    m.def("loss_matrix", &make_loss_matrix, py::arg("L"));
    m.def("tree_loss_matrix", &tree_loss_matrix, py::arg("spec"));
    m.def("map_loss_matrix", &map_loss_matrix, py::arg("r"));
    m.def(
        "map_loss",
        [](std::vector<int> positions, std::vector<int> y) { return map_loss(Permutation{std::move(positions)}, y); },
        py::arg("positions"), py::arg("y"));

    py::class_<ScoreSubspace>(m, "ScoreSubspace")
        .def_readonly("F", &ScoreSubspace::F)
        .def_property_readonly("k", &ScoreSubspace::k)
        .def_property_readonly("d", &ScoreSubspace::d)
        .def_property_readonly("kind", [](const ScoreSubspace& s) { return kind_name(s.kind); })
        .def("projector", [](const ScoreSubspace& s) { return s.projector.dense(); });
    m.def("subspace", [](const Matrix& F) { return make_subspace(F); }, py::arg("F"));
    m.def("identity_subspace", &identity_subspace, py::arg("k"));
    m.def("tree_block_basis", &tree_block_basis, py::arg("spec"), py::arg("t"));
    m.def("f_map", &f_map, py::arg("r"));
    m.def("f_sort", &f_sort, py::arg("r"));
    m.def(
        "pair_projection_sqnorm",
        [](const ScoreSubspace& s, Index i, Index j) { return pair_projection_sqnorm(s, PairDelta{i, j}); },
        py::arg("S"), py::arg("i"), py::arg("j"));
    m.def("condition_number", &condition_number, py::arg("S"));
    m.def("gram_f_sort_closed", &gram_f_sort_closed, py::arg("r"));

    m.def(
        "solve_qp",
        [](const Matrix& H, const Vector& c, const Matrix& A_ineq, const Vector& b_ineq, const Matrix& A_eq,
           const Vector& b_eq, std::vector<bool> nonneg) {
            QPProblem p = make_qp(H, c);
            p.A_ineq = A_ineq.size() ? A_ineq : Matrix(0, H.rows());
            p.b_ineq = b_ineq;
            p.A_eq = A_eq.size() ? A_eq : Matrix(0, H.rows());
            p.b_eq = b_eq;
            p.nonneg = std::move(nonneg);
            QPSolution s = solve_qp(p);
            py::dict d;
            d["status"] = status_name(s.status);
            d["x"] = s.x;
            d["objective"] = s.objective;
            d["dual_objective"] = s.dual_objective;
            d["kkt_residual"] = s.kkt_residual;
            return d;
        },
        py::arg("H"), py::arg("c"), py::arg("A_ineq") = Matrix(0, 0), py::arg("b_ineq") = Vector(0),
        py::arg("A_eq") = Matrix(0, 0), py::arg("b_eq") = Vector(0), py::arg("nonneg") = std::vector<bool>{});

    m.def("excess_surrogate", &excess_surrogate, py::arg("S"), py::arg("L"), py::arg("theta"), py::arg("q"));
    m.def("excess_task", &excess_task, py::arg("L"), py::arg("f"), py::arg("q"));
    m.def("pair_calibration", &pair_calibration, py::arg("S"), py::arg("L"), py::arg("i"), py::arg("j"),
          py::arg("eps"));
    m.def(
        "calibration_curve",
        [](const ScoreSubspace& s, const LossMatrix& L, const std::vector<double>& grid, const std::string& pairs,
           int workers) {
            CurveOptions opt;
            opt.pairs = PairPolicy::parse(pairs);
            opt.workers = workers;
            py::gil_scoped_release release;
            return points(calibration_curve(s, L, grid, opt));
        },
        py::arg("S"), py::arg("L"), py::arg("grid"), py::arg("pairs") = "all", py::arg("workers") = 1);
    m.def("xi_ij", &xi_ij, py::arg("S"), py::arg("L"), py::arg("i"), py::arg("j"), py::arg("v"));
    m.def(
        "theorem1_bound",
        [](const ScoreSubspace& s, const LossMatrix& L, double eps, const std::string& mode, const std::string& pairs) {
            return theorem1_bound(s, L, eps, parse_mode(mode), PairPolicy::parse(pairs));
        },
        py::arg("S"), py::arg("L"), py::arg("eps"), py::arg("v_mode") = "optimal", py::arg("pairs") = "all");
    m.def(
        "bound_curve",
        [](const ScoreSubspace& s, const LossMatrix& L, const std::vector<double>& grid, const std::string& mode,
           const std::string& pairs) {
            return points(bound_curve(s, L, grid, parse_mode(mode), PairPolicy::parse(pairs)));
        },
        py::arg("S"), py::arg("L"), py::arg("grid"), py::arg("v_mode") = "optimal", py::arg("pairs") = "all");
    m.def("tree_bound_closed", &tree_bound_closed, py::arg("spec"), py::arg("t"), py::arg("eps"));
    m.def(
        "consistency_report",
        [](const ScoreSubspace& s, const LossMatrix& L, const std::string& labels) {
            ConsistencyOptions opt;
            opt.labels = LabelPolicy::parse(labels);
            ConsistencyReport r = consistency_report(s, L, opt);
            py::dict d;
            d["eta_lower"] = r.eta_lower;
            d["eta_upper"] = r.eta_upper;
            d["witness"] = py::dict(py::arg("label") = r.witness.label, py::arg("predicted") = r.witness.predicted,
                                    py::arg("optimal") = r.witness.optimal);
            return d;
        },
        py::arg("S"), py::arg("L"), py::arg("labels") = "exhaustive");
    m.def(
        "sample_complexity",
        [](const std::vector<std::pair<double, double>>& curve, double eps, double dm) {
            CalibrationCurve c;
            for (auto& [e, v] : curve) c.points.push_back({e, v});
            SampleComplexity s = sample_complexity_dm(convex_minorant(c), eps, dm);
            return py::make_tuple(s.n_steps, s.n_real);
        },
        py::arg("curve"), py::arg("eps"), py::arg("dm"));

    m.def("harmonic", &harmonic, py::arg("n"), py::arg("m"));
    m.def("kappa_f_sort", &kappa_f_sort_closed, py::arg("r"));
    m.def(
        "map_gamma", [](int r, int h) { return map_closed_forms(r).gamma(h); }, py::arg("r"), py::arg("h"));
    m.def(
        "sort_predict", [](const std::vector<double>& theta) { return sort_predict(theta).positions; },
        py::arg("theta"));
}
