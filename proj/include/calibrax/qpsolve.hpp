#pragma once

#include <string>
#include <vector>

#include "calibrax/matrixcore.hpp"

namespace calibrax {

// minimize ½xᵀHx + cᵀx  s.t.  A_ineq x >= b_ineq,  A_eq x = b_eq,  x_p >= 0 where nonneg[p].
struct QPProblem {
    Matrix H;
    Vector c;
    Matrix A_ineq;
    Vector b_ineq;
    Matrix A_eq;
    Vector b_eq;
    std::vector<bool> nonneg;  // empty means all free

    Index n() const { return H.rows(); }
    Index n_ineq() const { return A_ineq.rows(); }
    Index n_eq() const { return A_eq.rows(); }
    bool is_nonneg(Index p) const { return !nonneg.empty() && nonneg[static_cast<size_t>(p)]; }

    // Dimension checks plus symmetry of H. PSD is checked by solve_qp.
    void validate() const;
    double objective(const Vector& x) const;
    // Largest violation of any constraint at x.
    double max_violation(const Vector& x) const;
};

QPProblem make_qp(Matrix H, Vector c);

enum class QPStatus { optimal, infeasible, unbounded, max_iterations, numerical_failure };

std::string status_name(QPStatus s);

struct QPSettings {
    double feas_tol = 1e-10;
    double gap_abs = 1e-13;
    double gap_rel = 1e-11;
    double relaxed_tol = 1e-8;  // accepted when progress stalls
    int max_iter = 200;
    double reg = 1e-10;
    bool check_psd = true;
};

struct QPSolution {
    QPStatus status = QPStatus::numerical_failure;
    Vector x;
    Vector z_ineq;  // multipliers of A_ineq rows
    Vector z_bound; // multipliers of the x >= 0 bounds (length n, zero for free variables)
    Vector y_eq;
    double objective = 0.0;
    double dual_objective = 0.0;
    double kkt_residual = 0.0;
    double primal_residual = 0.0;
    double dual_residual = 0.0;
    double complementarity = 0.0;
    int iterations = 0;
    // Farkas ray for infeasible problems: z >= 0 with A_ineqᵀz_i + z_b + A_eqᵀy = 0, b_ineqᵀz_i + b_eqᵀy = 1.
    Vector farkas_ineq, farkas_bound, farkas_eq;
    double farkas_residual = 0.0;
};

QPSolution solve_qp(const QPProblem& p, const QPSettings& settings = {});

// Dorn dual written as a minimization over w = (x, v, u); its optimal value is
// the negated optimum of the primal. v matches A_ineq rows, u matches A_eq rows.
QPProblem dorn_dual(const QPProblem& p);

// Dual objective -½xᵀHx + b_ineqᵀv + b_eqᵀu at w = (x, v, u).
double dorn_dual_value(const QPProblem& primal, const Vector& w);

}  // namespace calibrax
