#pragma once

#include <Eigen/Dense>

namespace calibrax {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

// Relative eigenvalue cutoff applied to Gram matrices.
inline constexpr double kGramCutoff = 1e-12;

void require_finite(const Matrix& a, const char* what);

// Moore-Penrose pseudo-inverse of AᵀA.
Matrix gram_pseudoinverse(const Matrix& a);

// Orthogonal projector onto span(basis).
struct Projector {
    Matrix basis;      // k x d
    Matrix gram_pinv;  // d x d
    Matrix orth;       // k x rank, orthonormal columns spanning span(basis)
    Matrix coef;       // d x rank, basis * coef == orth

    Index k() const { return basis.rows(); }
    Index d() const { return basis.cols(); }
    Index rank() const { return orth.cols(); }

    Vector apply(const Vector& x) const;
    Matrix apply(const Matrix& x) const;
    Matrix dense() const { return orth * orth.transpose(); }
};

Projector make_projector(const Matrix& basis);

Vector project(const Projector& p, const Vector& x);

}  // namespace calibrax
