#include "calibrax/matrixcore.hpp"

#include <cmath>
#include <string>

#include "calibrax/error.hpp"

namespace calibrax {

void require_finite(const Matrix& a, const char* what) {
    if (a.rows() < 1 || a.cols() < 1)
        throw config_error(std::string(what) + ": empty matrix");
    for (Index c = 0; c < a.cols(); ++c)
        for (Index r = 0; r < a.rows(); ++r)
            if (!std::isfinite(a(r, c)))
                throw config_error(std::string(what) + ": non-finite entry at row " +
                                   std::to_string(r + 1) + ", column " + std::to_string(c + 1));
}

namespace {

struct Truncated {
    Matrix u;      // k x rank
    Vector sigma;  // rank
    Matrix w;      // d x rank
};

// Thin SVD truncated where σ² falls below the Gram cutoff.
Truncated truncated_svd(const Matrix& a) {
    Eigen::BDCSVD<Matrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector& s = svd.singularValues();
    Index rank = 0;
    if (s.size() > 0 && s(0) > 0.0) {
        const double floor2 = kGramCutoff * s(0) * s(0);
        while (rank < s.size() && s(rank) * s(rank) > floor2) ++rank;
    }
    return {svd.matrixU().leftCols(rank), s.head(rank), svd.matrixV().leftCols(rank)};
}

}  // namespace

Matrix gram_pseudoinverse(const Matrix& a) {
    require_finite(a, "gram_pseudoinverse");
    Truncated t = truncated_svd(a);
    Matrix ws = t.w * t.sigma.cwiseInverse().asDiagonal();
    Matrix out = ws * ws.transpose();
    return 0.5 * (out + out.transpose());
}

Projector make_projector(const Matrix& basis) {
    require_finite(basis, "projector basis");
    Truncated t = truncated_svd(basis);
    Projector p;
    p.basis = basis;
    Matrix ws = t.w * t.sigma.cwiseInverse().asDiagonal();
    p.gram_pinv = ws * ws.transpose();
    p.gram_pinv = 0.5 * (p.gram_pinv + p.gram_pinv.transpose()).eval();
    p.orth = t.u;
    p.coef = ws;
    return p;
}

Vector Projector::apply(const Vector& x) const {
    if (x.size() != k())
        throw config_error("projector: expected vector of length " + std::to_string(k()) +
                           ", got " + std::to_string(x.size()));
    return orth * (orth.transpose() * x);
}

Matrix Projector::apply(const Matrix& x) const {
    if (x.rows() != k())
        throw config_error("projector: expected " + std::to_string(k()) + " rows, got " +
                           std::to_string(x.rows()));
    return orth * (orth.transpose() * x);
}

Vector project(const Projector& p, const Vector& x) { return p.apply(x); }

}  // namespace calibrax
