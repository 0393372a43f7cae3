#include "calibrax/subspaces.hpp"

#include <cmath>

#include "calibrax/error.hpp"
#include "calibrax/rankanalysis.hpp"

namespace calibrax {

std::string kind_name(SubspaceKind kind) {
    switch (kind) {
        case SubspaceKind::explicit_basis: return "explicit";
        case SubspaceKind::tree_block: return "tree_block";
        case SubspaceKind::map_full: return "map_full";
        case SubspaceKind::map_sort: return "map_sort";
        case SubspaceKind::identity: return "identity";
    }
    return "unknown";
}

ScoreSubspace make_subspace(Matrix F, SubspaceKind kind, int param) {
    require_finite(F, "score basis");
    for (Index c = 0; c < F.cols(); ++c)
        if (F.col(c).cwiseAbs().maxCoeff() == 0.0)
            throw config_error("score basis: column " + std::to_string(c + 1) + " is all zero");
    ScoreSubspace s;
    s.projector = make_projector(F);
    s.F = std::move(F);
    s.kind = kind;
    s.param = param;
    return s;
}

ScoreSubspace identity_subspace(Index k) {
    if (k < 1) throw config_error("identity subspace: k must be positive");
    return make_subspace(Matrix::Identity(k, k), SubspaceKind::identity, 0);
}

ScoreSubspace load_subspace(const std::string& path) {
    return make_subspace(read_numeric_csv(path, "score CSV"));
}

ScoreSubspace tree_block_basis(const TreeSpec& spec, int t) {
    spec.validate();
    if (t < 1 || t > spec.depth())
        throw config_error("tree_block_basis: t must be in 1.." + std::to_string(spec.depth()));
    const Index k = spec.leaves();
    const Index z = spec.block_size(t);
    const Index b = spec.block_count(t);
    Matrix F = Matrix::Zero(k, b);
    for (Index leaf = 0; leaf < k; ++leaf) F(leaf, leaf / z) = 1.0;
    ScoreSubspace s = make_subspace(std::move(F), SubspaceKind::tree_block, t);
    s.origin = tree_spec_json(spec);
    return s;
}

namespace {

void check_r(int r, const char* what) {
    if (r < 2 || r > kMaxExplicitR)
        throw config_error(std::string(what) + ": r must be in 2.." + std::to_string(kMaxExplicitR));
}

}  // namespace

ScoreSubspace f_map(int r) {
    check_r(r, "f_map");
    auto perms = enumerate_permutations(r);
    const Index d = r * (r + 1) / 2;
    Matrix F(static_cast<Index>(perms.size()), d);
    for (size_t a = 0; a < perms.size(); ++a) {
        Index col = 0;
        for (int p = 0; p < r; ++p)
            for (int q = p; q < r; ++q)
                F(a, col++) = 1.0 / std::max(perms[a].positions[p], perms[a].positions[q]);
    }
    ScoreSubspace s = make_subspace(std::move(F), SubspaceKind::map_full, r);
    s.origin = "map:" + std::to_string(r);
    return s;
}

ScoreSubspace f_sort(int r) {
    check_r(r, "f_sort");
    auto perms = enumerate_permutations(r);
    Matrix F(static_cast<Index>(perms.size()), r);
    for (size_t a = 0; a < perms.size(); ++a)
        for (int p = 0; p < r; ++p) F(a, p) = 1.0 / perms[a].positions[p];
    ScoreSubspace s = make_subspace(std::move(F), SubspaceKind::map_sort, r);
    s.origin = "map:" + std::to_string(r);
    return s;
}

double pair_projection_sqnorm(const ScoreSubspace& s, const PairDelta& p) {
    if (p.i < 0 || p.j < 0 || p.i >= s.k() || p.j >= s.k() || p.i == p.j)
        throw config_error("pair_projection_sqnorm: invalid pair");
    const Matrix& u = s.projector.orth;
    return (u.row(p.i) - u.row(p.j)).squaredNorm();
}

Matrix gram_f_sort_closed(int r) {
    if (r < 2) throw config_error("gram_f_sort_closed: r must be at least 2");
    if (r > 170) throw config_error("gram_f_sort_closed: (r-1)! overflows double precision");
    const double h1 = harmonic(r, 1), h2 = harmonic(r, 2);
    double f2 = 1.0;  // (r-2)!
    for (int i = 2; i <= r - 2; ++i) f2 *= i;
    const double diag = f2 * (r - 1) * h2;
    const double off = f2 * (h1 * h1 - h2);
    Matrix g = Matrix::Constant(r, r, off);
    g.diagonal().setConstant(diag);
    return g;
}

double condition_number(const ScoreSubspace& s) {
    if (s.kind == SubspaceKind::map_sort) return kappa_f_sort_closed(s.param);
    Eigen::BDCSVD<Matrix> svd(s.F);
    const Vector& sv = svd.singularValues();
    Index rank = 0;
    while (rank < sv.size() && sv(rank) > 1e-12 * sv(0)) ++rank;
    if (rank < s.d())
        throw config_error("condition_number: basis is rank deficient (numerical rank " +
                           std::to_string(rank) + " of " + std::to_string(s.d()) + ")");
    return sv(0) / sv(sv.size() - 1);
}

bool has_output_symmetry(const ScoreSubspace& s, const LossMatrix& L) {
    if (s.k() != L.k()) return false;
    if (L.kind == LossKind::tree && L.tree) {
        if (s.kind == SubspaceKind::identity) return true;
        return s.kind == SubspaceKind::tree_block && s.origin == tree_spec_json(*L.tree);
    }
    if (L.kind == LossKind::map) {
        if (s.kind == SubspaceKind::identity) return true;
        return (s.kind == SubspaceKind::map_sort || s.kind == SubspaceKind::map_full) &&
               s.origin == "map:" + std::to_string(L.r);
    }
    return false;
}

}  // namespace calibrax
