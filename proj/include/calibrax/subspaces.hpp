#pragma once

#include <string>

#include "calibrax/losses.hpp"
#include "calibrax/matrixcore.hpp"

namespace calibrax {

enum class SubspaceKind { explicit_basis, tree_block, map_full, map_sort, identity };

std::string kind_name(SubspaceKind kind);

struct ScoreSubspace {
    Matrix F;  // k x d
    Projector projector;
    SubspaceKind kind = SubspaceKind::explicit_basis;
    int param = 0;  // depth t for tree_block, r for map kinds
    std::string origin;  // construction source, used for symmetry detection

    Index k() const { return F.rows(); }
    Index d() const { return F.cols(); }
};

// 0-based output indices, i != j.
struct PairDelta {
    Index i = 0;
    Index j = 0;
};

ScoreSubspace make_subspace(Matrix F, SubspaceKind kind = SubspaceKind::explicit_basis, int param = 0);
ScoreSubspace identity_subspace(Index k);
ScoreSubspace load_subspace(const std::string& path);
ScoreSubspace tree_block_basis(const TreeSpec& spec, int t);
ScoreSubspace f_map(int r);
ScoreSubspace f_sort(int r);

// ‖P Δ_ij‖²
double pair_projection_sqnorm(const ScoreSubspace& s, const PairDelta& p);

Matrix gram_f_sort_closed(int r);

// Ratio of extreme singular values; closed form for map_sort.
double condition_number(const ScoreSubspace& s);

// True when the loss and the subspace are invariant under a group acting
// transitively on outputs, so pair minima can be taken with j fixed to output 0.
bool has_output_symmetry(const ScoreSubspace& s, const LossMatrix& L);

}  // namespace calibrax
