#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "calibrax/matrixcore.hpp"

namespace calibrax {

// Level-homogeneous label tree. Leaves are numbered in mixed radix with
// level 0 as the most significant digit.
struct TreeSpec {
    std::vector<int> children;   // n_0 .. n_{D-1}
    std::vector<double> weights; // α_0 .. α_{D-1}

    int depth() const { return static_cast<int>(children.size()); }
    Index leaves() const;
    // Leaves below one node at depth t (product of n_s for s >= t).
    Index block_size(int t) const;
    // Number of depth-t nodes (product of n_s for s < t).
    Index block_count(int t) const;
    // Σ_{s>=t} α_s, summed with ascending s.
    double tail_weight(int t) const;
    // Average leaf-to-leaf distance inside a depth-t block, self pairs included.
    double mean_block_distance(int t) const;
    void validate() const;
};

TreeSpec parse_tree_spec(const std::string& json_text);
TreeSpec load_tree_spec(const std::string& path);
std::string tree_spec_json(const TreeSpec& spec);

// 1-based leaf indices.
double tree_distance(const TreeSpec& spec, Index i, Index j);

enum class LossKind { explicit_matrix, tree, map };

struct LossMatrix {
    Matrix L;  // k x m
    std::vector<std::string> output_labels;
    std::vector<std::string> gt_labels;
    double l_max = 0.0;
    LossKind kind = LossKind::explicit_matrix;
    std::optional<TreeSpec> tree;
    int r = 0;  // ranking size for mAP

    Index k() const { return L.rows(); }
    Index m() const { return L.cols(); }
};

LossMatrix make_loss_matrix(Matrix L);
LossMatrix tree_loss_matrix(const TreeSpec& spec);

struct Permutation {
    std::vector<int> positions;  // positions[p] = σ(p), 1-based positions
    int size() const { return static_cast<int>(positions.size()); }
    bool operator==(const Permutation&) const = default;
};

Permutation identity_permutation(int r);
bool is_permutation(const Permutation& s);
// All r! permutations, lexicographic in the positions array.
std::vector<Permutation> enumerate_permutations(int r);
std::string permutation_label(const Permutation& s);
// Labels 1..2^r-1; item p (0-based) is bit p.
std::string labeling_label(std::uint32_t y, int r);

double map_loss(const Permutation& s, const std::vector<int>& y);
double map_loss(const Permutation& s, std::uint32_t y);
// Pairwise 1/max(σ(p), σ(q)) form; must agree with map_loss.
double map_loss_pairwise(const Permutation& s, std::uint32_t y);

inline constexpr int kMaxExplicitR = 7;
LossMatrix map_loss_matrix(int r);

Matrix read_numeric_csv(const std::string& path, const char* what);
LossMatrix load_loss_matrix(const std::string& path);
void write_numeric_csv(const std::string& path, const Matrix& a);

}  // namespace calibrax
