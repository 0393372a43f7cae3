#pragma once

// Reference implementations used only by tests. They avoid the library's code
// paths: eigendecompositions instead of SVD, direct sums instead of closed
// forms, grid searches instead of QPs.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

namespace oracle {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline Matrix pinv_gram_eig(const Matrix& a) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(a.transpose() * a);
    const Vector& ev = es.eigenvalues();
    const double top = ev.cwiseAbs().maxCoeff();
    Vector inv = Vector::Zero(ev.size());
    for (Eigen::Index t = 0; t < ev.size(); ++t)
        if (ev(t) > 1e-12 * top) inv(t) = 1.0 / ev(t);
    return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

inline Matrix projector_eig(const Matrix& f) { return f * pinv_gram_eig(f) * f.transpose(); }

inline int numerical_rank(const Matrix& a, double rel = 1e-9) {
    Eigen::JacobiSVD<Matrix> svd(a);
    const auto& s = svd.singularValues();
    int r = 0;
    for (Eigen::Index t = 0; t < s.size(); ++t)
        if (s(t) > rel * s(0)) ++r;
    return r;
}

// All permutations as position arrays, generated recursively (lexicographic).
inline void perms_rec(int r, std::vector<int>& cur, std::vector<bool>& used, std::vector<std::vector<int>>& out) {
    if (static_cast<int>(cur.size()) == r) {
        out.push_back(cur);
        return;
    }
    for (int p = 1; p <= r; ++p) {
        if (used[p]) continue;
        used[p] = true;
        cur.push_back(p);
        perms_rec(r, cur, used, out);
        cur.pop_back();
        used[p] = false;
    }
}

inline std::vector<std::vector<int>> permutations(int r) {
    std::vector<std::vector<int>> out;
    std::vector<int> cur;
    std::vector<bool> used(static_cast<size_t>(r + 1), false);
    perms_rec(r, cur, used, out);
    return out;
}

// 1 - average precision: walk the ranking and average the precision at each relevant item.
inline double map_loss_direct(const std::vector<int>& pos, std::uint32_t y) {
    const int r = static_cast<int>(pos.size());
    std::vector<int> item_at(static_cast<size_t>(r));
    for (int p = 0; p < r; ++p) item_at[static_cast<size_t>(pos[static_cast<size_t>(p)] - 1)] = p;
    int hits = 0, rel = 0;
    double sum = 0.0;
    for (int p = 0; p < r; ++p) rel += (y >> p) & 1u;
    for (int k = 0; k < r; ++k) {
        if ((y >> item_at[static_cast<size_t>(k)]) & 1u) {
            ++hits;
            sum += static_cast<double>(hits) / (k + 1);
        }
    }
    return 1.0 - sum / rel;
}

inline Matrix map_loss_matrix_direct(int r) {
    auto ps = permutations(r);
    const int m = (1 << r) - 1;
    Matrix L(static_cast<Eigen::Index>(ps.size()), m);
    for (size_t s = 0; s < ps.size(); ++s)
        for (int y = 1; y <= m; ++y) L(static_cast<Eigen::Index>(s), y - 1) = map_loss_direct(ps[s], static_cast<std::uint32_t>(y));
    return L;
}

inline Matrix f_sort_direct(int r) {
    auto ps = permutations(r);
    Matrix F(static_cast<Eigen::Index>(ps.size()), r);
    for (size_t s = 0; s < ps.size(); ++s)
        for (int p = 0; p < r; ++p) F(static_cast<Eigen::Index>(s), p) = 1.0 / ps[s][static_cast<size_t>(p)];
    return F;
}

inline Matrix f_map_direct(int r) {
    auto ps = permutations(r);
    Matrix F(static_cast<Eigen::Index>(ps.size()), r * (r + 1) / 2);
    for (size_t s = 0; s < ps.size(); ++s) {
        int c = 0;
        for (int p = 0; p < r; ++p)
            for (int q = p; q < r; ++q)
                F(static_cast<Eigen::Index>(s), c++) =
                    1.0 / std::max(ps[s][static_cast<size_t>(p)], ps[s][static_cast<size_t>(q)]);
    }
    return F;
}

// Leaf distance by walking both leaves up the explicit parent chain.
inline double tree_distance_walk(const std::vector<int>& children, const std::vector<double>& weights, long i, long j) {
    const int D = static_cast<int>(children.size());
    long a = i - 1, b = j - 1;
    double d = 0.0;
    for (int s = D - 1; s >= 0; --s) {
        if (a == b) break;
        d += weights[static_cast<size_t>(s)];  // one half-edge per side
        a /= children[static_cast<size_t>(s)];
        b /= children[static_cast<size_t>(s)];
    }
    return d;
}

inline Matrix tree_matrix_walk(const std::vector<int>& children, const std::vector<double>& weights) {
    long k = 1;
    for (int n : children) k *= n;
    Matrix L(k, k);
    for (long i = 1; i <= k; ++i)
        for (long j = 1; j <= k; ++j) L(i - 1, j - 1) = tree_distance_walk(children, weights, i, j);
    return L;
}

// Level-homogeneous trees with at most max_k leaves.
inline void trees_rec(long max_k, long prod, std::vector<int>& cur, std::vector<std::vector<int>>& out) {
    if (!cur.empty()) out.push_back(cur);
    for (int n = 2; prod * n <= max_k; ++n) {
        cur.push_back(n);
        trees_rec(max_k, prod * n, cur, out);
        cur.pop_back();
    }
}

inline std::vector<std::vector<int>> trees_up_to(long max_k) {
    std::vector<std::vector<int>> out;
    std::vector<int> cur;
    trees_rec(max_k, 1, cur, out);
    return out;
}

// Excess surrogate for k = 2 with a one-dimensional score subspace, by θ grid search.
inline double excess_surrogate_grid_k2(const Matrix& F, const Matrix& L, double theta, const Vector& q) {
    auto phi = [&](double t) {
        Vector f = F.col(0) * t;
        double v = 0.0;
        for (Eigen::Index y = 0; y < L.cols(); ++y) v += q(y) * (f + L.col(y)).squaredNorm() / (2.0 * F.rows());
        return v;
    };
    double best = std::numeric_limits<double>::infinity();
    for (int s = -40000; s <= 40000; ++s) best = std::min(best, phi(s * 1e-4));
    return phi(theta) - best;
}

// Binary 0-1 calibration value at ε by brute force over q on a grid and f on a grid.
inline double binary_calibration_grid(double eps, int q_steps = 2000, int f_steps = 400) {
    double best = std::numeric_limits<double>::infinity();
    for (int a = 0; a <= q_steps; ++a) {
        const double q1 = static_cast<double>(a) / q_steps;  // P(label 1)
        const double lq1 = 1.0 - q1, lq2 = q1;               // expected loss of outputs 1, 2
        const double ex = std::abs(lq1 - lq2);
        if (ex < eps - 1e-12) continue;
        const int bad = lq1 < lq2 ? 1 : 0;  // predicting the worse output (0-based) costs ex
        // minimizer of the surrogate: f* = -(Lq); excess ½k⁻¹‖f - f*‖² with the wrong argmax
        const double f1s = -lq1, f2s = -lq2;
        for (int s = -f_steps; s <= f_steps; ++s) {
            for (int t = -f_steps; t <= f_steps; ++t) {
                const double f1 = 1.5 * s / f_steps, f2 = 1.5 * t / f_steps;
                const int pred = f1 >= f2 ? 0 : 1;
                if (pred != bad) continue;
                const double v = ((f1 - f1s) * (f1 - f1s) + (f2 - f2s) * (f2 - f2s)) / 4.0;
                best = std::min(best, v);
            }
        }
    }
    return best;
}

inline double harmonic_direct(long n, int m) {
    long double s = 0.0L;
    for (long t = n; t >= 1; --t) s += 1.0L / std::pow(static_cast<long double>(t), m);
    return static_cast<double>(s);
}

}  // namespace oracle
