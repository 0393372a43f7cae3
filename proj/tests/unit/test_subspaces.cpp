#include <doctest.h>

#include <cmath>
#include <random>

#include "calibrax/error.hpp"
#include "calibrax/rankanalysis.hpp"
#include "calibrax/subspaces.hpp"
#include "oracles.hpp"

using namespace calibrax;

TEST_CASE("tree block bases") {
    TreeSpec t{{2, 2}, {0.5, 0.5}};
    ScoreSubspace s1 = tree_block_basis(t, 1);
    Matrix expect(4, 2);
    expect << 1, 0, 1, 0, 0, 1, 0, 1;
    CHECK((s1.F - expect).norm() == 0.0);
    ScoreSubspace s2 = tree_block_basis(t, 2);
    CHECK((s2.F - Matrix::Identity(4, 4)).norm() == 0.0);
    TreeSpec t3{{2, 3, 2}, {0.2, 0.3, 0.5}};
    for (int d = 1; d <= 3; ++d) {
        ScoreSubspace s = tree_block_basis(t3, d);
        Matrix g = s.F.transpose() * s.F;
        CHECK((g - static_cast<double>(t3.block_size(d)) * Matrix::Identity(g.rows(), g.cols())).norm() == 0.0);
    }
    CHECK_THROWS_AS(tree_block_basis(t, 0), Error);
    CHECK_THROWS_AS(tree_block_basis(t, 3), Error);
}

TEST_CASE("F_mAP and F_sort entries") {
    ScoreSubspace m2 = f_map(2);
    CHECK(m2.F(0, 0) == 1.0);
    CHECK(m2.F(0, 1) == 0.5);
    CHECK(m2.F(0, 2) == 0.5);
    ScoreSubspace s2 = f_sort(2);
    Matrix e(2, 2);
    e << 1, 0.5, 0.5, 1;
    CHECK((s2.F - e).norm() == 0.0);
    for (int r = 2; r <= 5; ++r) {
        ScoreSubspace fm = f_map(r), fs = f_sort(r);
        CHECK((fm.F - oracle::f_map_direct(r)).norm() == 0.0);
        CHECK((fs.F - oracle::f_sort_direct(r)).norm() == 0.0);
        CHECK(fm.F.minCoeff() > 0.0);
        CHECK(fm.F.maxCoeff() <= 1.0);
        int col = 0;
        for (int p = 0; p < r; ++p)
            for (int q = p; q < r; ++q, ++col)
                if (p == q) CHECK((fm.F.col(col) - fs.F.col(p)).norm() == 0.0);
        const double h = harmonic(r, 1);
        CHECK((fs.F.rowwise().sum().array() - h).abs().maxCoeff() < 1e-14);
    }
    CHECK_THROWS_AS(f_map(1), Error);
    CHECK_THROWS_AS(f_sort(8), Error);
}

TEST_CASE("argmax of F_sort scores is the sorting permutation") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> nd;
    for (int r = 2; r <= 5; ++r) {
        auto perms = enumerate_permutations(r);
        Matrix F = f_sort(r).F;
        for (int trial = 0; trial < 200; ++trial) {
            std::vector<double> theta(static_cast<size_t>(r));
            for (auto& x : theta) x = trial % 5 == 0 ? std::round(nd(rng)) : nd(rng);  // some ties
            Vector th = Eigen::Map<Vector>(theta.data(), r);
            Vector f = F * th;
            Index best = 0;
            for (Index a = 1; a < f.size(); ++a)
                if (f(a) > f(best) + 1e-12) best = a;
            // with ties several rows attain the max; the lexicographically first is the sorted one
            CHECK(sort_predict(theta).positions == perms[static_cast<size_t>(best)].positions);
        }
    }
}

TEST_CASE("pair projection norms") {
    ScoreSubspace id = identity_subspace(4);
    CHECK(pair_projection_sqnorm(id, {0, 3}) == doctest::Approx(2.0));
    TreeSpec t{{2, 3}, {0.4, 0.6}};
    ScoreSubspace s = tree_block_basis(t, 1);
    CHECK(pair_projection_sqnorm(s, {0, 2}) < 1e-14);
    CHECK(pair_projection_sqnorm(s, {0, 4}) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK_THROWS_AS(pair_projection_sqnorm(s, {1, 1}), Error);

    std::mt19937_64 rng(8);
    std::normal_distribution<double> nd;
    Matrix F(6, 2);
    for (Index i = 0; i < 6; ++i)
        for (Index j = 0; j < 2; ++j) F(i, j) = nd(rng);
    ScoreSubspace rs = make_subspace(F);
    Matrix P = oracle::projector_eig(F);
    for (Index i = 0; i < 6; ++i)
        for (Index j = 0; j < 6; ++j) {
            if (i == j) continue;
            Vector d = Vector::Zero(6);
            d(i) = 1;
            d(j) = -1;
            const double v = pair_projection_sqnorm(rs, {i, j});
            CHECK(v == doctest::Approx(d.dot(P * d)).epsilon(1e-10));
            CHECK(v >= 0.0);
            CHECK(v <= 2.0 + 1e-12);
        }
}

TEST_CASE("closed-form Gram matrix of F_sort") {
    Matrix g3 = gram_f_sort_closed(3);
    CHECK(g3(0, 0) == doctest::Approx(49.0 / 18.0).epsilon(1e-14));
    CHECK(g3(0, 1) == doctest::Approx(2.0).epsilon(1e-14));
    for (int r = 3; r <= 6; ++r) {
        Matrix f = oracle::f_sort_direct(r);
        Matrix g = f.transpose() * f;
        Matrix c = gram_f_sort_closed(r);
        CHECK(((g - c).cwiseAbs().array() / g.cwiseAbs().array()).maxCoeff() < 1e-9);
        MapClosedForms mf = map_closed_forms(r);
        double fact = 1.0;
        for (int i = 2; i <= r - 2; ++i) fact *= i;
        Matrix shifted = c - fact * mf.spread() * Matrix::Identity(r, r);
        CHECK(oracle::numerical_rank(shifted) == 1);
    }
    CHECK_THROWS_AS(gram_f_sort_closed(1), Error);
    CHECK_THROWS_AS(gram_f_sort_closed(200), Error);
}

TEST_CASE("condition numbers") {
    TreeSpec t{{2, 2}, {0.5, 0.5}};
    CHECK(condition_number(tree_block_basis(t, 1)) == doctest::Approx(1.0));
    CHECK(kappa_f_sort_closed(3) == doctest::Approx(3.0509).epsilon(1e-4));
    CHECK(kappa_f_sort_closed(5) == doctest::Approx(3.148).epsilon(1e-3));
    for (int r = 3; r <= 6; ++r) {
        Eigen::JacobiSVD<Matrix> svd(oracle::f_sort_direct(r));
        const auto& sv = svd.singularValues();
        CHECK(condition_number(f_sort(r)) == doctest::Approx(sv(0) / sv(sv.size() - 1)).epsilon(1e-9));
    }
    Matrix red(3, 2);
    red << 1, 2, 1, 2, 1, 2;
    CHECK_THROWS_AS(condition_number(make_subspace(red)), Error);
    for (double r : {10.0, 100.0, 1000.0, 10000.0}) {
        const double ratio = kappa_f_sort_closed(static_cast<int>(r)) / std::log(r);
        CHECK(ratio >= 0.5);
        CHECK(ratio <= 3.0);
    }
}

TEST_CASE("nested subspaces give smaller pair projections") {
    for (int r : {3, 4}) {
        ScoreSubspace fs = f_sort(r), fm = f_map(r);
        const Index k = fs.k();
        for (Index i = 0; i < k; ++i)
            for (Index j = 0; j < k; ++j)
                if (i != j) CHECK(pair_projection_sqnorm(fs, {i, j}) <= pair_projection_sqnorm(fm, {i, j}) + 1e-10);
    }
    TreeSpec t{{2, 3, 2}, {0.2, 0.3, 0.5}};
    for (int t1 = 1; t1 <= 3; ++t1)
        for (int t2 = t1; t2 <= 3; ++t2) {
            ScoreSubspace a = tree_block_basis(t, t1), b = tree_block_basis(t, t2);
            for (Index i = 0; i < 12; ++i)
                for (Index j = 0; j < 12; ++j)
                    if (i != j) CHECK(pair_projection_sqnorm(a, {i, j}) <= pair_projection_sqnorm(b, {i, j}) + 1e-10);
        }
}

TEST_CASE("zero columns are rejected") {
    Matrix f = Matrix::Ones(3, 2);
    f.col(1).setZero();
    CHECK_THROWS_AS(make_subspace(f), Error);
}

TEST_CASE("F_mAP projector is basis-order independent") {
    Matrix f = f_map(4).F;
    Matrix g = f.rowwise().reverse();
    CHECK((make_subspace(g).projector.dense() - f_map(4).projector.dense()).cwiseAbs().maxCoeff() < 1e-10);
}
