#include <doctest.h>

#include <bit>
#include <chrono>
#include <cmath>
#include <random>

#include "calibrax/calibration.hpp"
#include "calibrax/error.hpp"
#include "calibrax/rankanalysis.hpp"
#include "oracles.hpp"

using namespace calibrax;

namespace {

double rel_err(double a, double b) { return std::abs(a - b) / std::max(1e-300, std::max(std::abs(a), std::abs(b))); }

}  // namespace

TEST_CASE("harmonic numbers") {
    CHECK(harmonic(1, 1) == 1.0);
    CHECK(harmonic(3, 1) == doctest::Approx(11.0 / 6.0).epsilon(1e-15));
    CHECK(harmonic(3, 2) == doctest::Approx(49.0 / 36.0).epsilon(1e-15));
    CHECK(harmonic(5, 2) == doctest::Approx(5269.0 / 3600.0).epsilon(1e-15));
    for (long n : {10L, 1000L, 100000L}) {
        CHECK(rel_err(harmonic(n, 1), oracle::harmonic_direct(n, 1)) < 1e-15);
        CHECK(rel_err(harmonic(n, 2), oracle::harmonic_direct(n, 2)) < 1e-15);
    }
    HarmonicCache hc(200);
    for (long n = 2; n <= 200; ++n) {
        CHECK(hc.get(n, 1) > hc.get(n - 1, 1));
        CHECK(hc.get(n, 2) < M_PI * M_PI / 6);
    }
}

TEST_CASE("alpha and beta match enumeration") {
    for (int r = 3; r <= 5; ++r) {
        MapClosedForms cf = map_closed_forms(r);
        Matrix L = oracle::map_loss_matrix_direct(r);
        Matrix F = oracle::f_sort_direct(r);
        Matrix prod = L.transpose() * F;  // (y, p)
        double worst = 0.0;
        for (std::uint32_t y = 1; y < (1u << r); ++y) {
            const int h = std::popcount(y);
            for (int p = 0; p < r; ++p) {
                const double expect = ((y >> p) & 1u) ? cf.alpha(h) : cf.beta(h);
                worst = std::max(worst, rel_err(prod(y - 1, p), expect));
            }
        }
        CHECK(worst < 1e-9);
        double fact1 = 1.0;
        for (int i = 2; i <= r - 1; ++i) fact1 *= i;
        CHECK(rel_err(cf.A(), fact1 * harmonic(r, 1)) < 1e-14);
        CHECK(rel_err(cf.C(), fact1 * harmonic(r, 2)) < 1e-14);
    }
    CHECK_THROWS_AS(map_closed_forms(2), Error);
}

TEST_CASE("gamma reproduces the projected loss") {
    std::mt19937_64 rng(17);
    for (int r = 3; r <= 5; ++r) {
        MapClosedForms cf = map_closed_forms(r);
        LossMatrix L = map_loss_matrix(r);
        ScoreSubspace S = f_sort(r);
        Matrix PL = S.projector.apply(L.L);
        const Index k = L.k();
        std::uniform_int_distribution<Index> pick(0, k - 1);
        double worst = 0.0;
        for (int trial = 0; trial < 50; ++trial) {
            Index i = pick(rng), j = pick(rng);
            if (i == j) continue;
            for (std::uint32_t y = 1; y < (1u << r); ++y) {
                double fy_i = 0.0, fy_j = 0.0;
                for (int p = 0; p < r; ++p)
                    if ((y >> p) & 1u) {
                        fy_i += S.F(i, p);
                        fy_j += S.F(j, p);
                    }
                const double lhs = cf.gamma(std::popcount(y)) * (fy_i - fy_j);
                const double rhs = PL(i, y - 1) - PL(j, y - 1);
                worst = std::max(worst, std::abs(lhs - rhs));
            }
        }
        CHECK(worst < 1e-9);
    }
}

TEST_CASE("closed-form pair projections") {
    std::mt19937_64 rng(23);
    for (int r = 3; r <= 5; ++r) {
        auto perms = enumerate_permutations(r);
        ScoreSubspace S = f_sort(r);
        const Index k = S.k();
        auto check = [&](Index i, Index j) {
            const double a = f_sort_pair_sqnorm_closed(perms[i], perms[j]);
            const double b = pair_projection_sqnorm(S, {i, j});
            CHECK(rel_err(a, b) < 1e-9);
            double s = 0.0;
            for (int p = 0; p < r; ++p) s += 1.0 / perms[i].positions[p] - 1.0 / perms[j].positions[p];
            CHECK(std::abs(s) < 1e-14);
        };
        if (r <= 4) {
            for (Index i = 0; i < k; ++i)
                for (Index j = 0; j < k; ++j)
                    if (i != j) check(i, j);
        } else {
            std::uniform_int_distribution<Index> pick(0, k - 1);
            for (int n = 0; n < 200;) {
                Index i = pick(rng), j = pick(rng);
                if (i == j) continue;
                check(i, j);
                ++n;
            }
        }
    }
}

TEST_CASE("scalable xi matches explicit matrices") {
    std::mt19937_64 rng(29);
    for (int r = 3; r <= 5; ++r) {
        auto perms = enumerate_permutations(r);
        LossMatrix L = map_loss_matrix(r);
        ScoreSubspace S = f_sort(r);
        CalibrationContext ctx(S, L);
        std::uniform_int_distribution<Index> pick(0, L.k() - 1);
        for (int n = 0; n < 40;) {
            Index i = pick(rng), j = pick(rng);
            if (i == j) continue;
            ++n;
            PairBoundTerm t = ctx.bound_term(i, j);
            for (double v : {0.0, 0.5, 1.0, 1.7}) {
                XiResult x = xi_map_sort(perms[i], perms[j], v);
                CHECK(x.exhaustive);
                CHECK(std::abs(x.value - t.xi(v)) <= 1e-9 * std::max(1.0, t.xi(v)));
            }
        }
    }
    // adjacent transposition at v = 1 is strictly positive: F_sort is inconsistent
    Permutation a = identity_permutation(5), b = a;
    std::swap(b.positions[3], b.positions[4]);
    CHECK(xi_map_sort(a, b, 1.0).value > 1e-6);
    CHECK_THROWS_AS(xi_map_sort(a, a, 1.0), Error);
}

TEST_CASE("xi at r = 15 runs quickly; large r samples") {
    Permutation a = identity_permutation(15), b = a;
    std::reverse(b.positions.begin(), b.positions.end());
    auto t0 = std::chrono::steady_clock::now();
    XiResult x = xi_map_sort(a, b, 1.0);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    CHECK(x.exhaustive);
    CHECK(x.labelings == (1u << 15) - 1);
    CHECK(secs < 60.0);
    Permutation c = identity_permutation(30), d = c;
    std::swap(d.positions[0], d.positions[29]);
    XiResult s1 = xi_map_sort(c, d, 1.0, 20000, 3), s2 = xi_map_sort(c, d, 1.0, 20000, 3);
    CHECK_FALSE(s1.exhaustive);
    CHECK(s1.value == s2.value);
    CHECK(s1.value > 0.0);
}

TEST_CASE("sort prediction") {
    CHECK(sort_predict({3, 1, 2}).positions == std::vector<int>{1, 3, 2});
    CHECK(sort_predict({0.5, 0.5, 0.5, 0.5}).positions == std::vector<int>{1, 2, 3, 4});
    CHECK(sort_predict({1, 2, 2}).positions == std::vector<int>{3, 1, 2});
    CHECK_THROWS_AS(sort_predict({1.0, NAN}), Error);
}

TEST_CASE("asymptotic diagnostics from closed forms") {
    std::vector<int> rs;
    for (int t = 0; t <= 12; ++t) rs.push_back(static_cast<int>(std::lround(std::pow(10.0, 1.0 + t * 0.25))));
    auto t0 = std::chrono::steady_clock::now();
    auto rows = asymptotic_report(rs);
    CHECK(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() < 10.0);
    for (size_t t = 0; t < rows.size(); ++t) {
        const double r = rows[t].r, lr = std::log(r);
        CHECK(rows[t].kappa / lr >= 0.5);
        CHECK(rows[t].kappa / lr <= 3.0);
        CHECK(std::abs(rows[t].gamma_mid) * r / (lr * lr) <= 10.0);
        CHECK(rows[t].proj_term / r <= 10.0);
        CHECK(std::isfinite(rows[t].proj_term));
        if (t) CHECK(rows[t].kappa > rows[t - 1].kappa);
    }
    // small r: the reduced projection term equals 2(r-1)!‖PΔ‖² from the explicit projector
    for (int r = 3; r <= 5; ++r) {
        auto perms = enumerate_permutations(r);
        Index rev = static_cast<Index>(perms.size()) - 1;
        double fact = 1.0;
        for (int i = 2; i <= r - 1; ++i) fact *= i;
        const double explicit_term = 2.0 * fact * pair_projection_sqnorm(f_sort(r), {0, rev});
        CHECK(rel_err(asymptotic_report({r})[0].proj_term, explicit_term) < 1e-9);
    }
    const std::string csv = asymptotic_csv(asymptotic_report({3, 5}));
    CHECK(csv.rfind("r,kappa,gamma_mid,proj_term\n", 0) == 0);
}

TEST_CASE("projections under F_sort never exceed those under F_mAP") {
    for (int r = 3; r <= 4; ++r) {
        ScoreSubspace a = f_sort(r), b = f_map(r);
        for (Index i = 0; i < a.k(); ++i)
            for (Index j = 0; j < a.k(); ++j)
                if (i != j) CHECK(pair_projection_sqnorm(a, {i, j}) <= pair_projection_sqnorm(b, {i, j}) + 1e-10);
    }
}
