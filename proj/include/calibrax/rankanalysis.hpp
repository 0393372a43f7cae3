#pragma once

#include <cstdint>
#include <vector>

#include "calibrax/losses.hpp"

namespace calibrax {

// Σ_{k=1..n} 1/k^m with compensated summation, m in {1, 2}.
double harmonic(long n, int m);

// Harmonic numbers H_{n,1}, H_{n,2} for n = 1..max_n.
struct HarmonicCache {
    std::vector<double> h1, h2;  // index n, entry 0 unused
    explicit HarmonicCache(long max_n);
    double get(long n, int m) const;
};

// Row structure of L_mAPᵀ F_sort. Quantities carry the suffix _red when
// divided by (r-2)! so they stay finite for large r.
struct MapClosedForms {
    int r = 0;
    double h1 = 0.0, h2 = 0.0;
    double a_red = 0.0, b_red = 0.0, c_red = 0.0;
    double log_factorial_r2 = 0.0;  // ln (r-2)!

    double alpha_red(int h) const;
    double beta_red(int h) const;
    double gamma(int h) const;
    // rH_{r,2} - H_{r,1}²
    double spread() const { return r * h2 - h1 * h1; }

    // Unreduced values; +inf once (r-2)! overflows.
    double scale() const;
    double A() const { return a_red * scale(); }
    double B() const { return b_red * scale(); }
    double C() const { return c_red * scale(); }
    double alpha(int h) const { return alpha_red(h) * scale(); }
    double beta(int h) const { return beta_red(h) * scale(); }
};

MapClosedForms map_closed_forms(int r);

// Σ_p (1/π(p) - 1/ω(p))² / ((r-2)!(rH₂ - H₁²)), i.e. ‖P_sort Δ_πω‖².
double f_sort_pair_sqnorm_closed(const Permutation& pi, const Permutation& omega);

double kappa_f_sort_closed(int r);

struct XiResult {
    double value = 0.0;
    bool exhaustive = true;  // false: sampled labelings, value is a lower bound
    std::uint64_t labelings = 0;
};

inline constexpr int kXiExhaustiveMaxR = 25;

XiResult xi_map_sort(const Permutation& pi, const Permutation& omega, double v,
                     std::uint64_t samples = 1000000, std::uint64_t seed = 0);

// Decreasing sort; ties give the smaller item the better position.
Permutation sort_predict(const std::vector<double>& theta);

struct AsymptoticRow {
    int r = 0;
    double kappa = 0.0;
    double gamma_mid = 0.0;
    double proj_term = 0.0;  // 2(r-1)! ‖P Δ‖² for identity vs reversal
};

std::vector<AsymptoticRow> asymptotic_report(const std::vector<int>& r_values);
std::string asymptotic_csv(const std::vector<AsymptoticRow>& rows);

}  // namespace calibrax
