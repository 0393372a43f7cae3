#include "calibrax/rankanalysis.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <random>

#include "calibrax/error.hpp"
#include "calibrax/io.hpp"

namespace calibrax {

double harmonic(long n, int m) {
    if (n < 1) throw config_error("harmonic: n must be at least 1");
    if (m != 1 && m != 2) throw config_error("harmonic: order must be 1 or 2");
    // Neumaier summation, smallest terms first
    double sum = 0.0, comp = 0.0;
    for (long k = n; k >= 1; --k) {
        const double kk = static_cast<double>(k);
        const double term = m == 1 ? 1.0 / kk : 1.0 / (kk * kk);
        const double t = sum + term;
        if (std::abs(sum) >= std::abs(term))
            comp += (sum - t) + term;
        else
            comp += (term - t) + sum;
        sum = t;
    }
    return sum + comp;
}

HarmonicCache::HarmonicCache(long max_n) : h1(max_n + 1, 0.0), h2(max_n + 1, 0.0) {
    for (long n = 1; n <= max_n; ++n) {
        h1[n] = harmonic(n, 1);
        h2[n] = harmonic(n, 2);
    }
}

double HarmonicCache::get(long n, int m) const {
    if (n < 1 || n >= static_cast<long>(h1.size())) throw config_error("HarmonicCache: n out of range");
    return m == 1 ? h1[n] : h2[n];
}

double MapClosedForms::alpha_red(int h) const {
    if (h < 1 || h > r) throw config_error("alpha: |y| out of range");
    const double lam = static_cast<double>(h - 1) / (r - 2);
    return a_red * (1.0 - lam * (1.0 - static_cast<double>(r) / (static_cast<double>(h) * (r - 1)))) -
           b_red * (1.5 * lam * static_cast<double>(r - h) / h) -
           c_red * (static_cast<double>(r - h) / (static_cast<double>(h) * (r - 1)));
}

double MapClosedForms::beta_red(int h) const {
    if (h < 1 || h > r) throw config_error("beta: |y| out of range");
    const double lam = static_cast<double>(h - 1) / (r - 2);
    return a_red * (1.0 - lam) - b_red * (1.0 - 1.5 * lam);
}

double MapClosedForms::gamma(int h) const { return (alpha_red(h) - beta_red(h)) / spread(); }

double MapClosedForms::scale() const {
    if (r - 2 > 170) return INFINITY;
    double f = 1.0;
    for (int i = 2; i <= r - 2; ++i) f *= i;
    return f;
}

MapClosedForms map_closed_forms(int r) {
    if (r < 3) throw config_error("map_closed_forms: r must be at least 3");
    MapClosedForms c;
    c.r = r;
    c.h1 = harmonic(r, 1);
    c.h2 = harmonic(r, 2);
    c.a_red = (r - 1) * c.h1;
    c.b_red = c.h1 * c.h1 - c.h2;
    c.c_red = (r - 1) * c.h2;
    c.log_factorial_r2 = std::lgamma(static_cast<double>(r - 1));
    return c;
}

double f_sort_pair_sqnorm_closed(const Permutation& pi, const Permutation& omega) {
    const int r = pi.size();
    if (omega.size() != r || r < 2) throw config_error("pair sqnorm: permutation sizes differ");
    double num = 0.0;
    for (int p = 0; p < r; ++p) {
        const double d = 1.0 / pi.positions[p] - 1.0 / omega.positions[p];
        num += d * d;
    }
    double f2 = 1.0;
    for (int i = 2; i <= r - 2; ++i) f2 *= i;
    const double h1 = harmonic(r, 1), h2 = harmonic(r, 2);
    return num / (f2 * (r * h2 - h1 * h1));
}

double kappa_f_sort_closed(int r) {
    if (r < 2) throw config_error("kappa: r must be at least 2");
    const double h1 = harmonic(r, 1), h2 = harmonic(r, 2);
    return std::sqrt(static_cast<double>(r - 1)) * h1 / std::sqrt(r * h2 - h1 * h1);
}

namespace {

struct RankView {
    std::vector<int> item_at;    // item_at[pos-1] = item
    std::vector<double> inv_pos; // 1/σ(p)
};

RankView view_of(const Permutation& s) {
    RankView v;
    v.item_at.resize(s.size());
    v.inv_pos.resize(s.size());
    for (int p = 0; p < s.size(); ++p) {
        v.item_at[s.positions[p] - 1] = p;
        v.inv_pos[p] = 1.0 / s.positions[p];
    }
    return v;
}

// mAP loss and (F_sort y)_σ in one pass
inline void eval_label(const RankView& v, std::uint64_t y, int h, double& loss, double& score) {
    double sum = 0.0;
    int seen = 0;
    score = 0.0;
    const int r = static_cast<int>(v.item_at.size());
    for (int pos = 1; pos <= r; ++pos) {
        const int item = v.item_at[pos - 1];
        if ((y >> item) & 1u) {
            ++seen;
            sum += static_cast<double>(seen) / pos;
            score += 1.0 / pos;
        }
    }
    loss = 1.0 - sum / h;
}

}  // namespace

XiResult xi_map_sort(const Permutation& pi, const Permutation& omega, double v,
                     std::uint64_t samples, std::uint64_t seed) {
    const int r = pi.size();
    if (omega.size() != r) throw config_error("xi_map_sort: permutation sizes differ");
    if (!is_permutation(pi) || !is_permutation(omega)) throw config_error("xi_map_sort: invalid permutation");
    if (pi == omega) throw config_error("xi_map_sort: permutations must differ");
    if (r < 3 || r > 63) throw config_error("xi_map_sort: r must be in 3..63");
    if (!(v >= 0.0)) throw config_error("xi_map_sort: v must be non-negative");
    const MapClosedForms cf = map_closed_forms(r);
    std::vector<double> gam(r + 1, 0.0);
    for (int h = 1; h <= r; ++h) gam[h] = cf.gamma(h);
    const RankView a = view_of(pi), b = view_of(omega);

    auto term = [&](std::uint64_t y) {
        const int h = std::popcount(y);
        double la, sa, lb, sb;
        eval_label(a, y, h, la, sa);
        eval_label(b, y, h, lb, sb);
        return std::abs(v * (la - lb) - gam[h] * (sa - sb));
    };

    XiResult out;
    if (r <= kXiExhaustiveMaxR) {
        const std::uint64_t m = (std::uint64_t(1) << r) - 1;
        for (std::uint64_t y = 1; y <= m; ++y) out.value = std::max(out.value, term(y));
        out.labelings = m;
        out.exhaustive = true;
        return out;
    }
    std::mt19937_64 rng(seed);
    const std::uint64_t mask = r == 64 ? ~std::uint64_t(0) : (std::uint64_t(1) << r) - 1;
    for (std::uint64_t s = 0; s < samples; ++s) {
        std::uint64_t y = rng() & mask;
        if (y == 0) continue;
        out.value = std::max(out.value, term(y));
        ++out.labelings;
    }
    out.exhaustive = false;
    return out;
}

Permutation sort_predict(const std::vector<double>& theta) {
    for (double t : theta)
        if (!std::isfinite(t)) throw config_error("sort_predict: non-finite score");
    std::vector<int> items(theta.size());
    std::iota(items.begin(), items.end(), 0);
    std::stable_sort(items.begin(), items.end(), [&](int a, int b) { return theta[a] > theta[b]; });
    Permutation s;
    s.positions.resize(theta.size());
    for (size_t rank = 0; rank < items.size(); ++rank) s.positions[items[rank]] = static_cast<int>(rank) + 1;
    return s;
}

std::vector<AsymptoticRow> asymptotic_report(const std::vector<int>& r_values) {
    std::vector<AsymptoticRow> rows;
    for (int r : r_values) {
        if (r < 3) throw config_error("asymptotic_report: r must be at least 3");
        const MapClosedForms cf = map_closed_forms(r);
        AsymptoticRow row;
        row.r = r;
        row.kappa = std::sqrt(static_cast<double>(r - 1)) * cf.h1 / std::sqrt(cf.spread());
        row.gamma_mid = cf.gamma((r + 1) / 2);
        double num = 0.0, comp = 0.0;
        for (int p = 1; p <= r; ++p) {
            const double d = 1.0 / p - 1.0 / (r + 1 - p);
            const double y = d * d - comp;
            const double t = num + y;
            comp = (t - num) - y;
            num = t;
        }
        row.proj_term = 2.0 * (r - 1) * num / cf.spread();
        rows.push_back(row);
    }
    return rows;
}

std::string asymptotic_csv(const std::vector<AsymptoticRow>& rows) {
    Table t;
    t.header = {"r", "kappa", "gamma_mid", "proj_term"};
    for (auto& row : rows) t.rows.push_back({double(row.r), row.kappa, row.gamma_mid, row.proj_term});
    return format_table_csv(t);
}

}  // namespace calibrax
