#include "calibrax/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "calibrax/error.hpp"
#include "calibrax/io.hpp"
#include "calibrax/parallel.hpp"

namespace calibrax {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Unbiased integer in [0, n) from a 64-bit engine; portable across standard libraries.
std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t n) {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
        x = rng();
    } while (x >= limit);
    return x % n;
}

// Floyd's sampling of `count` distinct values in [0, n), returned sorted.
std::vector<std::uint64_t> sample_distinct(std::uint64_t n, std::uint64_t count, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::set<std::uint64_t> chosen;
    for (std::uint64_t t = n - count; t < n; ++t) {
        std::uint64_t r = bounded(rng, t + 1);
        if (!chosen.insert(r).second) chosen.insert(t);
    }
    return {chosen.begin(), chosen.end()};
}

}  // namespace

std::string curve_kind_name(CurveKind k) {
    switch (k) {
        case CurveKind::exact_qp: return "exact_qp";
        case CurveKind::bound_vopt: return "bound_vopt";
        case CurveKind::bound_v1: return "bound_v1";
        case CurveKind::tree_closed: return "tree_closed";
        case CurveKind::minorant: return "minorant";
    }
    return "unknown";
}

std::string v_mode_name(VMode v) { return v == VMode::optimal ? "optimal" : "fixed_one"; }

void CalibrationCurve::validate() const {
    for (size_t t = 0; t < points.size(); ++t) {
        if (!(points[t].epsilon >= 0.0)) throw config_error("curve: negative epsilon");
        if (t && !(points[t].epsilon > points[t - 1].epsilon))
            throw config_error("curve: epsilons must be strictly increasing");
        if (std::isnan(points[t].value) || points[t].value < 0.0) throw config_error("curve: invalid value");
    }
}

std::vector<double> uniform_grid(double a, double b, int n) {
    if (n < 2) throw config_error("eps grid: need at least 2 points");
    if (!(a >= 0.0) || !(b > a) || !std::isfinite(b)) throw config_error("eps grid: need 0 <= a < b");
    std::vector<double> g(static_cast<size_t>(n));
    for (int t = 0; t < n; ++t) g[t] = a + (b - a) * t / (n - 1);
    g.front() = a;
    g.back() = b;
    return g;
}

std::vector<double> parse_eps_grid(const std::string& spec) {
    auto parts = split(spec, ':');
    if (parts.size() != 3) throw config_error("eps grid: expected a:b:n, got '" + spec + "'");
    double a, b, n;
    if (!parse_real(parts[0], a) || !parse_real(parts[1], b) || !parse_real(parts[2], n) || n != std::floor(n))
        throw config_error("eps grid: malformed '" + spec + "'");
    return uniform_grid(a, b, static_cast<int>(n));
}

std::string curve_csv(const CalibrationCurve& c, const std::string& extra_meta) {
    std::string out = "# meta: kind=" + curve_kind_name(c.meta);
    if (!extra_meta.empty()) out += " " + extra_meta;
    out += "\nepsilon,value\n";
    for (auto& p : c.points) out += format_real(p.epsilon) + "," + format_real(p.value) + "\n";
    return out;
}

CalibrationCurve parse_curve_csv(const std::string& text) {
    Table t = parse_table_csv(text);
    if (t.header.size() != 2 || t.header[0] != "epsilon" || t.header[1] != "value")
        throw config_error("curve CSV: header must be 'epsilon,value'");
    CalibrationCurve c;
    for (auto& line : t.comments) {
        auto pos = line.find("kind=");
        if (pos == std::string::npos) continue;
        std::string kind = line.substr(pos + 5);
        kind = kind.substr(0, kind.find(' '));
        for (CurveKind k : {CurveKind::exact_qp, CurveKind::bound_vopt, CurveKind::bound_v1, CurveKind::tree_closed,
                            CurveKind::minorant})
            if (curve_kind_name(k) == kind) c.meta = k;
    }
    for (auto& row : t.rows) c.points.push_back({row[0], row[1]});
    c.validate();
    return c;
}

PairPolicy PairPolicy::parse(const std::string& spec) {
    PairPolicy p;
    if (spec == "all") return p;
    if (spec == "orbit") {
        p.mode = Mode::orbit;
        return p;
    }
    auto parts = split(spec, ':');
    double n, seed;
    if (parts.size() == 3 && parts[0] == "sampled" && parse_real(parts[1], n) && parse_real(parts[2], seed) &&
        n >= 1 && n == std::floor(n) && seed >= 0 && seed == std::floor(seed)) {
        p.mode = Mode::sampled;
        p.count = static_cast<std::size_t>(n);
        p.seed = static_cast<std::uint64_t>(seed);
        return p;
    }
    throw config_error("pairs: expected all, orbit or sampled:N:SEED, got '" + spec + "'");
}

std::string PairPolicy::describe() const {
    switch (mode) {
        case Mode::all: return "all";
        case Mode::orbit: return "orbit";
        case Mode::sampled: return "sampled:" + std::to_string(count) + ":" + std::to_string(seed);
    }
    return "";
}

LabelPolicy LabelPolicy::parse(const std::string& spec) {
    LabelPolicy p;
    if (spec == "exhaustive") return p;
    auto parts = split(spec, ':');
    double n, seed;
    if (parts.size() == 3 && parts[0] == "sampled" && parse_real(parts[1], n) && parse_real(parts[2], seed) &&
        n >= 1 && n == std::floor(n) && seed >= 0 && seed == std::floor(seed)) {
        p.exhaustive = false;
        p.count = static_cast<std::size_t>(n);
        p.seed = static_cast<std::uint64_t>(seed);
        return p;
    }
    throw config_error("labels: expected exhaustive or sampled:N:SEED, got '" + spec + "'");
}

Index first_argmax(const Vector& f, double tol) {
    if (f.size() == 0) throw config_error("argmax of empty vector");
    const double mx = f.maxCoeff();
    for (Index c = 0; c < f.size(); ++c)
        if (f(c) >= mx - tol) return c;
    return 0;
}

namespace {

void check_simplex(const Vector& q, Index m) {
    if (q.size() != m) throw config_error("distribution has length " + std::to_string(q.size()) +
                                          ", expected " + std::to_string(m));
    if (q.minCoeff() < -1e-12 || std::abs(q.sum() - 1.0) > 1e-10)
        throw config_error("distribution is outside the probability simplex");
}

void check_pair(Index i, Index j, Index k) {
    if (i < 0 || j < 0 || i >= k || j >= k || i == j)
        throw config_error("pair (" + std::to_string(i) + ", " + std::to_string(j) + ") is invalid for k = " +
                           std::to_string(k));
}

void check_dims(const ScoreSubspace& s, const LossMatrix& L) {
    if (s.k() != L.k())
        throw config_error("score basis has " + std::to_string(s.k()) + " rows but the loss has " +
                           std::to_string(L.k()) + " outputs");
}

}  // namespace

Vector optimal_theta(const ScoreSubspace& s, const LossMatrix& L, const Vector& q) {
    check_dims(s, L);
    return -(s.projector.gram_pinv * (s.F.transpose() * (L.L * q)));
}

double excess_surrogate(const ScoreSubspace& s, const LossMatrix& L, const Vector& theta, const Vector& q) {
    check_dims(s, L);
    check_simplex(q, L.m());
    if (theta.size() != s.d()) throw config_error("theta has wrong length");
    Vector r = s.F * theta + s.projector.apply(Vector(L.L * q));
    return r.squaredNorm() / (2.0 * static_cast<double>(L.k()));
}

double excess_task(const LossMatrix& L, const Vector& f, const Vector& q) {
    if (f.size() != L.k()) throw config_error("score vector has wrong length");
    check_simplex(q, L.m());
    Vector lq = L.L * q;
    const Index pred = first_argmax(f);
    return lq(pred) - lq.minCoeff();
}

// ---------------------------------------------------------------- envelopes

namespace {

using Line = std::pair<double, double>;  // slope, intercept

// Breakpoints (> 0) of the upper envelope of the lines.
std::vector<double> envelope_breaks(std::vector<Line> lines) {
    std::sort(lines.begin(), lines.end(), [](const Line& a, const Line& b) {
        if (a.first != b.first) return a.first < b.first;
        return a.second > b.second;
    });
    std::vector<Line> hull;
    for (size_t t = 0; t < lines.size(); ++t) {
        if (!hull.empty() && hull.back().first == lines[t].first) continue;
        while (hull.size() >= 2) {
            const Line& l1 = hull[hull.size() - 2];
            const Line& l2 = hull.back();
            const Line& l3 = lines[t];
            if ((l1.second - l3.second) * (l2.first - l1.first) <= (l1.second - l2.second) * (l3.first - l1.first))
                hull.pop_back();
            else
                break;
        }
        hull.push_back(lines[t]);
    }
    std::vector<double> out;
    for (size_t t = 1; t < hull.size(); ++t) {
        const double x = (hull[t - 1].second - hull[t].second) / (hull[t].first - hull[t - 1].first);
        if (x > 0.0 && std::isfinite(x)) out.push_back(x);
    }
    return out;
}

double eval_abs_lines(const std::vector<Line>& lines, double v) {
    double m = 0.0;
    for (auto& [a, b] : lines) m = std::max(m, std::abs(a * v - b));
    return m;
}

}  // namespace

void PairBoundTerm::finalize() {
    std::vector<Line> up;
    up.reserve(2 * xi_lines.size());
    max_slope = 0.0;
    for (auto& [a, b] : xi_lines) {
        up.push_back({a, -b});
        up.push_back({-a, b});
        max_slope = std::max(max_slope, std::abs(a));
    }
    knots = {0.0};
    for (double x : envelope_breaks(up)) knots.push_back(x);
    knot_xi.resize(knots.size());
    for (size_t t = 0; t < knots.size(); ++t) knot_xi[t] = eval_abs_lines(xi_lines, knots[t]);

    // ξ(v)/v over v > 0 equals ψ(u) = max_y |a_y - b_y u| with u = 1/v
    std::vector<Line> inv;
    std::vector<Line> psi_lines;
    for (auto& [a, b] : xi_lines) {
        inv.push_back({-b, a});
        inv.push_back({b, -a});
        psi_lines.push_back({b, a});  // |b u - a| = |a - b u|
    }
    double best = eval_abs_lines(psi_lines, 0.0);
    for (double u : envelope_breaks(inv)) best = std::min(best, eval_abs_lines(psi_lines, u));
    inv_threshold = best <= 1e-12 ? 0.0 : best;
}

double PairBoundTerm::xi(double v) const { return eval_abs_lines(xi_lines, v); }

double PairBoundTerm::best_gain(double eps, double* v_at) const {
    if (eps > max_slope + 1e-12) {
        if (v_at) *v_at = kInf;
        return kInf;
    }
    double best = -kInf, arg = 0.0;
    for (size_t t = 0; t < knots.size(); ++t) {
        const double g = eps * knots[t] - knot_xi[t];
        if (g > best) {
            best = g;
            arg = knots[t];
        }
    }
    if (v_at) *v_at = arg;
    return best;
}

double PairBoundTerm::value(double eps, VMode mode) const {
    const double g = mode == VMode::optimal ? best_gain(eps) : eps - xi(1.0);
    const bool w_zero = w <= 1e-12;
    if (std::isinf(g)) return kInf;
    if (g <= 1e-12) return 0.0;
    if (w_zero) return kInf;
    return g * g / w;
}

// ---------------------------------------------------------------- context

CalibrationContext::CalibrationContext(const ScoreSubspace& s, const LossMatrix& L) : s_(s), l_(L) {
    check_dims(s, L);
    u_ = s.projector.orth;
    mcoef_ = u_.transpose() * L.L;
    pl_ = u_ * mcoef_;
    symmetric_ = has_output_symmetry(s, L);
    cones_.resize(static_cast<size_t>(L.k()));
}

double CalibrationContext::eps_max(Index i, Index j) const {
    return (l_.L.row(j) - l_.L.row(i)).maxCoeff();
}

PairBoundTerm CalibrationContext::bound_term(Index i, Index j) const {
    check_pair(i, j, k());
    PairBoundTerm t;
    t.i = i;
    t.j = j;
    t.w = 2.0 * static_cast<double>(k()) * (u_.row(i) - u_.row(j)).squaredNorm();
    t.xi_lines.resize(static_cast<size_t>(m()));
    for (Index y = 0; y < m(); ++y)
        t.xi_lines[static_cast<size_t>(y)] = {l_.L(i, y) - l_.L(j, y), pl_(i, y) - pl_(j, y)};
    t.finalize();
    return t;
}

Matrix CalibrationContext::cone_rows(Index j) const {
    if (j < 0 || j >= k()) throw config_error("cone_rows: output index out of range");
    const Index rho = u_.cols();
    if (s_.kind == SubspaceKind::map_sort && s_.param >= 2 && s_.param <= kMaxExplicitR &&
        rho == static_cast<Index>(s_.param)) {
        // sortedness of θ along the ranking of output j
        const int r = s_.param;
        Permutation sigma = identity_permutation(r);
        for (Index t = 0; t < j; ++t) std::next_permutation(sigma.positions.begin(), sigma.positions.end());
        std::vector<int> item_at(static_cast<size_t>(r));
        for (int p = 0; p < r; ++p) item_at[static_cast<size_t>(sigma.positions[p] - 1)] = p;
        Matrix rows(r - 1, rho);
        const Matrix& coef = s_.projector.coef;
        for (int t = 0; t + 1 < r; ++t) rows.row(t) = coef.row(item_at[t]) - coef.row(item_at[t + 1]);
        return rows;
    }
    std::vector<Eigen::RowVectorXd> kept;
    for (Index c = 0; c < k(); ++c) {
        if (c == j) continue;
        Eigen::RowVectorXd row = u_.row(j) - u_.row(c);
        if (row.cwiseAbs().maxCoeff() <= 1e-12) continue;
        kept.push_back(row);
    }
    // drop duplicates, compared after rounding to a 1e-12 grid
    auto key = [](const Eigen::RowVectorXd& r) {
        std::vector<long long> out(static_cast<size_t>(r.size()));
        for (Index t = 0; t < r.size(); ++t) out[static_cast<size_t>(t)] = std::llround(r(t) * 1e12);
        return out;
    };
    std::vector<std::pair<std::vector<long long>, size_t>> keys;
    for (size_t t = 0; t < kept.size(); ++t) keys.push_back({key(kept[t]), t});
    std::sort(keys.begin(), keys.end());
    std::vector<size_t> order;
    for (size_t t = 0; t < keys.size(); ++t)
        if (t == 0 || keys[t].first != keys[t - 1].first) order.push_back(keys[t].second);
    std::sort(order.begin(), order.end());
    Matrix rows(static_cast<Index>(order.size()), rho);
    for (size_t t = 0; t < order.size(); ++t) rows.row(static_cast<Index>(t)) = kept[order[t]];
    return rows;
}

std::shared_ptr<const Matrix> CalibrationContext::cached_cone(Index j) const {
    {
        std::lock_guard<std::mutex> lock(cache_mu_);
        if (cones_[static_cast<size_t>(j)]) return cones_[static_cast<size_t>(j)];
    }
    auto rows = std::make_shared<const Matrix>(cone_rows(j));
    std::lock_guard<std::mutex> lock(cache_mu_);
    if (!cones_[static_cast<size_t>(j)]) cones_[static_cast<size_t>(j)] = rows;
    return cones_[static_cast<size_t>(j)];
}

namespace {

struct BuiltQP {
    QPProblem qp;
    std::vector<Index> support;  // label columns kept as variables
};

BuiltQP build_pair_qp(const CalibrationContext& ctx, Index i, Index j, double eps, bool relaxed, const Matrix& cone,
                      bool allow_reduction) {
    const LossMatrix& L = ctx.loss();
    const Index rho = ctx.rho(), m = ctx.m(), k = ctx.k();
    BuiltQP out;
    bool eps_row = true;
    const double emax = ctx.eps_max(i, j);
    if (allow_reduction && relaxed && eps >= emax - 1e-12) {
        // ε sits on the edge of feasibility: q lives on the labels attaining the maximum gap
        for (Index y = 0; y < m; ++y)
            if (L.L(j, y) - L.L(i, y) >= emax - 1e-12) out.support.push_back(y);
        eps_row = false;
    } else {
        out.support.resize(static_cast<size_t>(m));
        std::iota(out.support.begin(), out.support.end(), Index(0));
    }
    const Index ms = static_cast<Index>(out.support.size());
    const Index n = rho + ms;
    Matrix Ms(rho, ms), Ls(k, ms);
    for (Index t = 0; t < ms; ++t) {
        Ms.col(t) = ctx.coords().col(out.support[static_cast<size_t>(t)]);
        Ls.col(t) = L.L.col(out.support[static_cast<size_t>(t)]);
    }
    Matrix H(n, n);
    H.topLeftCorner(rho, rho).setIdentity();
    H.topRightCorner(rho, ms) = Ms;
    H.bottomLeftCorner(ms, rho) = Ms.transpose();
    H.bottomRightCorner(ms, ms) = Ms.transpose() * Ms;
    QPProblem qp = make_qp(std::move(H), Vector::Zero(n));

    const Index n_opt = relaxed ? 0 : k - 1;
    const Index rows = (eps_row ? 1 : 0) + n_opt + cone.rows();
    qp.A_ineq = Matrix::Zero(rows, n);
    qp.b_ineq = Vector::Zero(rows);
    Index r = 0;
    if (eps_row) {
        qp.A_ineq.row(r).tail(ms) = Ls.row(j) - Ls.row(i);
        qp.b_ineq(r++) = eps;
    }
    if (!relaxed)
        for (Index c = 0; c < k; ++c)
            if (c != i) qp.A_ineq.row(r++).tail(ms) = Ls.row(c) - Ls.row(i);
    if (cone.rows()) qp.A_ineq.block(r, 0, cone.rows(), rho) = cone;
    qp.A_eq = Matrix::Zero(1, n);
    qp.A_eq.row(0).tail(ms).setOnes();
    qp.b_eq = Vector::Ones(1);
    qp.nonneg.assign(static_cast<size_t>(n), false);
    for (Index t = rho; t < n; ++t) qp.nonneg[static_cast<size_t>(t)] = true;
    out.qp = std::move(qp);
    return out;
}

}  // namespace

QPProblem CalibrationContext::pair_qp(Index i, Index j, double eps, bool relaxed, const Matrix& cone) const {
    check_pair(i, j, k());
    return build_pair_qp(*this, i, j, eps, relaxed, cone, false).qp;
}

CalibrationContext::PairSolve CalibrationContext::solve_pair(Index i, Index j, double eps, bool relaxed) const {
    check_pair(i, j, k());
    if (!(eps >= 0.0)) throw config_error("epsilon must be non-negative");
    PairSolve out;
    if (eps > eps_max(i, j) + 1e-12) {
        out.value = kInf;
        out.status = QPStatus::infeasible;
        return out;
    }
    auto cone = cached_cone(j);
    BuiltQP b = build_pair_qp(*this, i, j, eps, relaxed, *cone, true);
    QPSettings st;
    st.check_psd = false;
    QPSolution sol = solve_qp(b.qp, st);
    out.status = sol.status;
    out.iterations = sol.iterations;
    if (sol.status == QPStatus::infeasible) {
        out.value = kInf;
        return out;
    }
    if (sol.status != QPStatus::optimal)
        throw Error(ErrorKind::solver, "pair QP (" + std::to_string(i + 1) + ", " + std::to_string(j + 1) +
                                           ") at eps " + format_real(eps) + ": " + status_name(sol.status));
    const double obj = std::max(0.0, sol.objective);
    out.value = obj < kZeroObjective ? 0.0 : obj / static_cast<double>(k());
    out.q = Vector::Zero(m());
    for (size_t t = 0; t < b.support.size(); ++t) out.q(b.support[t]) = sol.x(rho() + static_cast<Index>(t));
    return out;
}

std::vector<std::pair<Index, Index>> CalibrationContext::select_pairs(const PairPolicy& policy) const {
    std::vector<std::pair<Index, Index>> pairs;
    const Index kk = k();
    if (kk < 2) throw config_error("need at least two outputs");
    switch (policy.mode) {
        case PairPolicy::Mode::all:
            for (Index i = 0; i < kk; ++i)
                for (Index j = 0; j < kk; ++j)
                    if (i != j) pairs.push_back({i, j});
            break;
        case PairPolicy::Mode::orbit:
            if (!symmetric_)
                throw config_error("pairs=orbit needs a loss/subspace pair with transitive output symmetry");
            for (Index i = 1; i < kk; ++i) pairs.push_back({i, 0});
            break;
        case PairPolicy::Mode::sampled: {
            const std::uint64_t total = static_cast<std::uint64_t>(kk) * static_cast<std::uint64_t>(kk - 1);
            const std::uint64_t cnt = std::min<std::uint64_t>(policy.count, total);
            for (std::uint64_t code : sample_distinct(total, cnt, policy.seed)) {
                const Index i = static_cast<Index>(code / static_cast<std::uint64_t>(kk - 1));
                Index j = static_cast<Index>(code % static_cast<std::uint64_t>(kk - 1));
                if (j >= i) ++j;
                pairs.push_back({i, j});
            }
            break;
        }
    }
    return pairs;
}

double pair_calibration(const ScoreSubspace& s, const LossMatrix& L, Index i, Index j, double eps) {
    CalibrationContext ctx(s, L);
    return ctx.solve_pair(i, j, eps, false).value;
}

// ---------------------------------------------------------------- curves

namespace {

void check_grid(const std::vector<double>& grid) {
    if (grid.empty()) throw config_error("eps grid is empty");
    for (size_t t = 0; t < grid.size(); ++t) {
        if (!(grid[t] >= 0.0) || !std::isfinite(grid[t])) throw config_error("eps grid: values must be finite and >= 0");
        if (t && !(grid[t] > grid[t - 1])) throw config_error("eps grid must be strictly increasing");
    }
}

std::vector<PairBoundTerm> all_terms(const CalibrationContext& ctx, const std::vector<std::pair<Index, Index>>& pairs,
                                     int workers) {
    std::vector<PairBoundTerm> terms(pairs.size());
    parallel_for(pairs.size(), workers, [&](size_t t) { terms[t] = ctx.bound_term(pairs[t].first, pairs[t].second); });
    return terms;
}

}  // namespace

CalibrationCurve calibration_curve(const ScoreSubspace& s, const LossMatrix& L, const std::vector<double>& grid,
                                   const CurveOptions& opt, CurveStats* stats) {
    check_grid(grid);
    CalibrationContext ctx(s, L);
    const auto pairs = ctx.select_pairs(opt.pairs);
    const bool relaxed = opt.pairs.mode != PairPolicy::Mode::sampled;
    const auto terms = all_terms(ctx, pairs, opt.workers);
    const size_t np = pairs.size();
    std::vector<double> emax(np), prev(np, 0.0);
    for (size_t p = 0; p < np; ++p) emax[p] = ctx.eps_max(pairs[p].first, pairs[p].second);

    CalibrationCurve curve;
    curve.meta = CurveKind::exact_qp;
    std::uint64_t solves = 0;
    long last_best = -1;
    double running = 0.0;
    const size_t batch = static_cast<size_t>(std::max(1, opt.batch));
    for (double eps : grid) {
        if (eps <= 0.0) {
            curve.points.push_back({eps, 0.0});
            continue;
        }
        std::vector<size_t> cand;
        std::vector<double> lb(np, kInf);
        for (size_t p = 0; p < np; ++p) {
            if (eps > emax[p] + 1e-12) {
                prev[p] = kInf;
                continue;
            }
            lb[p] = std::max(prev[p], terms[p].value(eps, VMode::optimal));
            if (std::isfinite(lb[p])) cand.push_back(p);
        }
        std::sort(cand.begin(), cand.end(), [&](size_t a, size_t b) {
            const bool fa = static_cast<long>(a) == last_best, fb = static_cast<long>(b) == last_best;
            if (fa != fb) return fa;
            if (lb[a] != lb[b]) return lb[a] < lb[b];
            return a < b;
        });
        double best = kInf;
        long best_p = -1;
        // lower bounds of pairs that were never solved may be infinite; those pairs cannot win
        size_t pos = 0;
        while (pos < cand.size() && best > 0.0) {
            std::vector<size_t> chunk;
            while (pos < cand.size() && chunk.size() < batch) {
                if (lb[cand[pos]] >= best) {
                    pos = cand.size();
                    break;
                }
                chunk.push_back(cand[pos++]);
            }
            if (chunk.empty()) break;
            std::vector<double> vals(chunk.size());
            parallel_for(chunk.size(), opt.workers, [&](size_t t) {
                const auto& pr = pairs[chunk[t]];
                vals[t] = ctx.solve_pair(pr.first, pr.second, eps, relaxed).value;
            });
            solves += chunk.size();
            for (size_t t = 0; t < chunk.size(); ++t) {
                prev[chunk[t]] = std::max(prev[chunk[t]], vals[t]);
                if (vals[t] < best) {
                    best = vals[t];
                    best_p = static_cast<long>(chunk[t]);
                }
            }
        }
        if (best_p >= 0) last_best = best_p;
        running = std::max(running, best);
        curve.points.push_back({eps, running});
    }
    if (stats) {
        stats->qp_solves = solves;
        stats->pairs = np;
    }
    return curve;
}

double xi_ij(const ScoreSubspace& s, const LossMatrix& L, Index i, Index j, double v) {
    if (!(v >= 0.0)) throw config_error("xi_ij: v must be >= 0");
    CalibrationContext ctx(s, L);
    return ctx.bound_term(i, j).xi(v);
}

double theorem1_bound(const ScoreSubspace& s, const LossMatrix& L, double eps, VMode mode, const PairPolicy& pairs) {
    return bound_curve(s, L, {eps}, mode, pairs, 1).points.front().value;
}

CalibrationCurve bound_curve(const ScoreSubspace& s, const LossMatrix& L, const std::vector<double>& grid, VMode mode,
                             const PairPolicy& pairs, int workers) {
    check_grid(grid);
    CalibrationContext ctx(s, L);
    const auto sel = ctx.select_pairs(pairs);
    const auto terms = all_terms(ctx, sel, workers);
    CalibrationCurve c;
    c.meta = mode == VMode::optimal ? CurveKind::bound_vopt : CurveKind::bound_v1;
    for (double eps : grid) {
        double best = kInf;
        for (auto& t : terms) best = std::min(best, t.value(eps, mode));
        c.points.push_back({eps, best});
    }
    return c;
}

// ---------------------------------------------------------------- tree closed form

bool tree_average_below_half(const TreeSpec& spec, int t) {
    return spec.mean_block_distance(t) < 0.5 * spec.tail_weight(t) - 1e-15;
}

namespace {

void check_tree_t(const TreeSpec& spec, int t, double eps) {
    spec.validate();
    if (t < 1 || t > spec.depth()) throw config_error("tree bound: t must be in 1.." + std::to_string(spec.depth()));
    if (!(eps >= 0.0)) throw config_error("tree bound: epsilon must be >= 0");
}

double level_term(double d, double dt, double abar, double eps, double bt) {
    const double gain = std::max(0.0, eps - 0.5 * dt);
    if (gain == 0.0) return 0.0;
    const double den = d - 0.5 * dt;
    if (den <= 0.0) return kInf;
    const double ratio = (d - abar) / den;
    return ratio * ratio * gain * gain / (4.0 * bt);
}

}  // namespace

double tree_bound_nearest_level(const TreeSpec& spec, int t, double eps) {
    check_tree_t(spec, t, eps);
    const double dt = spec.tail_weight(t);
    if (!(eps > dt)) return 0.0;
    const double dmin = dt + spec.weights[static_cast<size_t>(t - 1)];
    return level_term(dmin, dt, spec.mean_block_distance(t), eps, static_cast<double>(spec.block_count(t)));
}

double tree_bound_closed(const TreeSpec& spec, int t, double eps) {
    check_tree_t(spec, t, eps);
    const double dt = spec.tail_weight(t);
    if (!(eps > dt)) return 0.0;
    const double abar = spec.mean_block_distance(t);
    const double bt = static_cast<double>(spec.block_count(t));
    // cross-block pairs meet at some depth u < t; pairs closer than ε cannot reach it
    double best = kInf;
    for (int u = 0; u < t; ++u) {
        const double d = spec.tail_weight(u);
        if (eps > d + 1e-12) continue;
        best = std::min(best, level_term(d, dt, abar, eps, bt));
    }
    return best;
}

CalibrationCurve tree_closed_curve(const TreeSpec& spec, int t, const std::vector<double>& grid) {
    check_grid(grid);
    CalibrationCurve c;
    c.meta = CurveKind::tree_closed;
    for (double eps : grid) c.points.push_back({eps, tree_bound_closed(spec, t, eps)});
    return c;
}

// ---------------------------------------------------------------- consistency

std::string ConsistencyReport::to_json() const {
    nlohmann::ordered_json j;
    j["eta_lower"] = eta_lower;
    j["eta_upper"] = std::isfinite(eta_upper) ? nlohmann::ordered_json(eta_upper) : nlohmann::ordered_json("inf");
    nlohmann::ordered_json w;
    w["label"] = witness.label;
    w["predicted"] = witness.predicted;
    w["optimal"] = witness.optimal;
    w["source"] = witness.source;
    nlohmann::ordered_json dist = nlohmann::ordered_json::array();
    for (auto& [label, prob] : witness.distribution) dist.push_back({{"label", label}, {"prob", prob}});
    w["distribution"] = dist;
    j["witness"] = w;
    j["pairs"] = pairs;
    return j.dump(2) + "\n";
}

namespace {

double tie_tol(const Vector& f) { return 1e-10 * (1.0 + f.cwiseAbs().maxCoeff()); }

struct Candidate {
    double excess = -1.0;
    Vector q;
    Index pred = 0;
    std::string source;
};

Candidate evaluate_candidate(const CalibrationContext& ctx, const Vector& q, const std::string& source) {
    Candidate c;
    Vector f = -(ctx.projected_loss() * q);
    c.pred = first_argmax(f, tie_tol(f));
    Vector lq = ctx.loss().L * q;
    c.excess = lq(c.pred) - lq.minCoeff();
    c.q = q;
    c.source = source;
    return c;
}

Vector clean_simplex(Vector q) {
    q = q.cwiseMax(0.0);
    const double s = q.sum();
    if (s > 0.0) q /= s;
    return q;
}

// Searches distributions on which output j is still predicted while i is as good as possible.
Candidate lp_search(const CalibrationContext& ctx, Index j, const std::vector<Index>& others, int workers) {
    const Index m = ctx.m();
    Matrix cone = ctx.cone_rows(j);
    Matrix C = -(cone * ctx.coords());  // rows: margins of output j over q
    const Index rows = C.rows();
    Vector norms(rows);
    for (Index r = 0; r < rows; ++r) norms(r) = std::max(C.row(r).norm(), 1e-300);
    QPSettings st;
    st.check_psd = false;

    // interior direction: maximize the smallest normalized margin
    Vector q_int = Vector::Constant(m, 1.0 / m);
    double t_int = 1.0;
    if (rows) {
        QPProblem lp = make_qp(Matrix::Zero(m + 1, m + 1), Vector::Zero(m + 1));
        lp.c(m) = -1.0;
        lp.A_ineq = Matrix::Zero(rows + 1, m + 1);
        lp.A_ineq.topLeftCorner(rows, m) = C;
        lp.A_ineq.block(0, m, rows, 1) = -norms;
        lp.A_ineq(rows, m) = -1.0;
        lp.b_ineq = Vector::Zero(rows + 1);
        lp.b_ineq(rows) = -1.0;
        lp.A_eq = Matrix::Zero(1, m + 1);
        lp.A_eq.row(0).head(m).setOnes();
        lp.b_eq = Vector::Ones(1);
        lp.nonneg.assign(static_cast<size_t>(m + 1), true);
        lp.nonneg.back() = false;
        QPSolution sol = solve_qp(lp, st);
        if (sol.status == QPStatus::optimal) {
            q_int = clean_simplex(sol.x.head(m));
            t_int = sol.x(m);
        } else {
            t_int = 0.0;
        }
    }

    std::vector<Candidate> found(others.size());
    parallel_for(others.size(), workers, [&](size_t t) {
        const Index i = others[t];
        QPProblem lp = make_qp(Matrix::Zero(m, m), Vector(-(ctx.loss().L.row(j) - ctx.loss().L.row(i)).transpose()));
        lp.A_ineq = C;
        lp.b_ineq = Vector::Zero(rows);
        lp.A_eq = Matrix::Ones(1, m);
        lp.b_eq = Vector::Ones(1);
        lp.nonneg.assign(static_cast<size_t>(m), true);
        QPSolution sol = solve_qp(lp, st);
        if (sol.status != QPStatus::optimal) return;
        Vector q = clean_simplex(sol.x);
        if (t_int > 1e-9) {
            // step inside the cone so that j wins strictly, by a margin well above the tie tolerance
            const double lam = std::min(1e-3, 1e-7 / t_int);
            q = clean_simplex((1.0 - lam) * q + lam * q_int);
        }
        found[t] = evaluate_candidate(ctx, q, "lp_vertex");
    });
    Candidate best;
    for (auto& c : found)
        if (c.excess > best.excess) best = c;
    return best;
}

}  // namespace

ConsistencyReport consistency_report(const ScoreSubspace& s, const LossMatrix& L, const ConsistencyOptions& opt) {
    CalibrationContext ctx(s, L);
    const Index m = ctx.m(), k = ctx.k();
    ConsistencyReport rep;

    // point masses
    std::vector<Index> labels;
    if (opt.labels.exhaustive) {
        labels.resize(static_cast<size_t>(m));
        std::iota(labels.begin(), labels.end(), Index(0));
    } else {
        for (auto y : sample_distinct(static_cast<std::uint64_t>(m), std::min<std::uint64_t>(opt.labels.count, m),
                                      opt.labels.seed))
            labels.push_back(static_cast<Index>(y));
    }
    Candidate best;
    for (Index y : labels) {
        Vector q = Vector::Zero(m);
        q(y) = 1.0;
        Candidate c = evaluate_candidate(ctx, q, "point_mass");
        if (c.excess > best.excess) best = c;
    }

    PairPolicy pairs = opt.pairs;
    if (pairs.mode == PairPolicy::Mode::all && ctx.symmetric()) pairs.mode = PairPolicy::Mode::orbit;
    if (pairs.mode == PairPolicy::Mode::sampled) throw config_error("consistency: pairs must be all or orbit");
    rep.pairs = pairs.describe();

    if (opt.refine) {
        std::vector<Index> js;
        if (pairs.mode == PairPolicy::Mode::orbit)
            js.push_back(0);
        else
            for (Index j = 0; j < k; ++j) js.push_back(j);
        for (Index j : js) {
            std::vector<Index> others;
            for (Index i = 0; i < k; ++i)
                if (i != j) others.push_back(i);
            Candidate c = lp_search(ctx, j, others, opt.workers);
            if (c.excess > best.excess + 1e-12) best = c;
        }
    }
    rep.eta_lower = std::max(0.0, best.excess);
    if (rep.eta_lower <= 1e-12) rep.eta_lower = 0.0;
    {
        Index top = 0;
        best.q.maxCoeff(&top);
        Vector lq = L.L * best.q;
        Index opt_out = 0;
        lq.minCoeff(&opt_out);
        rep.witness.label = L.gt_labels[static_cast<size_t>(top)];
        rep.witness.predicted = L.output_labels[static_cast<size_t>(best.pred)];
        rep.witness.optimal = L.output_labels[static_cast<size_t>(opt_out)];
        rep.witness.source = best.source;
        for (Index y = 0; y < m; ++y)
            if (best.q(y) > 1e-12) rep.witness.distribution.push_back({L.gt_labels[static_cast<size_t>(y)], best.q(y)});
    }

    const auto sel = ctx.select_pairs(pairs);
    std::vector<double> thr(sel.size());
    parallel_for(sel.size(), opt.workers,
                 [&](size_t t) { thr[t] = ctx.bound_term(sel[t].first, sel[t].second).inv_threshold; });
    rep.eta_upper = thr.empty() ? 0.0 : *std::max_element(thr.begin(), thr.end());
    return rep;
}

// ---------------------------------------------------------------- minorant and sample complexity

CalibrationCurve convex_minorant(const CalibrationCurve& curve) {
    curve.validate();
    CalibrationCurve out;
    out.meta = CurveKind::minorant;
    size_t nf = 0;
    while (nf < curve.points.size() && std::isfinite(curve.points[nf].value)) ++nf;
    // lower hull of the finite prefix
    std::vector<size_t> hull;
    auto cross = [&](size_t o, size_t a, size_t b) {
        const auto& P = curve.points;
        return (P[a].epsilon - P[o].epsilon) * (P[b].value - P[o].value) -
               (P[a].value - P[o].value) * (P[b].epsilon - P[o].epsilon);
    };
    for (size_t t = 0; t < nf; ++t) {
        while (hull.size() >= 2 && cross(hull[hull.size() - 2], hull.back(), t) <= 0.0) hull.pop_back();
        hull.push_back(t);
    }
    size_t seg = 0;
    std::vector<double> vals(nf);
    for (size_t t = 0; t < nf; ++t) {
        while (seg + 1 < hull.size() && hull[seg + 1] < t) ++seg;
        const auto& P = curve.points;
        if (hull.size() == 1 || t == hull[seg]) {
            vals[t] = P[hull[seg]].value;
        } else {
            const auto& a = P[hull[seg]];
            const auto& b = P[hull[seg + 1]];
            const double lam = (P[t].epsilon - a.epsilon) / (b.epsilon - a.epsilon);
            vals[t] = std::min(P[t].value, a.value + lam * (b.value - a.value));
        }
    }
    // flatten anything left of the hull minimum so the result is non-decreasing
    if (nf) {
        size_t amin = 0;
        for (size_t t = 1; t < nf; ++t)
            if (vals[t] < vals[amin]) amin = t;
        for (size_t t = 0; t < amin; ++t) vals[t] = vals[amin];
    }
    for (size_t t = 0; t < curve.points.size(); ++t)
        out.points.push_back({curve.points[t].epsilon, t < nf ? std::max(0.0, vals[t]) : kInf});
    return out;
}

double curve_value_at(const CalibrationCurve& curve, double eps) {
    const auto& P = curve.points;
    if (P.empty()) throw config_error("empty curve");
    if (eps < P.front().epsilon || eps > P.back().epsilon)
        throw config_error("epsilon " + format_real(eps) + " lies outside the curve grid");
    for (size_t t = 0; t < P.size(); ++t) {
        if (P[t].epsilon == eps) return P[t].value;
        if (P[t].epsilon > eps) {
            const auto& a = P[t - 1];
            const auto& b = P[t];
            if (std::isinf(b.value)) return std::isinf(a.value) ? kInf : a.value;
            const double lam = (eps - a.epsilon) / (b.epsilon - a.epsilon);
            return a.value + lam * (b.value - a.value);
        }
    }
    return P.back().value;
}

double dm_constant(double l_max, double kappa, double d, double R, double Q) {
    for (double x : {l_max, kappa, d, R, Q})
        if (!(x > 0.0) || !std::isfinite(x)) throw config_error("sample complexity: l_max, kappa, d, R, Q must be > 0");
    const double z = kappa * std::sqrt(d) * R * Q;
    return l_max * l_max * (z * z + z);
}

SampleComplexity sample_complexity_dm(const CalibrationCurve& minorant, double eps, double dm) {
    if (!(eps > 0.0)) throw Error(ErrorKind::below_level, "target accuracy below consistency level (epsilon must be > 0)");
    if (!(dm > 0.0) || !std::isfinite(dm)) throw config_error("sample complexity: DM must be > 0");
    SampleComplexity out;
    out.epsilon = eps;
    out.dm = dm;
    out.delta = curve_value_at(minorant, eps);
    if (!(out.delta > 0.0))
        throw Error(ErrorKind::below_level, "target accuracy below consistency level: the calibration minorant is zero at "
                                            "epsilon " + format_real(eps));
    if (std::isinf(out.delta)) {
        out.n_real = 0.0;
        out.n_steps = 0;
        return out;
    }
    out.n_real = 4.0 * dm * dm / (out.delta * out.delta);
    // round up, ignoring relative noise below 1e-9 from the curve values
    out.n_steps = static_cast<std::uint64_t>(std::ceil(out.n_real * (1.0 - 1e-9)));
    return out;
}

SampleComplexity sample_complexity(const CalibrationCurve& minorant, double eps, double l_max, double kappa, double d,
                                   double R, double Q) {
    const double dm = dm_constant(l_max, kappa, d, R, Q);
    SampleComplexity out = sample_complexity_dm(minorant, eps, dm);
    out.xi_arg = kappa * std::sqrt(d) * R * Q;
    return out;
}

std::string SampleComplexity::to_json() const {
    nlohmann::ordered_json j;
    j["n_star"] = n_steps;
    j["n_star_real"] = n_real;
    j["epsilon"] = epsilon;
    j["delta"] = std::isfinite(delta) ? nlohmann::ordered_json(delta) : nlohmann::ordered_json("inf");
    j["dm"] = dm;
    if (xi_arg > 0.0) j["xi_argument"] = xi_arg;
    return j.dump(2) + "\n";
}

// ---------------------------------------------------------------- Dorn certificate

DornReport dorn_certificate_check(const ScoreSubspace& s, const LossMatrix& L, Index i, Index j, double eps, double v) {
    check_dims(s, L);
    check_pair(i, j, L.k());
    if (!(eps >= 0.0) || !(v >= 0.0)) throw config_error("dorn check: eps and v must be >= 0");
    CalibrationContext ctx(s, L);
    DornReport rep;
    const Index k = L.k(), m = L.m(), d = s.d();
    const double kd = static_cast<double>(k);
    const double pd = (ctx.orth().row(i) - ctx.orth().row(j)).squaredNorm();
    if (pd <= 1e-12) {
        rep.status = "excluded pair";
        return rep;
    }
    // relaxed pair problem in (θ, q): ε row, one ordering row, simplex
    const Index n = d + m;
    Matrix H(n, n);
    H.topLeftCorner(d, d) = s.F.transpose() * s.F;
    H.topRightCorner(d, m) = s.F.transpose() * L.L;
    H.bottomLeftCorner(m, d) = H.topRightCorner(d, m).transpose();
    H.bottomRightCorner(m, m) = ctx.coords().transpose() * ctx.coords();
    QPProblem primal = make_qp(std::move(H), Vector::Zero(n));
    primal.A_ineq = Matrix::Zero(2, n);
    primal.A_ineq.row(0).tail(m) = L.L.row(j) - L.L.row(i);
    primal.A_ineq.row(1).head(d) = s.F.row(j) - s.F.row(i);
    primal.b_ineq = Vector::Zero(2);
    primal.b_ineq(0) = eps;
    primal.A_eq = Matrix::Zero(1, n);
    primal.A_eq.row(0).tail(m).setOnes();
    primal.b_eq = Vector::Ones(1);
    primal.nonneg.assign(static_cast<size_t>(n), false);
    for (Index t = d; t < n; ++t) primal.nonneg[static_cast<size_t>(t)] = true;

    Vector a = (L.L.row(i) - L.L.row(j)).transpose();
    Vector b = (ctx.projected_loss().row(i) - ctx.projected_loss().row(j)).transpose();
    const double u0 = (v * a - b).minCoeff();
    const double vf = std::max(0.0, v * eps + u0) / pd;
    Vector delta = Vector::Zero(k);
    delta(i) = 1.0;
    delta(j) = -1.0;
    Vector w = Vector::Zero(n + 3);
    w.head(d) = -vf * (s.projector.gram_pinv * (s.F.transpose() * delta));
    w(n) = v * vf;   // ε row
    w(n + 1) = vf;   // ordering row
    w(n + 2) = vf * u0;

    QPProblem dual = dorn_dual(primal);
    const double scale = 1.0 + w.cwiseAbs().maxCoeff();
    rep.max_violation = dual.max_violation(w);
    rep.feasible = rep.max_violation <= 1e-9 * scale;
    rep.certificate = dorn_dual_value(primal, w) / kd;
    PairBoundTerm term = ctx.bound_term(i, j);
    const double g = std::max(0.0, eps * v - term.xi(v));
    rep.bound = g * g / (2.0 * kd * pd);
    rep.qp_value = ctx.solve_pair(i, j, eps, false).value;
    rep.sandwiched = rep.feasible && rep.certificate >= rep.bound - 1e-9 && rep.certificate <= rep.qp_value + 1e-7;
    rep.status = rep.sandwiched ? "ok" : "failed";
    return rep;
}

}  // namespace calibrax
