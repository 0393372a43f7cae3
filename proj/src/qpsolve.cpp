#include "calibrax/qpsolve.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "calibrax/error.hpp"

namespace calibrax {

namespace {

double inf_norm(const Vector& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

}  // namespace

QPProblem make_qp(Matrix H, Vector c) {
    QPProblem p;
    const Index n = H.rows();
    p.H = std::move(H);
    p.c = std::move(c);
    p.A_ineq.resize(0, n);
    p.b_ineq.resize(0);
    p.A_eq.resize(0, n);
    p.b_eq.resize(0);
    return p;
}

std::string status_name(QPStatus s) {
    switch (s) {
        case QPStatus::optimal: return "optimal";
        case QPStatus::infeasible: return "infeasible";
        case QPStatus::unbounded: return "unbounded";
        case QPStatus::max_iterations: return "max_iterations";
        case QPStatus::numerical_failure: return "numerical_failure";
    }
    return "unknown";
}

void QPProblem::validate() const {
    const Index nn = H.rows();
    if (nn < 1 || H.cols() != nn) throw config_error("qp: H must be square and non-empty");
    if (c.size() != nn) throw config_error("qp: c has wrong length");
    if (A_ineq.cols() != nn || A_ineq.rows() != b_ineq.size())
        throw config_error("qp: inequality system has inconsistent dimensions");
    if (A_eq.cols() != nn || A_eq.rows() != b_eq.size())
        throw config_error("qp: equality system has inconsistent dimensions");
    if (!nonneg.empty() && static_cast<Index>(nonneg.size()) != nn)
        throw config_error("qp: nonneg mask has wrong length");
    const double scale = std::max(1.0, H.cwiseAbs().maxCoeff());
    if ((H - H.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
        throw config_error("qp: H is not symmetric");
    auto finite = [](const auto& m) { return m.allFinite(); };
    if (!finite(H) || !finite(c) || !finite(A_ineq) || !finite(b_ineq) || !finite(A_eq) || !finite(b_eq))
        throw config_error("qp: non-finite data");
}

double QPProblem::objective(const Vector& x) const { return 0.5 * x.dot(H * x) + c.dot(x); }

double QPProblem::max_violation(const Vector& x) const {
    double v = 0.0;
    if (n_ineq()) v = std::max(v, (b_ineq - A_ineq * x).maxCoeff());
    if (n_eq()) v = std::max(v, inf_norm(A_eq * x - b_eq));
    for (Index p = 0; p < n(); ++p)
        if (is_nonneg(p)) v = std::max(v, -x(p));
    return std::max(v, 0.0);
}

namespace {

// Working form: G x >= h where G = [A_ineq; rows of I for bounded variables].
struct Work {
    const QPProblem& p;
    Matrix H;
    std::vector<Index> bidx;
    Index n, mi, mb, me;

    explicit Work(const QPProblem& prob) : p(prob), H(prob.H) {
        n = p.n();
        mi = p.n_ineq();
        me = p.n_eq();
        for (Index q = 0; q < n; ++q)
            if (p.is_nonneg(q)) bidx.push_back(q);
        mb = static_cast<Index>(bidx.size());
    }
    Index m() const { return mi + mb; }

    Vector g_mul(const Vector& x) const {
        Vector out(m());
        if (mi) out.head(mi) = p.A_ineq * x;
        for (Index t = 0; t < mb; ++t) out(mi + t) = x(bidx[t]);
        return out;
    }
    Vector gt_mul(const Vector& z) const {
        Vector out = Vector::Zero(n);
        if (mi) out += p.A_ineq.transpose() * z.head(mi);
        for (Index t = 0; t < mb; ++t) out(bidx[t]) += z(mi + t);
        return out;
    }
    Vector h() const {
        Vector out = Vector::Zero(m());
        if (mi) out.head(mi) = p.b_ineq;
        return out;
    }
};

struct Kkt {
    Eigen::LLT<Matrix> kfac;
    Eigen::LDLT<Matrix> kfac_ldlt;
    bool use_ldlt = false;
    Matrix kinv_at;  // K^{-1} A_eqᵀ
    Eigen::LDLT<Matrix> sfac;
    bool augmented = false;
    Eigen::PartialPivLU<Matrix> aug;  // [[K, A_eqᵀ], [A_eq, -reg I]]

    Vector ksolve(const Vector& r) const { return use_ldlt ? Vector(kfac_ldlt.solve(r)) : Vector(kfac.solve(r)); }
};

bool factor(const Work& w, const Vector& weights, double reg, Kkt& kkt, bool augmented) {
    Matrix K = w.H;
    if (w.mi) {
        Matrix B = w.p.A_ineq;
        for (Index r = 0; r < w.mi; ++r) B.row(r) *= std::sqrt(weights(r));
        K.noalias() += B.transpose() * B;
    }
    for (Index t = 0; t < w.mb; ++t) K(w.bidx[t], w.bidx[t]) += weights(w.mi + t);
    K.diagonal().array() += reg;
    kkt.augmented = augmented;
    if (augmented) {
        Matrix big = Matrix::Zero(w.n + w.me, w.n + w.me);
        big.topLeftCorner(w.n, w.n) = K;
        if (w.me) {
            big.topRightCorner(w.n, w.me) = w.p.A_eq.transpose();
            big.bottomLeftCorner(w.me, w.n) = w.p.A_eq;
            big.bottomRightCorner(w.me, w.me).diagonal().setConstant(-reg);
        }
        kkt.aug.compute(big);
        return true;  // refinement and the finiteness checks catch a poor factor
    }
    kkt.kfac.compute(K);
    kkt.use_ldlt = kkt.kfac.info() != Eigen::Success;
    if (kkt.use_ldlt) {
        kkt.kfac_ldlt.compute(K);
        if (kkt.kfac_ldlt.info() != Eigen::Success) return false;
    }
    if (w.me) {
        Matrix at = w.p.A_eq.transpose();
        kkt.kinv_at.resize(w.n, w.me);
        for (Index c = 0; c < w.me; ++c) kkt.kinv_at.col(c) = kkt.ksolve(at.col(c));
        Matrix S = w.p.A_eq * kkt.kinv_at;
        S.diagonal().array() += reg;
        kkt.sfac.compute(S);
        if (kkt.sfac.info() != Eigen::Success) return false;
    }
    return true;
}

// Solves (H + GᵀWG) dx - A_eqᵀ dy = r1, A_eq dx = r2.
void kkt_solve(const Work& w, const Kkt& kkt, const Vector& r1, const Vector& r2, Vector& dx, Vector& dy) {
    if (kkt.augmented) {
        Vector rhs(w.n + w.me);
        rhs.head(w.n) = r1;
        if (w.me) rhs.tail(w.me) = r2;
        Vector sol = kkt.aug.solve(rhs);
        dx = sol.head(w.n);
        dy = w.me ? Vector(-sol.tail(w.me)) : Vector();
        return;
    }
    Vector k1 = kkt.ksolve(r1);
    if (w.me) {
        dy = kkt.sfac.solve(r2 - w.p.A_eq * k1);
        dx = k1 + kkt.kinv_at * dy;
    } else {
        dy.resize(0);
        dx = k1;
    }
}

double max_step(const Vector& v, const Vector& dv) {
    double a = std::numeric_limits<double>::infinity();
    for (Index t = 0; t < v.size(); ++t)
        if (dv(t) < 0.0) a = std::min(a, -v(t) / dv(t));
    return a;
}

void fill_solution(const Work& w, const Vector& x, const Vector& z, const Vector& y, QPSolution& sol) {
    const QPProblem& p = w.p;
    sol.x = x;
    sol.z_ineq = z.head(w.mi);
    sol.z_bound = Vector::Zero(w.n);
    for (Index t = 0; t < w.mb; ++t) sol.z_bound(w.bidx[t]) = z(w.mi + t);
    sol.y_eq = y;
    sol.objective = p.objective(x);
    Vector hx = p.H * x;
    double dual = -0.5 * x.dot(hx);
    if (w.mi) dual += p.b_ineq.dot(sol.z_ineq);
    if (w.me) dual += p.b_eq.dot(y);
    sol.dual_objective = dual;
    Vector rd = hx + p.c - w.gt_mul(z);
    if (w.me) rd -= p.A_eq.transpose() * y;
    sol.dual_residual = inf_norm(rd);
    sol.primal_residual = p.max_violation(x);
    Vector slack = w.g_mul(x) - w.h();
    double comp = 0.0;
    for (Index t = 0; t < slack.size(); ++t) comp = std::max(comp, std::abs(z(t) * slack(t)));
    sol.complementarity = comp;
    sol.kkt_residual = std::max({sol.dual_residual, sol.primal_residual, sol.complementarity});
}

// Exact KKT solve on the constraints that look active (s < z); kept only if every KKT condition holds.
bool polish(const Work& w, const Vector& s, const Vector& z, const QPSettings& st, double hnorm, double cnorm,
            QPSolution& out) {
    const QPProblem& p = w.p;
    std::vector<Index> act;
    for (Index t = 0; t < w.m(); ++t)
        if (s(t) < z(t)) act.push_back(t);
    const Index n = w.n, na = static_cast<Index>(act.size()), me = w.me, dim = n + na + me;
    Matrix K = Matrix::Zero(dim, dim);
    Vector rhs = Vector::Zero(dim);
    K.topLeftCorner(n, n) = p.H;
    rhs.head(n) = -p.c;
    for (Index a = 0; a < na; ++a) {
        const Index t = act[static_cast<size_t>(a)];
        Vector g = Vector::Zero(n);
        if (t < w.mi) {
            g = p.A_ineq.row(t).transpose();
            rhs(n + a) = p.b_ineq(t);
        } else {
            g(w.bidx[static_cast<size_t>(t - w.mi)]) = 1.0;
        }
        K.col(n + a).head(n) = -g;
        K.row(n + a).head(n) = g.transpose();
    }
    if (me) {
        K.block(0, n + na, n, me) = -p.A_eq.transpose();
        K.block(n + na, 0, me, n) = p.A_eq;
        rhs.tail(me) = p.b_eq;
    }
    Eigen::CompleteOrthogonalDecomposition<Matrix> cod(K);
    Vector v = cod.solve(rhs);
    if (!v.allFinite()) return false;
    Vector zf = Vector::Zero(w.m());
    for (Index a = 0; a < na; ++a) zf(act[static_cast<size_t>(a)]) = v(n + a);
    if (w.m() && zf.minCoeff() < -1e-12 * (1.0 + inf_norm(zf))) return false;
    zf = zf.cwiseMax(0.0);
    QPSolution cand;
    fill_solution(w, v.head(n), zf, me ? Vector(v.tail(me)) : Vector(), cand);
    if (cand.primal_residual > st.feas_tol * (1.0 + hnorm) || cand.dual_residual > st.feas_tol * (1.0 + cnorm))
        return false;
    cand.iterations = out.iterations;
    out = std::move(cand);
    return true;
}

QPSolution phase_one(const QPProblem& p, const QPSettings& settings);

bool farkas_ok(const Work& w, const Vector& z, const Vector& y, QPSolution& sol) {
    double tau = w.h().dot(z);
    if (w.me) tau += w.p.b_eq.dot(y);
    if (!(tau > 0.0)) return false;
    Vector zt = z / tau;
    Vector yt = w.me ? Vector(y / tau) : Vector();
    Vector res = w.gt_mul(zt);
    if (w.me) res += w.p.A_eq.transpose() * yt;
    const double scale = 1.0 + std::max(inf_norm(zt), inf_norm(yt));
    const double r = inf_norm(res);
    if (r > 1e-8 * scale || zt.minCoeff() < 0.0) return false;
    sol.farkas_ineq = zt.head(w.mi);
    sol.farkas_bound = Vector::Zero(w.n);
    for (Index t = 0; t < w.mb; ++t) sol.farkas_bound(w.bidx[t]) = zt(w.mi + t);
    sol.farkas_eq = yt;
    sol.farkas_residual = r;
    return true;
}

QPSolution run_ipm(const QPProblem& p, const QPSettings& st, bool allow_phase_one, bool augmented = false) {
    Work w(p);
    QPSolution sol;
    const Index m = w.m(), me = w.me;
    const Vector h = w.h();
    const double hnorm = std::max(inf_norm(h), me ? inf_norm(p.b_eq) : 0.0);
    const double cnorm = inf_norm(p.c);

    // starting point from a least-squares fit of the constraints
    Vector x, y, s, z;
    {
        Kkt k0;
        if (!factor(w, Vector::Ones(m), std::max(st.reg, 1e-8), k0, augmented)) {
            sol.status = QPStatus::numerical_failure;
            return sol;
        }
        Vector r1 = -p.c + w.gt_mul(h);
        Vector r2 = me ? Vector(p.b_eq) : Vector();
        kkt_solve(w, k0, r1, r2, x, y);
        s = w.g_mul(x) - h;
        const double smin = m ? s.minCoeff() : 1.0;
        if (smin < 1.0) s.array() += 1.0 - smin;
        z = Vector::Ones(m);
        if (!me) y.resize(0);
    }

    Kkt kkt;
    int stalls = 0;
    double best_merit = std::numeric_limits<double>::infinity();
    Vector bx = x, by = y, bz = z;
    for (int it = 0; it < st.max_iter; ++it) {
        sol.iterations = it;
        Vector hx = p.H * x;
        Vector rd = hx + p.c - w.gt_mul(z);
        if (me) rd -= p.A_eq.transpose() * y;
        Vector rp = w.g_mul(x) - s - h;
        Vector re = me ? Vector(p.A_eq * x - p.b_eq) : Vector();
        const double gap = m ? s.dot(z) : 0.0;
        const double mu = m ? gap / m : 0.0;
        const double pres = std::max(inf_norm(rp), inf_norm(re));
        const double dres = inf_norm(rd);
        const double pobj = 0.5 * x.dot(hx) + p.c.dot(x);

        const bool feas_ok = pres <= st.feas_tol * (1.0 + hnorm) && dres <= st.feas_tol * (1.0 + cnorm);
        if (feas_ok && (gap <= st.gap_abs || gap <= st.gap_rel * std::max(1.0, std::abs(pobj)))) {
            fill_solution(w, x, z, y, sol);
            sol.status = QPStatus::optimal;
            return sol;
        }
        const double merit = std::max({pres / (1.0 + hnorm), dres / (1.0 + cnorm), gap / std::max(1.0, std::abs(pobj))});
        if (merit < best_merit) {
            best_merit = merit;
            bx = x;
            by = y;
            bz = z;
        }

        // certificates of infeasibility / unboundedness
        if (m && (inf_norm(z) > 1e6 || (me && inf_norm(y) > 1e6)) && farkas_ok(w, z, y, sol)) {
            sol.status = QPStatus::infeasible;
            sol.x = x;
            sol.objective = std::numeric_limits<double>::infinity();
            return sol;
        }
        const double xn = inf_norm(x);
        if (xn > 1e8) {
            Vector d = x / xn;
            const bool ray = inf_norm(p.H * d) <= 1e-7 && (m == 0 || w.g_mul(d).minCoeff() >= -1e-7) &&
                             (me == 0 || inf_norm(p.A_eq * d) <= 1e-7) && p.c.dot(d) < -1e-7;
            if (ray) {
                sol.status = QPStatus::unbounded;
                sol.x = x;
                sol.objective = -std::numeric_limits<double>::infinity();
                return sol;
            }
        }

        Vector wts = m ? Vector(z.cwiseQuotient(s)) : Vector();
        if (!factor(w, wts, st.reg, kkt, augmented)) break;

        // predictor
        Vector rc = s.cwiseProduct(z);
        Vector dx, dy;
        auto direction = [&](const Vector& rcv, Vector& dxo, Vector& dyo, Vector& dso, Vector& dzo) {
            Vector tmp = rcv.cwiseQuotient(s) + wts.cwiseProduct(rp);
            Vector r1 = -rd - w.gt_mul(tmp);
            Vector r2 = me ? Vector(-re) : Vector();
            kkt_solve(w, kkt, r1, r2, dxo, dyo);
            dso = w.g_mul(dxo) + rp;
            dzo = -rcv.cwiseQuotient(s) - wts.cwiseProduct(dso);
            // refine against the unregularized Newton system
            for (int pass = 0; pass < 2; ++pass) {
                Vector rho1 = -rd - (p.H * dxo - w.gt_mul(dzo));
                if (me) rho1 += p.A_eq.transpose() * dyo;
                Vector rho2 = me ? Vector(-re - p.A_eq * dxo) : Vector();
                if (inf_norm(rho1) + inf_norm(rho2) <= 1e-15 * (1.0 + inf_norm(rd))) break;
                Vector ex, ey;
                kkt_solve(w, kkt, rho1, rho2, ex, ey);
                Vector gex = w.g_mul(ex);
                dxo += ex;
                if (me) dyo += ey;
                dso += gex;
                dzo -= wts.cwiseProduct(gex);
            }
        };
        Vector ds, dz;
        if (m == 0) {
            Vector r1 = -rd;
            Vector r2 = me ? Vector(-re) : Vector();
            kkt_solve(w, kkt, r1, r2, dx, dy);
            x += dx;
            if (me) y += dy;
            continue;
        }
        direction(rc, dx, dy, ds, dz);
        const double a_aff = std::min({1.0, max_step(s, ds), max_step(z, dz)});
        const double mu_aff = (s + a_aff * ds).dot(z + a_aff * dz) / m;
        const double sigma = std::pow(std::max(0.0, mu_aff / std::max(mu, 1e-300)), 3.0);

        // corrector
        Vector rc2 = rc + ds.cwiseProduct(dz) - Vector::Constant(m, sigma * mu);
        direction(rc2, dx, dy, ds, dz);
        double a = std::min({1.0, 0.99 * max_step(s, ds), 0.99 * max_step(z, dz)});
        // Mehrotra steps can cycle; fall back to a centered direction without the second-order term
        auto poorly_centered = [&](double step) {
            if (!std::isfinite(step)) return true;
            Vector sn = s + step * ds, zn = z + step * dz;
            const double mu_new = sn.dot(zn) / m;
            return mu_new > (1.0 - 0.01 * step) * mu || sn.cwiseProduct(zn).minCoeff() < 1e-3 * mu_new;
        };
        if (poorly_centered(a)) {
            Vector rc3 = rc - Vector::Constant(m, std::max(sigma, 0.3) * mu);
            direction(rc3, dx, dy, ds, dz);
            a = std::min({1.0, 0.99 * max_step(s, ds), 0.99 * max_step(z, dz)});
            if (std::isfinite(a)) {
                // keep iterates inside a wide neighbourhood of the central path
                for (int bt = 0; bt < 30; ++bt) {
                    Vector sn = s + a * ds, zn = z + a * dz;
                    if (sn.cwiseProduct(zn).minCoeff() >= 1e-4 * sn.dot(zn) / m) break;
                    a *= 0.7;
                }
            }
        }
        if (!std::isfinite(a) || a < 1e-12) {
            if (++stalls >= 3) break;
            a = std::max(a, 0.0);
        } else {
            stalls = 0;
        }
        x += a * dx;
        s += a * ds;
        z += a * dz;
        if (me) y += a * dy;
        s = s.cwiseMax(1e-300);
        z = z.cwiseMax(1e-300);
        if (!x.allFinite() || !z.allFinite()) break;
    }

    // no clean convergence: polish on the apparent active set, else accept the best iterate at relaxed accuracy
    if (polish(w, s, z, st, hnorm, cnorm, sol)) {
        sol.status = QPStatus::optimal;
        return sol;
    }
    fill_solution(w, bx, bz, by, sol);
    const bool relaxed_ok = sol.primal_residual <= st.relaxed_tol && sol.dual_residual <= st.relaxed_tol &&
                            sol.complementarity <= st.relaxed_tol &&
                            std::abs(sol.objective - sol.dual_objective) <= st.relaxed_tol * (1.0 + std::abs(sol.objective));
    if (relaxed_ok) {
        sol.status = QPStatus::optimal;
        return sol;
    }
    if (allow_phase_one && m + me > 0) {
        QPSolution ph = phase_one(p, st);
        if (ph.status == QPStatus::infeasible) return ph;
    }
    sol.status = sol.iterations + 1 >= st.max_iter ? QPStatus::max_iterations : QPStatus::numerical_failure;
    return sol;
}

// min t s.t. A_ineq x + t >= b, |A_eq x - b_eq| <= t, x_N + t >= 0, t >= 0.
QPSolution phase_one(const QPProblem& p, const QPSettings& st) {
    const Index n = p.n(), mi = p.n_ineq(), me = p.n_eq();
    Index nb = 0;
    for (Index q = 0; q < n; ++q)
        if (p.is_nonneg(q)) ++nb;
    QPProblem f = make_qp(Matrix::Zero(n + 1, n + 1), Vector::Zero(n + 1));
    f.c(n) = 1.0;
    const Index rows = mi + 2 * me + nb;
    f.A_ineq = Matrix::Zero(rows, n + 1);
    f.b_ineq = Vector::Zero(rows);
    Index r = 0;
    for (Index t = 0; t < mi; ++t, ++r) {
        f.A_ineq.row(r).head(n) = p.A_ineq.row(t);
        f.A_ineq(r, n) = 1.0;
        f.b_ineq(r) = p.b_ineq(t);
    }
    for (Index t = 0; t < me; ++t) {
        f.A_ineq.row(r).head(n) = p.A_eq.row(t);
        f.A_ineq(r, n) = 1.0;
        f.b_ineq(r++) = p.b_eq(t);
        f.A_ineq.row(r).head(n) = -p.A_eq.row(t);
        f.A_ineq(r, n) = 1.0;
        f.b_ineq(r++) = -p.b_eq(t);
    }
    for (Index q = 0; q < n; ++q)
        if (p.is_nonneg(q)) {
            f.A_ineq(r, q) = 1.0;
            f.A_ineq(r, n) = 1.0;
            ++r;
        }
    f.nonneg.assign(static_cast<size_t>(n + 1), false);
    f.nonneg.back() = true;
    QPSettings s2 = st;
    s2.reg = std::max(st.reg, 1e-9);
    QPSolution ph = run_ipm(f, s2, false);
    QPSolution out;
    out.status = QPStatus::numerical_failure;
    if (ph.status != QPStatus::optimal) return out;
    const double t = ph.x(n);
    const double scale = 1.0 + std::max(p.n_ineq() ? inf_norm(p.b_ineq) : 0.0, me ? inf_norm(p.b_eq) : 0.0);
    if (t <= 1e-8 * scale) return out;
    // translate phase-one multipliers into a Farkas ray of the original system
    const Vector& z = ph.z_ineq;
    out.farkas_ineq = z.head(mi);
    out.farkas_eq = Vector::Zero(me);
    for (Index e = 0; e < me; ++e) out.farkas_eq(e) = z(mi + 2 * e) - z(mi + 2 * e + 1);
    out.farkas_bound = Vector::Zero(n);
    Index b = mi + 2 * me;
    for (Index q = 0; q < n; ++q)
        if (p.is_nonneg(q)) out.farkas_bound(q) = z(b++);
    double tau = (mi ? p.b_ineq.dot(out.farkas_ineq) : 0.0) + (me ? p.b_eq.dot(out.farkas_eq) : 0.0);
    if (tau > 0.0) {
        out.farkas_ineq /= tau;
        out.farkas_eq /= tau;
        out.farkas_bound /= tau;
        Vector res = out.farkas_bound;
        if (mi) res += p.A_ineq.transpose() * out.farkas_ineq;
        if (me) res += p.A_eq.transpose() * out.farkas_eq;
        out.farkas_residual = inf_norm(res);
    }
    out.status = QPStatus::infeasible;
    out.x = ph.x.head(n);
    out.objective = std::numeric_limits<double>::infinity();
    return out;
}

// Retry with the augmented factorization when the Schur-complement path stalls.
QPSolution run_with_fallback(const QPProblem& p, const QPSettings& st) {
    QPSolution sol = run_ipm(p, st, true);
    if (sol.status != QPStatus::numerical_failure && sol.status != QPStatus::max_iterations) return sol;
    QPSolution alt = run_ipm(p, st, true, true);
    return alt.status == QPStatus::numerical_failure || alt.status == QPStatus::max_iterations ? sol : alt;
}

}  // namespace

QPSolution solve_qp(const QPProblem& p, const QPSettings& settings) {
    p.validate();
    if (settings.check_psd) {
        Eigen::SelfAdjointEigenSolver<Matrix> eig(p.H);
        const double lo = eig.eigenvalues().minCoeff();
        if (lo < -1e-10) throw config_error("qp: H is indefinite (smallest eigenvalue " + std::to_string(lo) + ")");
        if (lo < 0.0) {
            QPProblem q = p;
            Vector lam = eig.eigenvalues().cwiseMax(0.0);
            q.H = eig.eigenvectors() * lam.asDiagonal() * eig.eigenvectors().transpose();
            q.H = 0.5 * (q.H + q.H.transpose()).eval();
            QPSolution sol = run_with_fallback(q, settings);
            if (sol.status == QPStatus::optimal) {
                sol.objective = p.objective(sol.x);
            }
            return sol;
        }
    }
    return run_with_fallback(p, settings);
}

QPProblem dorn_dual(const QPProblem& p) {
    p.validate();
    const Index n = p.n(), mi = p.n_ineq(), me = p.n_eq();
    const Index nw = n + mi + me;
    Matrix H = Matrix::Zero(nw, nw);
    H.topLeftCorner(n, n) = p.H;
    Vector c = Vector::Zero(nw);
    if (mi) c.segment(n, mi) = -p.b_ineq;
    if (me) c.segment(n + mi, me) = -p.b_eq;
    QPProblem d = make_qp(std::move(H), std::move(c));

    // row p of [H, -A_ineqᵀ, -A_eqᵀ] w  (>= or =) -c_p
    Index n_nonneg = 0;
    for (Index q = 0; q < n; ++q)
        if (p.is_nonneg(q)) ++n_nonneg;
    d.A_ineq = Matrix::Zero(n_nonneg, nw);
    d.b_ineq = Vector::Zero(n_nonneg);
    d.A_eq = Matrix::Zero(n - n_nonneg, nw);
    d.b_eq = Vector::Zero(n - n_nonneg);
    Index ri = 0, re = 0;
    for (Index q = 0; q < n; ++q) {
        Eigen::RowVectorXd row(nw);
        row.head(n) = p.H.row(q);
        if (mi) row.segment(n, mi) = -p.A_ineq.col(q).transpose();
        if (me) row.segment(n + mi, me) = -p.A_eq.col(q).transpose();
        if (p.is_nonneg(q)) {
            d.A_ineq.row(ri) = row;
            d.b_ineq(ri++) = -p.c(q);
        } else {
            d.A_eq.row(re) = row;
            d.b_eq(re++) = -p.c(q);
        }
    }
    d.nonneg.assign(static_cast<size_t>(nw), false);
    for (Index t = 0; t < mi; ++t) d.nonneg[static_cast<size_t>(n + t)] = true;
    return d;
}

double dorn_dual_value(const QPProblem& primal, const Vector& w) {
    const Index n = primal.n(), mi = primal.n_ineq(), me = primal.n_eq();
    if (w.size() != n + mi + me) throw config_error("dorn_dual_value: wrong point length");
    Vector x = w.head(n);
    double v = -0.5 * x.dot(primal.H * x);
    if (mi) v += primal.b_ineq.dot(w.segment(n, mi));
    if (me) v += primal.b_eq.dot(w.segment(n + mi, me));
    return v;
}

}  // namespace calibrax
