#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "calibrax/losses.hpp"
#include "calibrax/qpsolve.hpp"
#include "calibrax/subspaces.hpp"

namespace calibrax {

enum class CurveKind { exact_qp, bound_vopt, bound_v1, tree_closed, minorant };
std::string curve_kind_name(CurveKind k);

struct CurvePoint {
    double epsilon = 0.0;
    double value = 0.0;  // +inf allowed
};

struct CalibrationCurve {
    std::vector<CurvePoint> points;
    CurveKind meta = CurveKind::exact_qp;

    void validate() const;
};

// "a:b:n" -> n uniform points from a to b inclusive.
std::vector<double> parse_eps_grid(const std::string& spec);
std::vector<double> uniform_grid(double a, double b, int n);

// CSV with a leading "# meta" comment, header epsilon,value and "inf" for +inf.
std::string curve_csv(const CalibrationCurve& c, const std::string& extra_meta = "");
CalibrationCurve parse_curve_csv(const std::string& text);

enum class VMode { optimal, fixed_one };
std::string v_mode_name(VMode v);

struct PairPolicy {
    enum class Mode { all, orbit, sampled } mode = Mode::all;
    std::size_t count = 0;
    std::uint64_t seed = 0;

    static PairPolicy parse(const std::string& spec);
    std::string describe() const;
};

struct LabelPolicy {
    bool exhaustive = true;
    std::size_t count = 0;
    std::uint64_t seed = 0;

    static LabelPolicy parse(const std::string& spec);
};

// First index attaining the maximum; entries within tol of the maximum count as ties.
Index first_argmax(const Vector& f, double tol = 0.0);

double excess_surrogate(const ScoreSubspace& s, const LossMatrix& L, const Vector& theta, const Vector& q);
double excess_task(const LossMatrix& L, const Vector& f, const Vector& q);
// Minimizer θ* = -(FᵀF)⁺FᵀLq of the excess surrogate.
Vector optimal_theta(const ScoreSubspace& s, const LossMatrix& L, const Vector& q);

// ξ_ij(v) = max_y |slope_y v - intercept_y| with its upper envelope on v >= 0.
struct PairBoundTerm {
    Index i = 0, j = 0;
    double w = 0.0;  // 2k ‖P Δ_ij‖²
    std::vector<std::pair<double, double>> xi_lines;  // (slope, intercept)

    // envelope data, filled by finalize()
    std::vector<double> knots;      // 0 followed by breakpoints > 0
    std::vector<double> knot_xi;    // ξ at each knot
    double max_slope = 0.0;         // max_y |slope_y|
    double inv_threshold = 0.0;     // inf_{v>0} ξ(v)/v

    void finalize();
    double xi(double v) const;
    // sup_{v>=0} (εv - ξ(v)), +inf when unbounded; v_at receives a maximizer.
    double best_gain(double eps, double* v_at = nullptr) const;
    // Per-pair lower-bound term G²/w with the 0/0 -> 0 and x/0 -> inf conventions.
    double value(double eps, VMode mode) const;
};

// Shared precomputation for one (subspace, loss) setting.
class CalibrationContext {
public:
    CalibrationContext(const ScoreSubspace& s, const LossMatrix& L);

    const ScoreSubspace& subspace() const { return s_; }
    const LossMatrix& loss() const { return l_; }
    Index k() const { return l_.k(); }
    Index m() const { return l_.m(); }
    Index rho() const { return u_.cols(); }
    const Matrix& orth() const { return u_; }
    const Matrix& coords() const { return mcoef_; }  // M = UᵀL
    const Matrix& projected_loss() const { return pl_; }  // P L
    bool symmetric() const { return symmetric_; }

    PairBoundTerm bound_term(Index i, Index j) const;
    double eps_max(Index i, Index j) const;

    // Rows R with  R φ >= 0  <=>  output j is an argmax of Uφ.
    Matrix cone_rows(Index j) const;

    // Pair QP in orthonormal score coordinates; objective equals k * excess surrogate.
    QPProblem pair_qp(Index i, Index j, double eps, bool relaxed, const Matrix& cone) const;

    struct PairSolve {
        double value = 0.0;  // δ units, +inf when infeasible
        QPStatus status = QPStatus::optimal;
        int iterations = 0;
        Vector q;
    };
    PairSolve solve_pair(Index i, Index j, double eps, bool relaxed) const;

    std::vector<std::pair<Index, Index>> select_pairs(const PairPolicy& policy) const;

private:
    std::shared_ptr<const Matrix> cached_cone(Index j) const;

    const ScoreSubspace& s_;
    const LossMatrix& l_;
    Matrix u_, mcoef_, pl_;
    bool symmetric_ = false;
    mutable std::mutex cache_mu_;
    mutable std::vector<std::shared_ptr<const Matrix>> cones_;
};

// Snapping threshold for QP objectives (k-scaled) treated as zero.
inline constexpr double kZeroObjective = 1e-11;

double pair_calibration(const ScoreSubspace& s, const LossMatrix& L, Index i, Index j, double eps);

struct CurveOptions {
    PairPolicy pairs;
    int workers = 1;
    int batch = 16;
};

struct CurveStats {
    std::uint64_t qp_solves = 0;
    std::uint64_t pairs = 0;
};

CalibrationCurve calibration_curve(const ScoreSubspace& s, const LossMatrix& L, const std::vector<double>& grid,
                                   const CurveOptions& opt = {}, CurveStats* stats = nullptr);

double xi_ij(const ScoreSubspace& s, const LossMatrix& L, Index i, Index j, double v);

double theorem1_bound(const ScoreSubspace& s, const LossMatrix& L, double eps, VMode mode,
                      const PairPolicy& pairs = {});
CalibrationCurve bound_curve(const ScoreSubspace& s, const LossMatrix& L, const std::vector<double>& grid,
                             VMode mode, const PairPolicy& pairs = {}, int workers = 1);

double tree_bound_closed(const TreeSpec& spec, int t, double eps);
// Single-level value that only looks at the nearest cross-block distance.
double tree_bound_nearest_level(const TreeSpec& spec, int t, double eps);
bool tree_average_below_half(const TreeSpec& spec, int t);
CalibrationCurve tree_closed_curve(const TreeSpec& spec, int t, const std::vector<double>& grid);

struct Witness {
    std::string label, predicted, optimal;
    std::vector<std::pair<std::string, double>> distribution;
    std::string source;
};

struct ConsistencyReport {
    double eta_lower = 0.0;
    double eta_upper = 0.0;
    Witness witness;
    std::string pairs;

    std::string to_json() const;
};

struct ConsistencyOptions {
    LabelPolicy labels;
    PairPolicy pairs;  // all or orbit; orbit is used automatically for symmetric settings
    bool refine = true;
    int workers = 1;
};

ConsistencyReport consistency_report(const ScoreSubspace& s, const LossMatrix& L, const ConsistencyOptions& opt = {});

CalibrationCurve convex_minorant(const CalibrationCurve& curve);
// Piecewise-linear evaluation between grid points.
double curve_value_at(const CalibrationCurve& curve, double eps);

struct SampleComplexity {
    double epsilon = 0.0;
    double delta = 0.0;
    double xi_arg = 0.0;  // κ√d R Q
    double dm = 0.0;
    double n_real = 0.0;
    std::uint64_t n_steps = 0;

    std::string to_json() const;
};

double dm_constant(double l_max, double kappa, double d, double R, double Q);
SampleComplexity sample_complexity(const CalibrationCurve& minorant, double eps, double l_max, double kappa, double d,
                                   double R, double Q);
SampleComplexity sample_complexity_dm(const CalibrationCurve& minorant, double eps, double dm);

struct DornReport {
    std::string status;  // "ok", "excluded pair", "failed"
    bool feasible = false;
    double max_violation = 0.0;
    double certificate = 0.0;  // δ units
    double bound = 0.0;        // δ units
    double qp_value = 0.0;     // δ units
    bool sandwiched = false;
};

DornReport dorn_certificate_check(const ScoreSubspace& s, const LossMatrix& L, Index i, Index j, double eps, double v);

}  // namespace calibrax
