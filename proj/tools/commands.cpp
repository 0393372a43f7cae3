#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "calibrax/calibration.hpp"
#include "calibrax/error.hpp"
#include "calibrax/io.hpp"
#include "calibrax/losses.hpp"
#include "calibrax/rankanalysis.hpp"
#include "calibrax/subspaces.hpp"

namespace calibrax::cli {

namespace {

struct Common {
    std::string loss, scores, eps, pairs = "all", out, labels = "exhaustive", v_mode = "optimal";
    int workers = 1;
    std::uint64_t seed = 0;
};

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

int parse_int(const std::string& s, const char* what) {
    double v;
    if (!parse_real(s, v) || v != std::floor(v) || std::abs(v) > 1e9)
        throw config_error(std::string(what) + ": expected an integer, got '" + s + "'");
    return static_cast<int>(v);
}

LossMatrix build_loss(const std::string& spec) {
    if (spec.empty()) throw config_error("--loss is required");
    if (spec.rfind("map:", 0) == 0) return map_loss_matrix(parse_int(spec.substr(4), "--loss map:r"));
    if (ends_with(spec, ".json")) return tree_loss_matrix(load_tree_spec(spec));
    return load_loss_matrix(spec);
}

ScoreSubspace build_scores(const std::string& spec, const LossMatrix& L) {
    if (spec.empty()) throw config_error("--scores is required");
    if (spec.rfind("tree:", 0) == 0) {
        if (!L.tree) throw config_error("--scores tree:t needs a tree loss");
        return tree_block_basis(*L.tree, parse_int(spec.substr(5), "--scores tree:t"));
    }
    if (spec == "map_full" || spec == "map_sort") {
        if (L.kind != LossKind::map) throw config_error("--scores " + spec + " needs --loss map:r");
        return spec == "map_full" ? f_map(L.r) : f_sort(L.r);
    }
    if (spec == "identity") return identity_subspace(L.k());
    return load_subspace(spec);
}

// "sampled:N" picks up the --seed value.
std::string with_seed(const std::string& spec, std::uint64_t seed) {
    auto parts = split(spec, ':');
    if (parts.size() == 2 && parts[0] == "sampled") return spec + ":" + std::to_string(seed);
    return spec;
}

int resolve_workers(int value) {
    if (const char* env = std::getenv("CALIBRAX_WORKERS")) {
        double w;
        if (!parse_real(env, w) || w < 1 || w != std::floor(w) || w > 4096)
            throw config_error("CALIBRAX_WORKERS must be a positive integer");
        return static_cast<int>(w);
    }
    if (value < 1) throw config_error("--workers must be >= 1");
    return value;
}

std::vector<double> grid_for(const Common& c, const LossMatrix& L) {
    if (!c.eps.empty()) return parse_eps_grid(c.eps);
    if (!(L.l_max > 0.0)) throw config_error("loss matrix is identically zero; pass --eps explicitly");
    return uniform_grid(0.0, L.l_max, 101);
}

void emit(const std::string& path, const std::string& text, std::ostream& out) {
    if (path.empty() || path == "-")
        out << text;
    else
        write_text_file(path, text);
}

std::string describe_setting(const Common& c) { return "loss=" + c.loss + " scores=" + c.scores; }

void warn_tree(const ScoreSubspace& s, const LossMatrix& L, std::ostream& err) {
    if (L.tree && s.kind == SubspaceKind::tree_block && tree_average_below_half(*L.tree, s.param))
        err << "warning: mean within-block distance is below half the block diameter at depth " << s.param
            << "; the closed-form tree bound may be loose\n";
}

std::vector<int> parse_r_values(const std::string& spec) {
    std::vector<int> out;
    auto parts = split(spec, ':');
    if (parts.size() == 4 && parts[0] == "log") {
        const double a = parse_int(parts[1], "--r-values"), b = parse_int(parts[2], "--r-values");
        const int n = parse_int(parts[3], "--r-values");
        if (a < 3 || b < a || n < 1) throw config_error("--r-values log:a:b:n needs 3 <= a <= b, n >= 1");
        for (int t = 0; t < n; ++t) {
            const double x = n == 1 ? a : std::exp(std::log(a) + (std::log(b) - std::log(a)) * t / (n - 1));
            const int r = static_cast<int>(std::lround(x));
            if (out.empty() || out.back() != r) out.push_back(r);
        }
        return out;
    }
    for (auto& tok : split(spec, ',')) out.push_back(parse_int(trim(tok), "--r-values"));
    return out;
}

std::string map_table_csv(int r) {
    MapClosedForms mf = map_closed_forms(r);
    std::ostringstream os;
    os << "# meta: r=" << r << " A=" << format_real(mf.A()) << " B=" << format_real(mf.B()) << " C="
       << format_real(mf.C()) << " kappa=" << format_real(kappa_f_sort_closed(r)) << "\n";
    os << "h,alpha,beta,gamma,alpha_reduced,beta_reduced\n";
    for (int h = 1; h <= r; ++h)
        os << h << "," << format_real(mf.alpha(h)) << "," << format_real(mf.beta(h)) << "," << format_real(mf.gamma(h))
           << "," << format_real(mf.alpha_red(h)) << "," << format_real(mf.beta_red(h)) << "\n";
    return os.str();
}

void add_setting(CLI::App* sub, Common& c, bool need_scores = true) {
    sub->add_option("--loss", c.loss, "tree spec (.json), map:r, or loss CSV")->required();
    auto* s = sub->add_option("--scores", c.scores, "tree:t, map_full, map_sort, identity, or basis CSV");
    if (need_scores) s->required();
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Calibration functions and consistency levels of quadratic surrogates", "calibrax"};
    app.require_subcommand(1);
    Common c;

    auto* cal = app.add_subcommand("calibration", "exact calibration curve from pair QPs");
    add_setting(cal, c);
    cal->add_option("--eps", c.eps, "grid a:b:n (default 0:L_max:101)");
    cal->add_option("--pairs", c.pairs, "all, orbit, or sampled:N[:SEED]");
    cal->add_option("--out", c.out, "output CSV (default stdout)");
    cal->add_option("--workers", c.workers, "worker threads");
    cal->add_option("--seed", c.seed, "seed for sampled policies");

    auto* bnd = app.add_subcommand("bound", "lower bound on the calibration function");
    add_setting(bnd, c);
    bnd->add_option("--eps", c.eps, "grid a:b:n (default 0:L_max:101)");
    bnd->add_option("--pairs", c.pairs, "all, orbit, or sampled:N[:SEED]");
    bnd->add_option("--v-mode", c.v_mode, "optimal or fixed_one")->check(CLI::IsMember({"optimal", "fixed_one"}));
    bool tree_closed = false;
    bnd->add_flag("--tree-closed", tree_closed, "closed-form tree bound (tree loss with tree:t scores)");
    bnd->add_option("--out", c.out, "output CSV (default stdout)");
    bnd->add_option("--workers", c.workers, "worker threads");
    bnd->add_option("--seed", c.seed, "seed for sampled policies");

    auto* tb = app.add_subcommand("tree-bound", "closed-form tree bound from a tree spec");
    std::string tree_path;
    int depth_t = 0;
    tb->add_option("--tree", tree_path, "tree spec JSON")->required();
    tb->add_option("--t", depth_t, "consistency depth")->required();
    tb->add_option("--eps", c.eps, "grid a:b:n (default 0:1:101)");
    tb->add_option("--out", c.out, "output CSV (default stdout)");

    auto* con = app.add_subcommand("consistency", "bracket the consistency level");
    add_setting(con, c);
    con->add_option("--labels", c.labels, "exhaustive or sampled:N[:SEED]");
    con->add_option("--pairs", c.pairs, "all or orbit");
    bool no_refine = false;
    con->add_flag("--no-refine", no_refine, "point masses only, skip the LP search");
    con->add_option("--out", c.out, "output JSON (default stdout)");
    con->add_option("--workers", c.workers, "worker threads");
    con->add_option("--seed", c.seed, "seed for sampled policies");

    auto* ma = app.add_subcommand("map-analysis", "closed forms for the mAP loss with sorting scores");
    int r_single = 5;
    std::string r_values = "log:10:10000:13", table_out;
    ma->add_option("--r", r_single, "ranking size for the alpha/beta/gamma table");
    ma->add_option("--r-values", r_values, "comma list or log:a:b:n for the asymptotic table");
    ma->add_option("--out", c.out, "asymptotic CSV (default stdout)");
    ma->add_option("--table-out", table_out, "alpha/beta/gamma CSV (default stdout)");

    auto* sc = app.add_subcommand("sample-complexity", "steps needed to reach accuracy epsilon");
    std::string curve_path;
    double eps_target = 0.0;
    std::optional<double> dm, l_max, kappa, dim, R, Q;
    sc->add_option("--curve", curve_path, "calibration curve CSV (its convex minorant is used)");
    sc->add_option("--loss", c.loss, "compute the exact curve for this loss instead of --curve");
    sc->add_option("--scores", c.scores, "score subspace for --loss");
    sc->add_option("--pairs", c.pairs, "pair policy when computing the curve");
    sc->add_option("--grid", c.eps, "grid a:b:n when computing the curve");
    sc->add_option("--eps", eps_target, "target accuracy")->required();
    sc->add_option("--dm", dm, "product DM, overrides the breakdown");
    sc->add_option("--l-max", l_max, "maximal loss value");
    sc->add_option("--kappa", kappa, "condition number of F");
    sc->add_option("--dim", dim, "score dimension d");
    sc->add_option("--R", R, "bound on feature norms");
    sc->add_option("--Q", Q, "bound on the optimal weights");
    sc->add_option("--out", c.out, "output JSON (default stdout)");
    sc->add_option("--workers", c.workers, "worker threads");

    try {
        std::vector<std::string> rev(args.rbegin(), args.rend());
        app.parse(rev);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kExitConfig;
    }

    try {
        if (cal->parsed()) {
            const int workers = resolve_workers(c.workers);
            LossMatrix L = build_loss(c.loss);
            ScoreSubspace S = build_scores(c.scores, L);
            CurveOptions opt;
            opt.pairs = PairPolicy::parse(with_seed(c.pairs, c.seed));
            opt.workers = workers;
            auto curve = calibration_curve(S, L, grid_for(c, L), opt);
            emit(c.out, curve_csv(curve, describe_setting(c) + " pairs=" + opt.pairs.describe()), out);
        } else if (bnd->parsed()) {
            const int workers = resolve_workers(c.workers);
            LossMatrix L = build_loss(c.loss);
            ScoreSubspace S = build_scores(c.scores, L);
            warn_tree(S, L, err);
            const auto grid = grid_for(c, L);
            if (tree_closed) {
                if (!L.tree || S.kind != SubspaceKind::tree_block)
                    throw config_error("--tree-closed needs a tree loss with --scores tree:t");
                auto curve = tree_closed_curve(*L.tree, S.param, grid);
                emit(c.out, curve_csv(curve, describe_setting(c)), out);
            } else {
                const VMode mode = c.v_mode == "optimal" ? VMode::optimal : VMode::fixed_one;
                const PairPolicy pol = PairPolicy::parse(with_seed(c.pairs, c.seed));
                auto curve = bound_curve(S, L, grid, mode, pol, workers);
                emit(c.out,
                     curve_csv(curve, describe_setting(c) + " pairs=" + pol.describe() + " v_mode=" + v_mode_name(mode)),
                     out);
            }
        } else if (tb->parsed()) {
            TreeSpec spec = load_tree_spec(tree_path);
            if (tree_average_below_half(spec, depth_t))
                err << "warning: mean within-block distance is below half the block diameter at depth " << depth_t
                    << "\n";
            const auto grid = c.eps.empty() ? uniform_grid(0.0, 1.0, 101) : parse_eps_grid(c.eps);
            emit(c.out, curve_csv(tree_closed_curve(spec, depth_t, grid), "tree=" + tree_path + " t=" +
                                                                              std::to_string(depth_t)),
                 out);
        } else if (con->parsed()) {
            const int workers = resolve_workers(c.workers);
            LossMatrix L = build_loss(c.loss);
            ScoreSubspace S = build_scores(c.scores, L);
            ConsistencyOptions opt;
            opt.labels = LabelPolicy::parse(with_seed(c.labels, c.seed));
            opt.pairs = PairPolicy::parse(c.pairs);
            opt.refine = !no_refine;
            opt.workers = workers;
            emit(c.out, consistency_report(S, L, opt).to_json(), out);
        } else if (ma->parsed()) {
            const auto rows = asymptotic_report(parse_r_values(r_values));
            const std::string table = map_table_csv(r_single);
            if (table_out.empty() && (c.out.empty() || c.out == "-")) {
                out << asymptotic_csv(rows) << "\n" << table;
            } else {
                emit(c.out, asymptotic_csv(rows), out);
                emit(table_out, table, out);
            }
        } else if (sc->parsed()) {
            const int workers = resolve_workers(c.workers);
            CalibrationCurve curve;
            std::optional<LossMatrix> L;
            std::optional<ScoreSubspace> S;
            if (!curve_path.empty()) {
                curve = parse_curve_csv(read_text_file(curve_path));
            } else if (!c.loss.empty()) {
                L = build_loss(c.loss);
                S = build_scores(c.scores, *L);
                CurveOptions opt;
                opt.pairs = PairPolicy::parse(with_seed(c.pairs, c.seed));
                opt.workers = workers;
                curve = calibration_curve(*S, *L, grid_for(c, *L), opt);
            } else {
                throw config_error("sample-complexity needs --curve or --loss/--scores");
            }
            const CalibrationCurve minor = convex_minorant(curve);
            SampleComplexity res;
            if (dm) {
                res = sample_complexity_dm(minor, eps_target, *dm);
            } else {
                if (!R || !Q) throw config_error("--R and --Q are required unless --dm is given");
                double lm = l_max ? *l_max : (L ? L->l_max : 0.0);
                double kp = kappa ? *kappa : (S ? condition_number(*S) : 0.0);
                double d = dim ? *dim : (S ? static_cast<double>(S->d()) : 0.0);
                if (!(lm > 0) || !(kp > 0) || !(d > 0))
                    throw config_error("--l-max, --kappa and --dim are required when no loss is given");
                res = sample_complexity(minor, eps_target, lm, kp, d, *R, *Q);
            }
            emit(c.out, res.to_json(), out);
        }
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        switch (e.kind()) {
            case ErrorKind::solver: return kExitSolver;
            case ErrorKind::below_level: return kExitBelowLevel;
            default: return kExitConfig;
        }
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitConfig;
    }
    return kExitOk;
}

}  // namespace calibrax::cli
