#include "calibrax/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "calibrax/error.hpp"
#include "calibrax/io.hpp"

namespace calibrax {

Index TreeSpec::leaves() const {
    Index k = 1;
    for (int n : children) k *= n;
    return k;
}

Index TreeSpec::block_size(int t) const {
    Index z = 1;
    for (int s = t; s < depth(); ++s) z *= children[s];
    return z;
}

Index TreeSpec::block_count(int t) const {
    Index b = 1;
    for (int s = 0; s < t; ++s) b *= children[s];
    return b;
}

double TreeSpec::tail_weight(int t) const {
    double d = 0.0;
    for (int s = t; s < depth(); ++s) d += weights[s];
    return d;
}

double TreeSpec::mean_block_distance(int t) const {
    double a = 0.0;
    double prod = 1.0;
    for (int s = t; s < depth(); ++s) {
        prod *= children[s];
        a += weights[s] * (prod - 1.0) / prod;
    }
    return a;
}

void TreeSpec::validate() const {
    if (children.empty()) throw config_error("tree spec: depth must be at least 1");
    if (children.size() != weights.size())
        throw config_error("tree spec: children and weights must have equal length");
    for (int n : children)
        if (n < 2) throw config_error("tree spec: every level needs at least 2 children");
    double total = 0.0;
    for (double a : weights) {
        if (!std::isfinite(a) || a < 0.0) throw config_error("tree spec: weights must be >= 0");
        total += a;
    }
    if (std::abs(total - 1.0) > 1e-12)
        throw config_error("tree spec: weights must sum to 1 (got " + format_real(total) + ")");
    double k = 1.0;
    for (int n : children) k *= n;
    if (k > 1e7) throw config_error("tree spec: too many leaves");
}

TreeSpec parse_tree_spec(const std::string& json_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const std::exception& e) {
        throw config_error(std::string("tree spec: invalid JSON: ") + e.what());
    }
    if (!j.is_object() || !j.contains("children") || !j.contains("weights"))
        throw config_error("tree spec: expected {\"children\": [...], \"weights\": [...]}");
    TreeSpec spec;
    try {
        spec.children = j.at("children").get<std::vector<int>>();
        spec.weights = j.at("weights").get<std::vector<double>>();
    } catch (const std::exception& e) {
        throw config_error(std::string("tree spec: ") + e.what());
    }
    spec.validate();
    return spec;
}

TreeSpec load_tree_spec(const std::string& path) { return parse_tree_spec(read_text_file(path)); }

std::string tree_spec_json(const TreeSpec& spec) {
    nlohmann::json j;
    j["children"] = spec.children;
    j["weights"] = spec.weights;
    return j.dump();
}

double tree_distance(const TreeSpec& spec, Index i, Index j) {
    const Index k = spec.leaves();
    if (i < 1 || i > k || j < 1 || j > k)
        throw config_error("tree_distance: leaf index out of range 1.." + std::to_string(k));
    Index a = i - 1, b = j - 1;
    if (a == b) return 0.0;
    // first level where the mixed-radix digits differ
    int lca = 0;
    for (int s = 0; s < spec.depth(); ++s) {
        Index z = spec.block_size(s + 1);
        if ((a / z) != (b / z)) {
            lca = s;
            break;
        }
    }
    return spec.tail_weight(lca);
}

LossMatrix make_loss_matrix(Matrix L) {
    require_finite(L, "loss matrix");
    LossMatrix out;
    out.l_max = L.maxCoeff();
    if (L.minCoeff() < 0.0) throw config_error("loss matrix: negative entry");
    for (Index r = 0; r < L.rows(); ++r) out.output_labels.push_back(std::to_string(r + 1));
    for (Index c = 0; c < L.cols(); ++c) out.gt_labels.push_back(std::to_string(c + 1));
    out.L = std::move(L);
    return out;
}

LossMatrix tree_loss_matrix(const TreeSpec& spec) {
    spec.validate();
    const Index k = spec.leaves();
    Matrix L(k, k);
    for (Index i = 0; i < k; ++i)
        for (Index j = 0; j < k; ++j) L(i, j) = tree_distance(spec, i + 1, j + 1);
    LossMatrix out = make_loss_matrix(std::move(L));
    out.kind = LossKind::tree;
    out.tree = spec;
    return out;
}

Permutation identity_permutation(int r) {
    Permutation s;
    s.positions.resize(r);
    std::iota(s.positions.begin(), s.positions.end(), 1);
    return s;
}

bool is_permutation(const Permutation& s) {
    std::vector<char> seen(s.positions.size() + 1, 0);
    for (int p : s.positions) {
        if (p < 1 || p > s.size() || seen[p]) return false;
        seen[p] = 1;
    }
    return true;
}

std::vector<Permutation> enumerate_permutations(int r) {
    std::vector<Permutation> out;
    Permutation s = identity_permutation(r);
    do {
        out.push_back(s);
    } while (std::next_permutation(s.positions.begin(), s.positions.end()));
    return out;
}

std::string permutation_label(const Permutation& s) {
    std::string out;
    for (int i = 0; i < s.size(); ++i) out += (i ? "-" : "") + std::to_string(s.positions[i]);
    return out;
}

std::string labeling_label(std::uint32_t y, int r) {
    std::string out;
    for (int p = 0; p < r; ++p) out.push_back((y >> p) & 1u ? '1' : '0');
    return out;
}

namespace {

std::uint32_t to_mask(const std::vector<int>& y) {
    if (y.size() > 31) throw config_error("map_loss: at most 31 items supported");
    std::uint32_t mask = 0;
    for (size_t p = 0; p < y.size(); ++p) {
        if (y[p] != 0 && y[p] != 1) throw config_error("map_loss: labeling must be binary");
        if (y[p]) mask |= (1u << p);
    }
    return mask;
}

}  // namespace

double map_loss(const Permutation& s, const std::vector<int>& y) {
    if (y.size() != s.positions.size())
        throw config_error("map_loss: labeling length differs from permutation size");
    return map_loss(s, to_mask(y));
}

double map_loss(const Permutation& s, std::uint32_t y) {
    const int r = s.size();
    if (y == 0) throw config_error("map_loss: labeling has no relevant item");
    // relevant flags indexed by position
    std::vector<char> rel_at(r + 1, 0);
    int h = 0;
    for (int p = 0; p < r; ++p)
        if ((y >> p) & 1u) {
            rel_at[s.positions[p]] = 1;
            ++h;
        }
    double sum = 0.0;
    int seen = 0;
    for (int pos = 1; pos <= r; ++pos) {
        if (!rel_at[pos]) continue;
        ++seen;
        sum += static_cast<double>(seen) / pos;
    }
    return 1.0 - sum / h;
}

double map_loss_pairwise(const Permutation& s, std::uint32_t y) {
    const int r = s.size();
    if (y == 0) throw config_error("map_loss: labeling has no relevant item");
    int h = 0;
    double sum = 0.0;
    for (int p = 0; p < r; ++p) {
        if (!((y >> p) & 1u)) continue;
        ++h;
        for (int q = p; q < r; ++q)
            if ((y >> q) & 1u) sum += 1.0 / std::max(s.positions[p], s.positions[q]);
    }
    return 1.0 - sum / h;
}

LossMatrix map_loss_matrix(int r) {
    if (r < 2 || r > kMaxExplicitR)
        throw config_error("map_loss_matrix: r must be in 2.." + std::to_string(kMaxExplicitR));
    auto perms = enumerate_permutations(r);
    const Index m = (Index(1) << r) - 1;
    Matrix L(static_cast<Index>(perms.size()), m);
    for (size_t a = 0; a < perms.size(); ++a)
        for (Index y = 1; y <= m; ++y) L(a, y - 1) = map_loss(perms[a], static_cast<std::uint32_t>(y));
    LossMatrix out = make_loss_matrix(std::move(L));
    out.kind = LossKind::map;
    out.r = r;
    for (size_t a = 0; a < perms.size(); ++a) out.output_labels[a] = permutation_label(perms[a]);
    for (Index y = 1; y <= m; ++y) out.gt_labels[y - 1] = labeling_label(static_cast<std::uint32_t>(y), r);
    return out;
}

Matrix read_numeric_csv(const std::string& path, const char* what) {
    std::string text = read_text_file(path);
    std::istringstream in(text);
    std::string line;
    std::vector<std::vector<double>> rows;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        auto cells = split(line, ',');
        std::vector<double> row;
        for (size_t c = 0; c < cells.size(); ++c) {
            double v;
            if (!parse_real(cells[c], v))
                throw config_error(std::string(what) + ": row " + std::to_string(lineno) +
                                   ", column " + std::to_string(c + 1) + ": malformed value '" +
                                   trim(cells[c]) + "'");
            if (!std::isfinite(v))
                throw config_error(std::string(what) + ": row " + std::to_string(lineno) +
                                   ", column " + std::to_string(c + 1) + ": non-finite value");
            row.push_back(v);
        }
        if (!rows.empty() && row.size() != rows.front().size())
            throw config_error(std::string(what) + ": row " + std::to_string(lineno) + " has " +
                               std::to_string(row.size()) + " columns, expected " +
                               std::to_string(rows.front().size()));
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw config_error(std::string(what) + ": empty file " + path);
    Matrix a(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
    for (size_t r = 0; r < rows.size(); ++r)
        for (size_t c = 0; c < rows[r].size(); ++c) a(r, c) = rows[r][c];
    return a;
}

LossMatrix load_loss_matrix(const std::string& path) {
    Matrix L = read_numeric_csv(path, "loss CSV");
    for (Index r = 0; r < L.rows(); ++r)
        for (Index c = 0; c < L.cols(); ++c)
            if (L(r, c) < 0.0)
                throw config_error("loss CSV: row " + std::to_string(r + 1) + ", column " +
                                   std::to_string(c + 1) + ": negative entry");
    return make_loss_matrix(std::move(L));
}

void write_numeric_csv(const std::string& path, const Matrix& a) {
    std::string out;
    for (Index r = 0; r < a.rows(); ++r) {
        for (Index c = 0; c < a.cols(); ++c) out += (c ? "," : "") + format_real(a(r, c));
        out += "\n";
    }
    write_text_file(path, out);
}

}  // namespace calibrax
