#include "calibrax/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "calibrax/error.hpp"

namespace calibrax {

std::string format_real(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    if (x == 0.0) return "0";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, res.ptr);
}

bool parse_real(const std::string& token, double& out) {
    std::string t = trim(token);
    if (t.empty()) return false;
    if (t == "inf" || t == "+inf") {
        out = INFINITY;
        return true;
    }
    if (t == "-inf") {
        out = -INFINITY;
        return true;
    }
    if (t == "nan") {
        out = NAN;
        return true;
    }
    const char* b = t.data();
    const char* e = t.data() + t.size();
    if (*b == '+') ++b;
    auto res = std::from_chars(b, e, out);
    return res.ec == std::errc() && res.ptr == e;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::io, "cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::io, "cannot write " + path);
    out << text;
    if (!out) throw Error(ErrorKind::io, "write failed for " + path);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

std::string trim(const std::string& s) {
    size_t b = 0, e = s.size();
    while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
    while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
    return s.substr(b, e - b);
}

Table parse_table_csv(const std::string& text) {
    Table t;
    std::istringstream in(text);
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty()) continue;
        if (line[0] == '#') {
            t.comments.push_back(line);
            continue;
        }
        auto cells = split(line, ',');
        if (t.header.empty()) {
            for (auto& c : cells) t.header.push_back(trim(c));
            continue;
        }
        if (cells.size() != t.header.size())
            throw Error(ErrorKind::io, "table line " + std::to_string(lineno) + ": expected " +
                                           std::to_string(t.header.size()) + " fields");
        std::vector<double> row;
        for (size_t c = 0; c < cells.size(); ++c) {
            double v;
            if (!parse_real(cells[c], v))
                throw Error(ErrorKind::io, "table line " + std::to_string(lineno) + ", column " +
                                               std::to_string(c + 1) + ": bad number '" + cells[c] +
                                               "'");
            row.push_back(v);
        }
        t.rows.push_back(std::move(row));
    }
    if (t.header.empty()) throw Error(ErrorKind::io, "table has no header");
    return t;
}

std::string format_table_csv(const Table& t) {
    std::string out;
    for (auto& c : t.comments) out += c + "\n";
    for (size_t i = 0; i < t.header.size(); ++i) out += (i ? "," : "") + t.header[i];
    out += "\n";
    for (auto& row : t.rows) {
        for (size_t i = 0; i < row.size(); ++i) out += (i ? "," : "") + format_real(row[i]);
        out += "\n";
    }
    return out;
}

}  // namespace calibrax
