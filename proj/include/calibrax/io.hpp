#pragma once

#include <string>
#include <vector>

namespace calibrax {

// Shortest round-trip decimal form; "inf" / "-inf" / "nan" for non-finite values.
std::string format_real(double x);

// Strict parse of a whole token. Accepts "inf", "-inf", "nan".
bool parse_real(const std::string& token, double& out);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

std::vector<std::string> split(const std::string& s, char sep);
std::string trim(const std::string& s);

// Simple table with a header row; '#' lines are collected as comments.
struct Table {
    std::vector<std::string> comments;
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
};

Table parse_table_csv(const std::string& text);
std::string format_table_csv(const Table& t);

}  // namespace calibrax
