#pragma once

// Matrix files: CSV (one row per line, comma-separated decimals) or JSON
// {"rows": N, "cols": M, "data": [row-major values]}.

#include "xbarmap/types.hpp"

#include <nlohmann/json.hpp>

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace xbar::io {

class FormatError : public std::runtime_error {
public:
    FormatError(const std::string& source, int line, int field, const std::string& what)
        : std::runtime_error(describe(source, line, field, what)), line_(line), field_(field) {}
    [[nodiscard]] int line() const { return line_; }
    [[nodiscard]] int field() const { return field_; }

private:
    static std::string describe(const std::string& source, int line, int field, const std::string& what) {
        std::ostringstream os;
        os << source;
        if (line > 0) os << ':' << line;
        if (field > 0) os << " field " << field;
        os << ": " << what;
        return os.str();
    }
    int line_;
    int field_;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline double parse_number(std::string_view text, const std::string& source, int line, int field) {
    text = trim(text);
    if (!text.empty() && text.front() == '+') text.remove_prefix(1);
    double v = 0.0;
    const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (text.empty() || ec != std::errc() || end != text.data() + text.size()) {
        throw FormatError(source, line, field, "not a number: '" + std::string(text) + "'");
    }
    if (!std::isfinite(v)) throw FormatError(source, line, field, "non-finite value");
    return v;
}

inline std::string format_number(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

} // namespace detail

/// Blank lines are skipped; every other line must have the same field count.
inline Matrix parse_csv(std::istream& in, const std::string& source = "<csv>") {
    std::vector<std::vector<double>> rows;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::trim(line).empty()) continue;
        std::vector<double> row;
        std::string_view rest(line);
        int field = 0;
        while (true) {
            const auto comma = rest.find(',');
            row.push_back(detail::parse_number(rest.substr(0, comma), source, lineno, ++field));
            if (comma == std::string_view::npos) break;
            rest.remove_prefix(comma + 1);
        }
        if (!rows.empty() && row.size() != rows.front().size()) {
            throw FormatError(source, lineno, 0,
                              "expected " + std::to_string(rows.front().size()) + " fields, found " +
                                  std::to_string(row.size()));
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw FormatError(source, 0, 0, "no data");
    Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
    }
    return m;
}

inline Matrix matrix_from_json(const nlohmann::json& j, const std::string& source = "<json>") {
    if (!j.is_object()) throw FormatError(source, 0, 0, "expected an object with rows, cols, data");
    for (const char* key : {"rows", "cols", "data"}) {
        if (!j.contains(key)) throw FormatError(source, 0, 0, std::string("missing field '") + key + "'");
    }
    if (!j["rows"].is_number_integer() || !j["cols"].is_number_integer()) {
        throw FormatError(source, 0, 0, "rows and cols must be integers");
    }
    const auto n = j["rows"].get<long long>();
    const auto m = j["cols"].get<long long>();
    const auto& data = j["data"];
    if (n < 1 || m < 1) throw FormatError(source, 0, 0, "rows and cols must be positive");
    if (!data.is_array()) throw FormatError(source, 0, 0, "'data' must be an array");
    if (static_cast<long long>(data.size()) != n * m) {
        throw FormatError(source, 0, 0,
                          "rows*cols = " + std::to_string(n * m) + " but data has " + std::to_string(data.size()) +
                              " entries");
    }
    Matrix out(n, m);
    for (long long k = 0; k < n * m; ++k) {
        const auto& v = data[static_cast<std::size_t>(k)];
        if (!v.is_number()) throw FormatError(source, 0, static_cast<int>(k + 1), "'data' entry is not a number");
        out(k / m, k % m) = v.get<double>();
    }
    return out;
}

inline nlohmann::json matrix_to_json(const Matrix& m) {
    nlohmann::json data = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
    }
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError(path.string(), 0, 0, "cannot open file");
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(path.string(), 0, 0, e.what());
    }
}

/// JSON when the extension is .json, CSV otherwise.
inline Matrix load_matrix(const std::filesystem::path& path) {
    if (path.extension() == ".json") return matrix_from_json(read_json_file(path), path.string());
    std::ifstream in(path);
    if (!in) throw FormatError(path.string(), 0, 0, "cannot open file");
    return parse_csv(in, path.string());
}

/// Shortest round-trip decimal representation, so save -> load is exact.
inline void write_csv(std::ostream& out, const Matrix& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            if (j) out << ',';
            out << detail::format_number(m(i, j));
        }
        out << '\n';
    }
}

inline void save_matrix(const std::filesystem::path& path, const Matrix& m) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    if (path.extension() == ".json") {
        out << matrix_to_json(m).dump() << '\n';
    } else {
        write_csv(out, m);
    }
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

} // namespace xbar::io
